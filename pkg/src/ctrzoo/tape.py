"""Float64 math kernel: pure array ops, a reverse-mode tape, parameter storage.

Everything downstream (embeddings, feature interactions, the training loop) is
built from what lives here. Values are plain numpy float64 arrays. The tape
records whole-tensor operations in creation order, so replaying it backward is
a single reverse sweep and its length scales with the number of operations,
not with array entries. Batched operands carry the batch on axis 0.

Gradient buffers on `ParameterStore` slots are accumulation-only: `backward`
adds into them and never clears them, so calling it twice without
`zero_grads` doubles every buffer exactly. That property is what the
finite-difference checker and the optimizer rely on.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import ContractError, DomainError, NumericError, ShapeError

__all__ = [
    "inner",
    "hadamard",
    "softmax_weights",
    "relu",
    "sigmoid",
    "Node",
    "Tape",
    "ParameterStore",
    "finite_diff_check",
    "xavier_uniform",
]


# ---------------------------------------------------------------------------
# pure value-level operations


def _as_f64(x):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite input value")
    return arr


def inner(u, v):
    """Dot product of two equal-length 1-D vectors, as a float."""
    u = _as_f64(u)
    v = _as_f64(v)
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"inner expects 1-D vectors, got {u.shape} and {v.shape}")
    if u.shape != v.shape:
        raise ShapeError(f"inner length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(np.dot(u, v))


def hadamard(u, v):
    """Element-wise product of two equal-length 1-D vectors."""
    u = _as_f64(u)
    v = _as_f64(v)
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"hadamard expects 1-D vectors, got {u.shape} and {v.shape}")
    if u.shape != v.shape:
        raise ShapeError(f"hadamard length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return u * v


def softmax_weights(scores):
    """Normalized exponential weights of a score vector.

    Uses max-subtraction so large scores cannot overflow. The output sums
    to one and is invariant (to rounding) under a constant shift of the
    scores.
    """
    arr = _as_f64(scores)
    if arr.ndim != 1:
        raise ShapeError(f"softmax_weights expects a 1-D score vector, got {arr.shape}")
    if arr.size == 0:
        raise DomainError("softmax_weights of an empty score vector")
    w = np.exp(arr - arr.max())
    return w / w.sum()


def relu(x):
    """max(x, 0), element-wise; scalar in, scalar out."""
    arr = _as_f64(x)
    out = np.maximum(arr, 0.0)
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    """Logistic function, numerically stable over the full float64 range."""
    arr = np.atleast_1d(_as_f64(x))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.asarray(x).ndim == 0:
        return float(out[0])
    return out.reshape(np.shape(x))


def xavier_uniform(rng, shape, fan_in, fan_out):
    """Uniform(-a, a) sample with a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise DomainError(f"xavier fans must be positive, got ({fan_in}, {fan_out})")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# parameter storage


class _Slot:
    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name, value, trainable):
        self.name = name
        self.value = value
        self.trainable = trainable
        self.grad = np.zeros_like(value) if trainable else None


class ParameterStore:
    """Named float64 parameter slots with matching gradient buffers.

    Slots are created once (duplicate names are an error) and iterate in
    insertion order, which keeps initialization, regularization, and
    optimizer updates bit-reproducible for a given seed.
    """

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.default_rng([int(seed), 3])
        self._slots: dict[str, _Slot] = {}

    # -- creation ----------------------------------------------------------

    def _insert(self, name, value, trainable):
        if name in self._slots:
            raise ContractError(f"duplicate parameter slot {name!r}")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite initial value for slot {name!r}")
        slot = _Slot(name, value, trainable)
        self._slots[name] = slot
        return slot.value

    def add_value(self, name, value, trainable=True):
        return self._insert(name, value, trainable)

    def add_zeros(self, name, shape, trainable=True):
        return self._insert(name, np.zeros(shape), trainable)

    def add_constant(self, name, shape, fill, trainable=True):
        return self._insert(name, np.full(shape, float(fill)), trainable)

    def add_xavier(self, name, shape, fans=None, trainable=True):
        if fans is None:
            shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
            if len(shape) < 2:
                fans = (int(np.prod(shape)), 1)
            else:
                fans = (int(np.prod(shape[:-1])), int(shape[-1]))
        return self._insert(name, xavier_uniform(self.rng, shape, *fans), trainable)

    # -- access ------------------------------------------------------------

    def slot(self, name) -> _Slot:
        try:
            return self._slots[name]
        except KeyError:
            raise ContractError(f"unknown parameter slot {name!r}") from None

    def value(self, name):
        return self.slot(name).value

    def grad(self, name):
        slot = self.slot(name)
        if slot.grad is None:
            raise ContractError(f"slot {name!r} is frozen and has no gradient buffer")
        return slot.grad

    def set_value(self, name, value):
        slot = self.slot(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != slot.value.shape:
            raise ShapeError(
                f"set_value shape mismatch for {name!r}: {value.shape} vs {slot.value.shape}"
            )
        slot.value[...] = value

    def __contains__(self, name):
        return name in self._slots

    def names(self):
        return list(self._slots)

    def slots(self):
        return list(self._slots.values())

    def trainable_slots(self):
        return [s for s in self._slots.values() if s.trainable]

    # -- bookkeeping -------------------------------------------------------

    def zero_grads(self):
        for slot in self._slots.values():
            if slot.grad is not None:
                slot.grad[...] = 0.0

    def param_count(self, trainable_only=True):
        slots = self.trainable_slots() if trainable_only else self.slots()
        return int(sum(s.value.size for s in slots))

    def sq_norm(self):
        """Sum of squared entries over all trainable slots."""
        return float(sum(np.sum(s.value * s.value) for s in self.trainable_slots()))

    def snapshot(self):
        return {name: slot.value.copy() for name, slot in self._slots.items()}

    def restore(self, snap):
        for name, value in snap.items():
            self.set_value(name, value)

    # -- serialization -----------------------------------------------------

    def state_dict(self):
        return {
            name: {
                "shape": list(slot.value.shape),
                "trainable": slot.trainable,
                "values": slot.value.reshape(-1).tolist(),
            }
            for name, slot in self._slots.items()
        }

    def save(self, path):
        payload = {"format": "ctrzoo-params-v1", "seed": self.seed, "slots": self.state_dict()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, allow_nan=False)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != "ctrzoo-params-v1":
            raise DomainError(f"{path}: not a parameter checkpoint")
        store = cls(seed=payload.get("seed", 0))
        for name, rec in payload["slots"].items():
            arr = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
            store._insert(name, arr, rec["trainable"])
        return store


# ---------------------------------------------------------------------------
# reverse-mode tape


class Node:
    """One value on the tape plus the closure that pushes its gradient back."""

    __slots__ = ("value", "grad", "_backward")

    def __init__(self, value, backward=None):
        self.value = value
        self.grad = None
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape


def _bump(node, g):
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


class Tape:
    """Ordered record of whole-tensor operations for one forward pass.

    Operations append nodes in topological order by construction, so
    `backward` is a single reversed sweep that touches each node once.
    Build a fresh tape per forward pass; nodes alias parameter-store
    values, so a tape is only valid until those values change.
    """

    def __init__(self):
        self._nodes: list[Node] = []

    def __len__(self):
        return len(self._nodes)

    def _emit(self, value, backward=None):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError("non-finite value produced on tape")
        node = Node(value, backward)
        self._nodes.append(node)
        return node

    # -- leaves ------------------------------------------------------------

    def constant(self, value):
        return self._emit(value)

    def parameter(self, store, name):
        """Whole slot as a leaf; gradient accumulates into the slot buffer."""
        slot = store.slot(name)

        def backward(g):
            if slot.grad is not None:
                slot.grad += g

        return self._emit(slot.value, backward)

    def row(self, store, name, i):
        """Row `i` of a 2-D slot as an unbatched leaf."""
        slot = store.slot(name)
        i = int(i)

        def backward(g):
            if slot.grad is not None:
                slot.grad[i] += g

        return self._emit(slot.value[i], backward)

    def element(self, store, name, index):
        """Single entry of a slot as a 0-d leaf."""
        slot = store.slot(name)
        index = tuple(int(k) for k in np.atleast_1d(index))

        def backward(g):
            if slot.grad is not None:
                slot.grad[index] += g

        return self._emit(np.asarray(slot.value[index]), backward)

    def lookup(self, store, name, indices):
        """Batched row gather from a 2-D slot: indices (B,) -> value (B, d).

        The backward pass scatters with `np.add.at`, so repeated indices
        inside a batch accumulate rather than overwrite.
        """
        slot = store.slot(name)
        idx = np.asarray(indices)
        if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
            raise ShapeError("lookup indices must be a 1-D integer array")
        if idx.size and (idx.min() < 0 or idx.max() >= slot.value.shape[0]):
            raise DomainError(
                f"lookup index out of range for slot {name!r} "
                f"(rows={slot.value.shape[0]})"
            )
        idx = idx.copy()

        def backward(g):
            if slot.grad is not None:
                np.add.at(slot.grad, idx, g)

        return self._emit(slot.value[idx], backward)

    # -- arithmetic --------------------------------------------------------

    def add(self, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")

        def backward(g):
            _bump(a, g)
            _bump(b, g)

        return self._emit(a.value + b.value, backward)

    def sub(self, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")

        def backward(g):
            _bump(a, g)
            _bump(b, -g)

        return self._emit(a.value - b.value, backward)

    def mul(self, a, b):
        """Element-wise (Hadamard) product of same-shape nodes."""
        if a.value.shape != b.value.shape:
            raise ShapeError(f"mul shape mismatch: {a.value.shape} vs {b.value.shape}")

        def backward(g):
            _bump(a, g * b.value)
            _bump(b, g * a.value)

        return self._emit(a.value * b.value, backward)

    def scale_const(self, a, c):
        c = float(c)

        def backward(g):
            _bump(a, g * c)

        return self._emit(a.value * c, backward)

    def scale_by(self, x, s):
        """x * s where s is a 0-d node; broadcasts over all of x."""
        if s.value.shape != ():
            raise ShapeError(f"scale_by scale must be 0-d, got {s.value.shape}")

        def backward(g):
            _bump(x, g * s.value)
            _bump(s, np.sum(g * x.value))

        return self._emit(x.value * s.value, backward)

    def shift_by(self, x, s):
        """x + s where s is a 0-d node."""
        if s.value.shape != ():
            raise ShapeError(f"shift_by shift must be 0-d, got {s.value.shape}")

        def backward(g):
            _bump(x, g)
            _bump(s, np.sum(g))

        return self._emit(x.value + s.value, backward)

    def inner(self, u, v):
        """Dot product, batched or not.

        (B,d)x(B,d) -> (B,) row-wise; (B,d)x(d,) and (d,)x(B,d) -> (B,);
        (d,)x(d,) -> 0-d.
        """
        ushape, vshape = u.value.shape, v.value.shape
        if len(ushape) == 2 and len(vshape) == 2:
            if ushape != vshape:
                raise ShapeError(f"inner shape mismatch: {ushape} vs {vshape}")

            def backward(g):
                _bump(u, g[:, None] * v.value)
                _bump(v, g[:, None] * u.value)

            return self._emit(np.einsum("bd,bd->b", u.value, v.value), backward)
        if len(ushape) == 2 and len(vshape) == 1:
            if ushape[1] != vshape[0]:
                raise ShapeError(f"inner shape mismatch: {ushape} vs {vshape}")

            def backward(g):
                _bump(u, g[:, None] * v.value[None, :])
                _bump(v, g @ u.value)

            return self._emit(u.value @ v.value, backward)
        if len(ushape) == 1 and len(vshape) == 2:
            return self.inner(v, u)
        if len(ushape) == 1 and len(vshape) == 1:
            if ushape != vshape:
                raise ShapeError(f"inner shape mismatch: {ushape} vs {vshape}")

            def backward(g):
                _bump(u, g * v.value)
                _bump(v, g * u.value)

            return self._emit(np.asarray(np.dot(u.value, v.value)), backward)
        raise ShapeError(f"inner does not support shapes {ushape} and {vshape}")

    def scale_rows(self, s, x):
        """Row-wise scaling: s (B,) times x (B, d) -> (B, d)."""
        if s.value.ndim != 1 or x.value.ndim != 2 or s.value.shape[0] != x.value.shape[0]:
            raise ShapeError(f"scale_rows shapes: {s.value.shape}, {x.value.shape}")

        def backward(g):
            _bump(s, np.sum(g * x.value, axis=1))
            _bump(x, g * s.value[:, None])

        return self._emit(x.value * s.value[:, None], backward)

    def scale_vector(self, s, v):
        """Outer product of a batch scalar and a fixed vector: (B,) x (d,) -> (B, d)."""
        if s.value.ndim != 1 or v.value.ndim != 1:
            raise ShapeError(f"scale_vector shapes: {s.value.shape}, {v.value.shape}")

        def backward(g):
            _bump(s, g @ v.value)
            _bump(v, g.T @ s.value)

        return self._emit(s.value[:, None] * v.value[None, :], backward)

    def linear_map(self, m, x):
        """Apply matrix m (p, q) to x: (B, q) -> (B, p) or (q,) -> (p,)."""
        if m.value.ndim != 2:
            raise ShapeError(f"linear_map matrix must be 2-D, got {m.value.shape}")
        p, q = m.value.shape
        if x.value.ndim == 2:
            if x.value.shape[1] != q:
                raise ShapeError(f"linear_map shapes: {m.value.shape}, {x.value.shape}")

            def backward(g):
                _bump(x, g @ m.value)
                _bump(m, g.T @ x.value)

            return self._emit(x.value @ m.value.T, backward)
        if x.value.ndim == 1:
            if x.value.shape[0] != q:
                raise ShapeError(f"linear_map shapes: {m.value.shape}, {x.value.shape}")

            def backward(g):
                _bump(x, m.value.T @ g)
                _bump(m, np.outer(g, x.value))

            return self._emit(m.value @ x.value, backward)
        raise ShapeError(f"linear_map does not support input shape {x.value.shape}")

    def matmul(self, x, w):
        """Batched affine core: x (B, p) @ w (p, q) -> (B, q)."""
        if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
            raise ShapeError(f"matmul shapes: {x.value.shape}, {w.value.shape}")

        def backward(g):
            _bump(x, g @ w.value.T)
            _bump(w, x.value.T @ g)

        return self._emit(x.value @ w.value, backward)

    def add_bias(self, x, b):
        """x (B, m) + b (m,) with broadcast over the batch."""
        if x.value.ndim != 2 or b.value.ndim != 1 or x.value.shape[1] != b.value.shape[0]:
            raise ShapeError(f"add_bias shapes: {x.value.shape}, {b.value.shape}")

        def backward(g):
            _bump(x, g)
            _bump(b, g.sum(axis=0))

        return self._emit(x.value + b.value[None, :], backward)

    # -- nonlinearities ----------------------------------------------------

    def relu(self, x):
        mask = x.value > 0

        def backward(g):
            _bump(x, g * mask)

        return self._emit(np.where(mask, x.value, 0.0), backward)

    def sigmoid(self, x):
        out = sigmoid(x.value)
        out = np.asarray(out)

        def backward(g):
            _bump(x, g * out * (1.0 - out))

        return self._emit(out, backward)

    def log(self, x):
        if np.any(x.value <= 0):
            raise NumericError("log of a non-positive tape value")

        def backward(g):
            _bump(x, g / x.value)

        return self._emit(np.log(x.value), backward)

    def clip(self, x, lo, hi):
        """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
        inside = (x.value > lo) & (x.value < hi)

        def backward(g):
            _bump(x, g * inside)

        return self._emit(np.clip(x.value, lo, hi), backward)

    def softmax(self, x):
        """Softmax over the last axis of a 1-D or 2-D node."""
        if x.value.ndim not in (1, 2):
            raise ShapeError(f"softmax expects 1-D or 2-D, got {x.value.shape}")
        if x.value.shape[-1] == 0:
            raise DomainError("softmax over an empty axis")
        shifted = x.value - x.value.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-1, keepdims=True)

        def backward(g):
            dot = np.sum(g * p, axis=-1, keepdims=True)
            _bump(x, p * (g - dot))

        return self._emit(p, backward)

    def dropout(self, x, rate, rng):
        """Inverted dropout: zero with probability `rate`, scale kept by 1/(1-rate)."""
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
        if rate == 0.0:
            return x
        mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)

        def backward(g):
            _bump(x, g * mask)

        return self._emit(x.value * mask, backward)

    # -- shape plumbing ----------------------------------------------------

    def stack_last(self, nodes):
        """Stack k same-shape nodes along a new trailing axis."""
        nodes = list(nodes)
        if not nodes:
            raise DomainError("stack_last of no nodes")
        shape = nodes[0].value.shape
        for n in nodes:
            if n.value.shape != shape:
                raise ShapeError("stack_last nodes must share a shape")

        def backward(g):
            for k, n in enumerate(nodes):
                _bump(n, g[..., k])

        return self._emit(np.stack([n.value for n in nodes], axis=-1), backward)

    def concat_last(self, nodes):
        """Concatenate 2-D nodes along the trailing axis."""
        nodes = list(nodes)
        if not nodes:
            raise DomainError("concat_last of no nodes")
        widths = []
        for n in nodes:
            if n.value.ndim != 2 or n.value.shape[0] != nodes[0].value.shape[0]:
                raise ShapeError("concat_last expects 2-D nodes with equal batch size")
            widths.append(n.value.shape[1])
        offsets = np.cumsum([0] + widths)

        def backward(g):
            for k, n in enumerate(nodes):
                _bump(n, g[:, offsets[k] : offsets[k + 1]])

        return self._emit(np.concatenate([n.value for n in nodes], axis=1), backward)

    def column(self, x, j):
        """Column j of a 2-D node as a (B,) node."""
        if x.value.ndim != 2:
            raise ShapeError(f"column expects a 2-D node, got {x.value.shape}")
        j = int(j)

        def backward(g):
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            x.grad[:, j] += g

        return self._emit(x.value[:, j].copy(), backward)

    def squeeze_last(self, x):
        """(B, 1) -> (B,)."""
        if x.value.ndim != 2 or x.value.shape[1] != 1:
            raise ShapeError(f"squeeze_last expects (B, 1), got {x.value.shape}")

        def backward(g):
            _bump(x, g[:, None])

        return self._emit(x.value[:, 0].copy(), backward)

    def sum_all(self, x):
        def backward(g):
            _bump(x, np.broadcast_to(g, x.value.shape))

        return self._emit(np.asarray(x.value.sum()), backward)

    def mean_all(self, x):
        size = x.value.size
        if size == 0:
            raise DomainError("mean of an empty node")

        def backward(g):
            _bump(x, np.broadcast_to(g / size, x.value.shape))

        return self._emit(np.asarray(x.value.mean()), backward)

    # -- reverse sweep -----------------------------------------------------

    def backward(self, root):
        """Accumulate d(root)/d(slot) into every store gradient buffer.

        `root` must be a 0-d node on this tape. Node-local gradients are
        reset here; store buffers are not (accumulation is the caller's
        contract, cleared via `ParameterStore.zero_grads`).
        """
        if root.value.shape != ():
            raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f, store, eps=1e-5):
    """Compare store gradient buffers against central differences of `f`.

    `f` is a deterministic zero-argument callable returning the scalar being
    differentiated, re-reading current store values on every call. The caller
    is expected to have populated the gradient buffers (zero_grads, forward,
    backward) before invoking this. Returns the maximum over all trainable
    entries of |analytic - central| / max(1, |central|).
    """
    if eps <= 0:
        raise DomainError(f"finite difference step must be positive, got {eps}")
    worst = 0.0
    for slot in store.trainable_slots():
        flat = slot.value.reshape(-1)
        gflat = slot.grad.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            f_plus = float(f())
            flat[k] = saved - eps
            f_minus = float(f())
            flat[k] = saved
            central = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[k] - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst
