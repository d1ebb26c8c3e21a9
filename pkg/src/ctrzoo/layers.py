"""Aggregation of per-field interaction outputs and the transform stack.

Aggregation turns the list of FI outputs into one tensor: concatenation,
plain sum, mean, or a field combination (a trainable weighted sum). The
transform stack is a standard MLP; zero hidden layers make it a single
affine map and is how the linear heads are expressed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

AGGREGATIONS = ("concat", "sum", "mean", "field_combination")


@dataclass
class AggregationSpec:
    kind: str
    weights: np.ndarray | None = None  # field_combination only

    def __post_init__(self):
        if self.kind not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.kind!r}")


def aggregate(spec, vectors):
    """Value-level aggregation of a list of 1-D vectors."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vectors:
        raise DomainError("aggregate of an empty list")
    if spec.kind == "concat":
        return np.concatenate(vectors)
    length = vectors[0].shape[0]
    for v in vectors:
        if v.shape != (length,):
            raise ShapeError("aggregation requires equal-length vectors")
    if spec.kind == "sum":
        return np.sum(vectors, axis=0)
    if spec.kind == "mean":
        return np.mean(vectors, axis=0)
    weights = np.asarray(spec.weights, dtype=np.float64)
    if weights.shape != (len(vectors),):
        raise ShapeError(
            f"field_combination needs one weight per vector, got {weights.shape} "
            f"for {len(vectors)} vectors"
        )
    return sum(w * v for w, v in zip(weights, vectors))


def sum_nodes(tape, nodes):
    if not nodes:
        raise DomainError("sum of no nodes")
    total = nodes[0]
    for node in nodes[1:]:
        total = tape.add(total, node)
    return total


def combine_fields_nodes(tape, nodes, weight_elems):
    """Trainable weighted sum: one 0-d weight node per field vector."""
    if len(weight_elems) != len(nodes):
        raise ShapeError("field_combination needs one weight per vector")
    return sum_nodes(tape, [tape.scale_by(v, w) for v, w in zip(nodes, weight_elems)])


# ---------------------------------------------------------------------------
# transform stack


@dataclass(frozen=True)
class MLPSpec:
    """Affine chain with ReLU between layers; empty hidden = one affine map."""

    input_dim: int
    hidden: tuple = (32, 32, 32)
    out_dim: int = 1
    dropout: float = 0.0
    residual: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.out_dim < 1:
            raise ConfigError("mlp dimensions must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"mlp hidden widths must be positive, got {self.hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def widths(self):
        return (self.input_dim,) + tuple(self.hidden) + (self.out_dim,)

    @property
    def depth(self):
        return len(self.hidden) + 1

    def weight_count(self, include_bias=False):
        ws = self.widths
        total = sum(a * b for a, b in zip(ws[:-1], ws[1:]))
        if include_bias:
            total += sum(ws[1:])
        return total


def add_mlp_slots(store, spec, prefix="st."):
    ws = spec.widths
    for k, (a, b) in enumerate(zip(ws[:-1], ws[1:])):
        store.add_xavier(f"{prefix}l{k}.w", (a, b), fans=(a, b))
        store.add_zeros(f"{prefix}l{k}.b", (b,))


def mlp_nodes(tape, spec, slots, x, *, prefix="st.", training=False, drop_rng=None):
    """Run the stack on a (B, input_dim) node; returns (B, out_dim)."""
    if x.value.ndim != 2 or x.value.shape[1] != spec.input_dim:
        raise ShapeError(f"mlp expects (B, {spec.input_dim}), got {x.value.shape}")
    h = x
    for k in range(spec.depth):
        pre = tape.add_bias(
            tape.matmul(h, slots.whole(f"{prefix}l{k}.w")), slots.whole(f"{prefix}l{k}.b")
        )
        if k == spec.depth - 1:
            return pre
        act = tape.relu(pre)
        if spec.residual and act.value.shape == h.value.shape:
            act = tape.add(act, h)
        if training and spec.dropout > 0.0:
            if drop_rng is None:
                raise DomainError("training-mode dropout needs a random generator")
            act = tape.dropout(act, spec.dropout, drop_rng)
        h = act
    return h


def mlp_forward(spec, weights, x):
    """Value-level evaluation (no dropout): weights is a list of (W, b) pairs."""
    x = np.asarray(x, dtype=np.float64)
    if len(weights) != spec.depth:
        raise ShapeError(f"expected {spec.depth} layers of weights, got {len(weights)}")
    h = np.atleast_2d(x)
    for k, (w, b) in enumerate(weights):
        prev = h
        h = prev @ w + b
        if k < spec.depth - 1:
            h = np.maximum(h, 0.0)
            if spec.residual and h.shape == prev.shape:
                h = h + prev
    return h if x.ndim == 2 else h[0]
