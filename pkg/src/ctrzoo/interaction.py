"""Feature-interaction layer: pairwise terms, neighborhoods, model catalog.

Every model here scores a record by combining per-field embedding vectors
through the same two-slot pattern: a similarity S(f_i, f_j) scaling a
utility U(f_i, f_j), summed over a neighborhood of fields. Choosing S, U,
and the neighborhood reproduces the classical architectures; `fi_catalog`
holds those choices and `fi_forward` evaluates any of them on a tape.

Conventions: "others" neighborhoods sum over ordered pairs j != i, so
symmetric similarities count each unordered pair twice (the model layer
compensates where the classical form sums i < j). Grid configurations
produce one vector per ordered pair, including i == j. Softmax-normalized
similarities renormalize per target field; attention-pooled ones (AFM)
renormalize jointly over all ordered pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CatalogError, ContractError, DomainError, ShapeError

MODEL_NAMES = (
    "LR",
    "FM",
    "FFM",
    "FwFM",
    "IPNN",
    "DCN",
    "DeepFM-deep",
    "CIN2",
    "AFM",
    "AutoInt",
    "SAM1",
    "SAM2_A",
    "SAM2_E",
    "SAM3_A",
    "SAM3_E",
)


# ---------------------------------------------------------------------------
# similarity / utility value objects (parameters are tape nodes)


@dataclass
class Similarity:
    """S(f_i, v): how much the pair matters.

    kind: "one" (constant 1), "constant" (fixed value), "inner" (dot
    product), "proj_k" (<f_i, K v>), "proj_qk" (<Q f_i, K v>), "afm"
    (h . relu(W (f_i * v) + b)). `softmax` renormalizes scores over the
    neighborhood inside `b_sum`.
    """

    kind: str = "inner"
    value: float = 1.0
    q: object = None
    k: object = None
    afm_w: object = None
    afm_h: object = None
    afm_b: object = None
    softmax: bool = False

    def score(self, tape, f_i, v):
        if self.kind == "one":
            return None
        if self.kind == "constant":
            return tape.constant(np.full(f_i.value.shape[:-1], self.value))
        if self.kind == "inner":
            return tape.inner(f_i, v)
        if self.kind == "proj_k":
            return tape.inner(f_i, tape.linear_map(self.k, v))
        if self.kind == "proj_qk":
            return tape.inner(tape.linear_map(self.q, f_i), tape.linear_map(self.k, v))
        if self.kind == "afm":
            hidden = tape.relu(tape.add_bias(tape.linear_map(self.afm_w, tape.mul(f_i, v)), self.afm_b))
            return tape.inner(hidden, self.afm_h)
        raise CatalogError(f"unknown similarity kind {self.kind!r}")


@dataclass
class Utility:
    """U(f_i, v): what the pair contributes.

    kind: "one" (the similarity alone), "identity" (v itself), "scalar"
    (a 0-d weight node), "vector" (an unbatched weight vector), "hadamard"
    (f_i * v), "linear_map" (V v), "scaled_identity" (w * v),
    "projected_inner" (<p, f_i * v>, a per-record scalar).
    """

    kind: str = "one"
    node: object = None

    def value(self, tape, f_i, v):
        if self.kind == "one":
            return ("one", None)
        if self.kind == "identity":
            return ("batch", v)
        if self.kind == "scalar":
            return ("scalar", self.node)
        if self.kind == "vector":
            return ("vector", self.node)
        if self.kind == "hadamard":
            return ("batch", tape.mul(f_i, v))
        if self.kind == "linear_map":
            return ("batch", tape.linear_map(self.node, v))
        if self.kind == "scaled_identity":
            return ("batch", tape.scale_by(v, self.node))
        if self.kind == "projected_inner":
            return ("batch", tape.inner(tape.mul(f_i, v), self.node))
        raise CatalogError(f"unknown utility kind {self.kind!r}")


def _combine(tape, score, util):
    """score * utility with the right broadcasting op for each pairing."""
    tag, node = util
    if score is None:
        if tag == "one":
            raise ContractError("similarity 'one' with utility 'one' leaves nothing to emit")
        return node
    if tag == "one":
        return score
    if tag == "scalar":
        return tape.scale_by(score, node)
    if score.value.ndim == 0:
        return tape.scale_by(node, score)
    if tag == "vector":
        return tape.scale_vector(score, node)
    if node.value.ndim == 2:
        return tape.scale_rows(score, node)
    if node.value.shape == score.value.shape:
        return tape.mul(score, node)
    raise ShapeError(
        f"cannot combine score {score.value.shape} with utility {node.value.shape}"
    )


def _sum_nodes(tape, nodes):
    if not nodes:
        raise DomainError("empty neighborhood")
    total = nodes[0]
    for node in nodes[1:]:
        total = tape.add(total, node)
    return total


def _pick(tape, weights, k):
    """Entry k along the last axis of stacked softmax weights."""
    if weights.value.ndim == 2:
        return tape.column(weights, k)

    def backward(g, _w=weights, _k=k):
        if _w.grad is None:
            _w.grad = np.zeros_like(_w.value)
        _w.grad[_k] += g

    return tape._emit(np.asarray(weights.value[k]), backward)


def b_pair(tape, sim, util, f_i, v):
    """Single interaction term S(f_i, v) * U(f_i, v).

    A softmax-normalized similarity over one neighbor weighs it 1, so the
    result is just the utility.
    """
    if sim.softmax:
        util_val = util.value(tape, f_i, v)
        if util_val[0] == "one":
            return tape.constant(np.ones(f_i.value.shape[:-1]))
        return util_val[1]
    return _combine(tape, sim.score(tape, f_i, v), util.value(tape, f_i, v))


def b_sum(tape, sim, util, f_i, neighbors):
    """Neighborhood sum of interaction terms, with optional softmax weights."""
    neighbors = list(neighbors)
    if not neighbors:
        raise DomainError("b_sum needs a nonempty neighborhood")
    utils = [util.value(tape, f_i, v) for v in neighbors]
    if sim.softmax:
        scores = []
        for v in neighbors:
            s = sim.score(tape, f_i, v)
            if s is None:
                s = tape.constant(np.zeros(f_i.value.shape[:-1]))
            scores.append(s)
        weights = tape.softmax(tape.stack_last(scores))
        terms = [
            _combine(tape, _pick(tape, weights, k), utils[k]) for k in range(len(neighbors))
        ]
    else:
        terms = [
            _combine(tape, sim.score(tape, f_i, neighbors[k]), utils[k])
            for k in range(len(neighbors))
        ]
    return _sum_nodes(tape, terms)


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class FIConfig:
    """Which similarity, utility, and neighborhood a model's FI layer uses."""

    model: str
    similarity: str
    utility: str
    neighborhood: str  # "self" | "others" | "all" | "grid"
    softmax: bool = False
    pair_softmax: bool = False
    field_aware: bool = False
    self_product: bool = False  # grid hadamard reads f_i * f_i instead of f_i * f_j

    def without_softmax(self):
        return replace(self, softmax=False)


_CATALOG = {
    "LR": FIConfig("LR", "one", "identity", "self"),
    "FM": FIConfig("FM", "inner", "one", "others"),
    "FFM": FIConfig("FFM", "inner", "one", "others", field_aware=True),
    "FwFM": FIConfig("FwFM", "inner", "scalar_pair_sym", "others"),
    "IPNN": FIConfig("IPNN", "inner", "scalar_inner", "all"),
    "DCN": FIConfig("DCN", "one", "scaled_identity", "self"),
    "DeepFM-deep": FIConfig("DeepFM-deep", "one", "identity", "self"),
    "CIN2": FIConfig("CIN2", "inner", "scalar_pair", "all"),
    "AFM": FIConfig("AFM", "afm", "projected_inner", "others", pair_softmax=True),
    "AutoInt": FIConfig("AutoInt", "proj_qk", "linear_map", "all", softmax=True),
    "SAM1": FIConfig("SAM1", "one", "identity", "self"),
    "SAM2_A": FIConfig("SAM2_A", "inner", "vector_pair", "grid"),
    "SAM2_E": FIConfig("SAM2_E", "inner", "hadamard", "grid"),
    "SAM3_A": FIConfig("SAM3_A", "proj_k", "vector_pair", "all", softmax=True),
    "SAM3_E": FIConfig("SAM3_E", "proj_k", "hadamard", "all", softmax=True),
}


def fi_catalog(name):
    try:
        return _CATALOG[name]
    except KeyError:
        known = ", ".join(MODEL_NAMES)
        raise CatalogError(f"unknown model {name!r}; catalog has: {known}") from None


def sym_pair_index(i, j, n):
    """Position of unordered pair {i, j} in the flattened upper triangle."""
    if i == j:
        raise DomainError("no symmetric pair index for i == j")
    i, j = min(i, j), max(i, j)
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def ordered_pairs(n, upper_only=False):
    if upper_only:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    return [(i, j) for i in range(n) for j in range(n)]


# ---------------------------------------------------------------------------
# slot binding


class SlotNodes:
    """Memoizing view of store slots as tape nodes (one node per request key)."""

    def __init__(self, tape, store):
        self.tape = tape
        self.store = store
        self._whole = {}
        self._rows = {}
        self._elems = {}

    def whole(self, name):
        if name not in self._whole:
            self._whole[name] = self.tape.parameter(self.store, name)
        return self._whole[name]

    def row(self, name, i):
        key = (name, i)
        if key not in self._rows:
            self._rows[key] = self.tape.row(self.store, name, i)
        return self._rows[key]

    def elem(self, name, idx):
        key = (name, tuple(idx) if isinstance(idx, (tuple, list)) else (idx,))
        if key not in self._elems:
            self._elems[key] = self.tape.element(self.store, name, key[1])
        return self._elems[key]


# ---------------------------------------------------------------------------
# forward evaluation


def _neighborhood(kind, i, n):
    if kind == "self":
        return [i]
    if kind == "others":
        if n < 2:
            raise DomainError("an 'others' neighborhood needs at least two fields")
        return [j for j in range(n) if j != i]
    if kind == "all":
        return list(range(n))
    raise CatalogError(f"unknown neighborhood {kind!r}")


class _Builders:
    """Similarity and utility closures for one fi_forward call.

    Caches make the tape compact: symmetric scores and hadamard products
    are computed once per unordered pair, projections once per field.
    """

    def __init__(self, tape, cfg, slots, prefix, n):
        self.tape = tape
        self.cfg = cfg
        self.slots = slots
        self.prefix = prefix
        self.n = n
        self._inner = {}
        self._had = {}
        self._proj = {}
        self._theta_inner = {}

    def _projected(self, tag, mat_name, j, vec):
        key = (tag, j)
        if key not in self._proj:
            self._proj[key] = self.tape.linear_map(self.slots.whole(self.prefix + mat_name), vec)
        return self._proj[key]

    def score(self, i, j, f_i, v):
        kind = self.cfg.similarity
        if kind == "one":
            return None
        if kind == "inner":
            key = (min(i, j), max(i, j))
            if key not in self._inner:
                self._inner[key] = self.tape.inner(f_i, v)
            return self._inner[key]
        if kind == "proj_k":
            return self.tape.inner(f_i, self._projected("k", "k", j, v))
        if kind == "proj_qk":
            return self.tape.inner(
                self._projected("q", "q", i, f_i), self._projected("k", "k", j, v)
            )
        if kind == "afm":
            w = self.slots.whole(self.prefix + "attn_w")
            h = self.slots.whole(self.prefix + "attn_h")
            b = self.slots.whole(self.prefix + "attn_b")
            hidden = self.tape.relu(self.tape.add_bias(self.tape.linear_map(w, self.hadamard(i, j, f_i, v)), b))
            return self.tape.inner(hidden, h)
        raise CatalogError(f"unknown similarity kind {kind!r}")

    def hadamard(self, i, j, f_i, v):
        key = (min(i, j), max(i, j))
        if key not in self._had:
            self._had[key] = self.tape.mul(f_i, v)
        return self._had[key]

    def utility(self, i, j, f_i, v, pair_pos=None):
        kind = self.cfg.utility
        if kind == "one":
            return ("one", None)
        if kind == "identity":
            return ("batch", v)
        if kind == "scaled_identity":
            return ("batch", self.tape.scale_by(v, self.slots.elem(self.prefix + "fieldw", (i,))))
        if kind == "scalar_pair":
            return ("scalar", self.slots.elem(self.prefix + "pairw", (i, j)))
        if kind == "scalar_pair_sym":
            return ("scalar", self.slots.elem(self.prefix + "pairw", (sym_pair_index(i, j, self.n),)))
        if kind == "scalar_inner":
            key = (min(i, j), max(i, j))
            if key not in self._theta_inner:
                theta = self.prefix + "theta"
                self._theta_inner[key] = self.tape.inner(
                    self.slots.row(theta, i), self.slots.row(theta, j)
                )
            return ("scalar", self._theta_inner[key])
        if kind == "vector_pair":
            pos = pair_pos if pair_pos is not None else i * self.n + j
            return ("vector", self.slots.row(self.prefix + "pairvec", pos))
        if kind == "hadamard":
            if self.cfg.self_product:
                return ("batch", self.hadamard(i, i, f_i, f_i))
            return ("batch", self.hadamard(i, j, f_i, v))
        if kind == "linear_map":
            return ("batch", self._projected("v", "v", j, v))
        if kind == "projected_inner":
            p = self.slots.whole(self.prefix + "proj_p")
            return ("batch", self.tape.inner(self.hadamard(i, j, f_i, v), p))
        raise CatalogError(f"unknown utility kind {kind!r}")


def _operands(cfg, fields, aware, i, j):
    if cfg.field_aware and i != j:
        return aware[(i, j)], aware[(j, i)]
    return fields[i], fields[j]


def fi_forward(tape, cfg, fields, slots, *, aware=None, n=None, prefix="fi.", grid_pairs=None):
    """Evaluate one FI layer.

    `fields` is the list of per-field embedding nodes (None allowed for
    purely field-aware configs, with `n` given). Returns one node per field
    for per-field neighborhoods, or one node per pair (in `grid_pairs`
    order, default all ordered pairs) for grid configs.
    """
    if cfg.field_aware:
        if aware is None:
            raise ContractError(f"{cfg.model} needs field-aware embeddings")
        if n is None:
            n = max(i for i, _ in aware) + 1
    else:
        if fields is None:
            raise ContractError("fi_forward needs field embeddings")
        n = len(fields)
    builders = _Builders(tape, cfg, slots, prefix, n)

    if cfg.neighborhood == "grid":
        pairs = grid_pairs if grid_pairs is not None else ordered_pairs(n)
        out = []
        for pos, (i, j) in enumerate(pairs):
            f_i, f_j = fields[i], fields[j]
            score = builders.score(i, j, f_i, f_j)
            util = builders.utility(i, j, f_i, f_j, pair_pos=pos)
            out.append(_combine(tape, score, util))
        return out

    if cfg.pair_softmax:
        return _attention_pooled(tape, cfg, fields, builders, n)

    out = []
    for i in range(n):
        nbrs = _neighborhood(cfg.neighborhood, i, n)
        scores, utils = [], []
        for j in nbrs:
            f_i, f_j = _operands(cfg, fields, aware, i, j)
            scores.append(builders.score(i, j, f_i, f_j))
            utils.append(builders.utility(i, j, f_i, f_j))
        if cfg.softmax:
            weights = tape.softmax(tape.stack_last(scores))
            terms = [
                _combine(tape, tape.column(weights, k), utils[k]) for k in range(len(nbrs))
            ]
        else:
            terms = [_combine(tape, scores[k], utils[k]) for k in range(len(nbrs))]
        out.append(_sum_nodes(tape, terms))
    return out


def _attention_pooled(tape, cfg, fields, builders, n):
    """Per-field sums with attention weights normalized over all ordered pairs."""
    if n < 2:
        raise DomainError("attention pooling needs at least two fields")
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    raw = [builders.score(i, j, fields[i], fields[j]) for i, j in pairs]
    weights = tape.softmax(tape.stack_last(raw))
    per_field = [[] for _ in range(n)]
    for k, (i, j) in enumerate(pairs):
        util = builders.utility(i, j, fields[i], fields[j])
        per_field[i].append(_combine(tape, tape.column(weights, k), util))
    return [_sum_nodes(tape, terms) for terms in per_field]
