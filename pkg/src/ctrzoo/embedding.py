"""Embedding tables: creation, lookup, and checkpointing.

One table per field maps category indices to d-dimensional vectors; the
field-aware variant keeps a separate table per (field, target-field) pair.
Tables live in a `ParameterStore` under fixed slot names, initialized
Xavier-uniform with fans (vocab_size, d). Reserved rows (missing, OOV) are
ordinary trainable rows. Lookup gradients are sparse: only rows that appear
in a batch are touched.
"""
from __future__ import annotations

from .errors import ConfigError, ShapeError
from .tape import ParameterStore

EMB = "emb"
LINEAR = "lin"


def emb_slot(i, target=None):
    return f"{EMB}.{i}" if target is None else f"{EMB}.{i}.{target}"


def linear_slot(i):
    return f"{LINEAR}.{i}"


def add_embedding_tables(store, schema, d, field_aware=False):
    """Create the embedding slots for every field.

    Plain: one (vocab_i, d) table per field. Field-aware: one (vocab_i, d)
    table per ordered (field, other-field) pair, n*(n-1) tables in total.
    """
    if d < 1:
        raise ConfigError(f"embedding dimension must be positive, got {d}")
    n = schema.n
    for i, size in enumerate(schema.vocab_sizes):
        if field_aware:
            for t in range(n):
                if t != i:
                    store.add_xavier(emb_slot(i, t), (size, d), fans=(size, d))
        else:
            store.add_xavier(emb_slot(i), (size, d), fans=(size, d))


def add_linear_table(store, schema):
    """First-order weights: a d=1 embedding table per field."""
    for i, size in enumerate(schema.vocab_sizes):
        store.add_xavier(linear_slot(i), (size, 1), fans=(size, 1))


def lookup_fields(tape, store, indices):
    """Embed a batch: indices (B, n) -> list of n nodes of shape (B, d)."""
    if indices.ndim != 2:
        raise ShapeError(f"indices must be (B, n), got {indices.shape}")
    return [tape.lookup(store, emb_slot(i), indices[:, i]) for i in range(indices.shape[1])]


def lookup_field_aware(tape, store, indices):
    """Field-aware embed: dict (i, target) -> node (B, d), for all i != target."""
    if indices.ndim != 2:
        raise ShapeError(f"indices must be (B, n), got {indices.shape}")
    n = indices.shape[1]
    out = {}
    for i in range(n):
        for t in range(n):
            if t != i:
                out[(i, t)] = tape.lookup(store, emb_slot(i, t), indices[:, i])
    return out


def lookup_linear(tape, store, indices):
    """First-order terms: list of n nodes of shape (B, 1)."""
    return [
        tape.lookup(store, linear_slot(i), indices[:, i]) for i in range(indices.shape[1])
    ]


def save_checkpoint(store, path):
    """Write every slot to a self-describing JSON file.

    Values serialize through repr, which round-trips IEEE doubles exactly,
    so load-after-save is bit-identical.
    """
    store.save(path)


def load_checkpoint(path):
    return ParameterStore.load(path)
