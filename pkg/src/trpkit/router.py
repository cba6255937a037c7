"""Latent embeddings router.

Reference embeddings are partitioned by unit, grouped by the binding they
came from, and padded into rectangular ``(G, L_pad, D)`` batches.  The
validity mask is the single source of truth for which slots are real.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DimensionMismatch, NonContiguousGroup, PadTooSmall, ShapeMismatch
from .grammar import AnswerAst, iter_triplets

__all__ = ["RefEmbedding", "RoutedBatch", "route_refs", "unroute", "ref_slots"]


@dataclass(frozen=True, eq=False)
class RefEmbedding:
    vector: np.ndarray
    unit: str
    group_id: int
    index_in_group: int
    source_position: int


@dataclass(frozen=True, eq=False)
class RoutedBatch:
    unit: str
    embeddings: np.ndarray  # (G, L_pad, D), zeros in padded slots
    validity: np.ndarray  # (G, L_pad) bool
    group_ids: tuple[int, ...]
    inverse: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def pad_length(self) -> int:
        return self.embeddings.shape[1]

    @property
    def groups(self) -> list[np.ndarray]:
        return [self.embeddings[g] for g in range(self.embeddings.shape[0])]

    @property
    def group_sizes(self) -> list[int]:
        return [int(v.sum()) for v in self.validity]


def route_refs(embeddings: Sequence[RefEmbedding],
               pad_length: int | None = None) -> dict[str, RoutedBatch]:
    if not embeddings:
        return {}
    dim = np.asarray(embeddings[0].vector).shape
    if len(dim) != 1:
        raise DimensionMismatch(f"embedding vectors must be 1-D, got shape {dim}")
    by_unit: dict[str, dict[int, list[RefEmbedding]]] = defaultdict(lambda: defaultdict(list))
    for e in embeddings:
        if np.asarray(e.vector).shape != dim:
            raise DimensionMismatch(
                f"embedding at position {e.source_position} has shape "
                f"{np.asarray(e.vector).shape}, expected {dim}")
        by_unit[e.unit][e.group_id].append(e)

    batches: dict[str, RoutedBatch] = {}
    for unit in sorted(by_unit):
        groups = by_unit[unit]
        group_ids = sorted(groups)
        members = []
        for gid in group_ids:
            refs = sorted(groups[gid], key=lambda e: e.index_in_group)
            if [e.index_in_group for e in refs] != list(range(len(refs))):
                raise NonContiguousGroup(
                    f"unit {unit!r} group {gid}: indices "
                    f"{[e.index_in_group for e in refs]} are not 0..{len(refs) - 1}")
            members.append(refs)
        longest = max(len(m) for m in members)
        length = longest if pad_length is None else pad_length
        if length < longest:
            raise PadTooSmall(f"pad_length {length} < largest {unit!r} group ({longest})")

        data = np.zeros((len(members), length, dim[0]))
        valid = np.zeros((len(members), length), dtype=bool)
        inverse: dict[tuple[int, int], int] = {}
        for g, refs in enumerate(members):
            for slot, e in enumerate(refs):
                data[g, slot] = e.vector
                valid[g, slot] = True
                inverse[(g, slot)] = e.source_position
        batches[unit] = RoutedBatch(unit, data, valid, tuple(group_ids), inverse)
    return batches


def unroute(batch: RoutedBatch, per_slot_outputs: Sequence[Sequence[Any]]) -> dict[int, Any]:
    """Deliver per-slot decoder outputs back to their source positions."""
    n_groups, length = batch.validity.shape
    if len(per_slot_outputs) != n_groups:
        raise ShapeMismatch(f"expected outputs for {n_groups} groups, got {len(per_slot_outputs)}")
    out: dict[int, Any] = {}
    for g in range(n_groups):
        row = per_slot_outputs[g]
        if len(row) != length:
            raise ShapeMismatch(f"group {g}: expected {length} slots, got {len(row)}")
        for slot in np.flatnonzero(batch.validity[g]):
            out[batch.inverse[(g, int(slot))]] = row[slot]
    return out


def ref_slots(ast: AnswerAst) -> list[tuple[str, int, int, int]]:
    """List ``(unit, group_id, index_in_group, source_position)`` for each ref.

    Every binding is its own group.  A composite binding such as
    ``<Unit>box, keypoint</Unit>`` yields one slot per unit for every ref.
    """
    slots = []
    group = 0
    for trip in iter_triplets(ast):
        for b in trip.bindings:
            for unit in b.units:
                for r in b.refs:
                    slots.append((unit, group, r.index, r.source_position))
            group += 1
    return slots
