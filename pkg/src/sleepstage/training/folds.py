from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    """Subject to fold assignment; every subject belongs to exactly one fold."""

    k: int
    assignments: dict[str, int]

    def __post_init__(self):
        sizes = self.sizes()
        if len(sizes) != self.k or max(sizes) - min(sizes) > 1:
            raise ValueError(f"unbalanced fold sizes {sizes}")

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignments.values():
            counts[f] += 1
        return counts

    def test_subjects(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.assignments.items() if f == fold)

    def train_subjects(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.assignments.items() if f != fold)

    def to_dict(self) -> dict:
        return {"k": self.k, "assignments": dict(sorted(self.assignments.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(int(d["k"]), {str(s): int(f) for s, f in d["assignments"].items()})


def make_folds(subject_ids, k: int, seed: int) -> FoldPlan:
    """Seeded shuffle of the sorted subject list, then round-robin assignment."""
    given = [str(s) for s in subject_ids]
    ids = sorted(set(given))
    if len(ids) != len(given):
        raise ValueError("duplicate subject ids")
    if k < 2:
        raise ValueError(f"need at least 2 folds, got k={k}")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} subjects cannot fill {k} folds; use k <= {len(ids)}")
    order = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF01D,))).permutation(len(ids))
    return FoldPlan(k, {ids[j]: i % k for i, j in enumerate(order)})


def assert_disjoint(train_ids, held_out_ids) -> None:
    overlap = set(train_ids) & set(held_out_ids)
    if overlap:
        raise AssertionError(f"subjects in both training and held-out splits: {sorted(overlap)}")
