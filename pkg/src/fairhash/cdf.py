"""Fairness-agnostic equi-depth baseline: m buckets of n/m points each.

This is the data-informed comparator every other construction is measured
against. It satisfies collision probability and single fairness exactly
(1/m) whenever m divides n, but can be maximally pairwise-unfair when the
projection separates the groups.
"""

from __future__ import annotations

from .core import (
    Dataset,
    HashmapModel,
    ProjectionVector,
    equidepth_position_buckets,
    model_from_position_buckets,
    project_ordering,
)


def build_cdf(dataset: Dataset, vector: ProjectionVector, m: int) -> HashmapModel:
    """Equi-depth model on the ordering induced by ``vector``.

    Bucket j takes the j-th block of the ordering; the first ``n % m``
    buckets absorb the remainder. Boundaries are midpoints of adjacent
    ordered scores; an edge falling inside a run of duplicate scores shifts
    right to the nearest strict increase (raising if that leaves a bucket
    empty of bins).
    """
    if m < 1:
        raise ValueError("m must be positive")
    if dataset.n < m:
        raise ValueError(f"need at least m={m} points, got n={dataset.n}")
    ordering = project_ordering(dataset, vector)
    assignment = equidepth_position_buckets(dataset.n, m)
    return model_from_position_buckets(ordering, assignment, m, vector,
                                       meta={"algorithm": "cdf"})
