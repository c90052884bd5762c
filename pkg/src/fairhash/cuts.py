"""Zero-unfairness constructions that trade memory for exact group balance.

Two builders live here. ``sweep_and_cut`` works for any number of groups by
walking the ordering once and assigning each point to a bucket from its
group-local rank, paying up to n-1 cuts. ``necklace_2g`` handles exactly two
groups with at most 2(m-1) cuts by repeatedly carving a circular window of
n/m consecutive points holding exactly |g1|/m members of group 1.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    HashmapModel,
    Ordering,
    ProjectionVector,
    UnsupportedGroupCountError,
    model_from_position_buckets,
    project_ordering,
)


@dataclass(frozen=True, eq=False)
class CutPlan:
    """A per-position bucket assignment on an ordering, before realization."""

    ordering: Ordering
    bucket_of_position: np.ndarray
    cut_positions: np.ndarray  # positions p where buckets of p-1 and p differ

    @classmethod
    def from_assignment(cls, ordering: Ordering, bucket_of_position) -> "CutPlan":
        assignment = np.asarray(bucket_of_position, dtype=np.int64)
        cuts = np.flatnonzero(np.diff(assignment) != 0) + 1
        return cls(ordering, assignment, cuts)


def sweep_and_cut(dataset: Dataset, vector: ProjectionVector, m: int) -> HashmapModel:
    """0-unfair bucket assignment by group-local rank, any k.

    The c-th point of group g along the ordering (c counted from 1) goes to
    bucket ((c-1) * m) // |g|, so every bucket receives floor(|g|/m) or
    ceil(|g|/m) members of each group; exactly |g|/m under divisibility.
    """
    if m < 1:
        raise ValueError("m must be positive")
    ordering = project_ordering(dataset, vector)
    labels_in_order = dataset.group_labels[ordering.permutation]
    assignment = np.empty(dataset.n, dtype=np.int64)
    warnings = []
    for g in range(dataset.k):
        positions = np.flatnonzero(labels_in_order == g)
        size = len(positions)
        assignment[positions] = (np.arange(size, dtype=np.int64) * m) // size
        if size < m:
            warnings.append(f"group {g} has {size} < m={m} members; "
                            "some buckets receive none of it")
    present = np.unique(assignment)
    if len(present) != m:
        raise ValueError(
            f"only {len(present)} of m={m} buckets receive points: every group "
            f"is smaller than m; reduce m or merge groups")
    meta = {"algorithm": "sweep_cut"}
    if warnings:
        meta["warnings"] = tuple(warnings)
    return model_from_position_buckets(ordering, assignment, m, vector, meta=meta)


def expected_bins_bound(n: int, r: int, m: int) -> float:
    """Upper bound on the expected number of bins Sweep&Cut creates when the
    two-group labels are in random order: 2 * (r(n-r)/n + m)."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= r <= n:
        raise ValueError("r must lie in [0, n]")
    return 2.0 * (r * (n - r) / n + m)


def necklace_2g(dataset: Dataset, vector: ProjectionVector, m: int) -> HashmapModel:
    """(0, 2)-construction for two groups: at most 2(m-1) cuts.

    Treats the ordering as a circle and repeatedly extracts a window of
    n/m consecutive live positions containing exactly |g1|/m members of
    group 1 (one always exists by the discrete intermediate value theorem);
    extracted windows become buckets and the circle is spliced.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if dataset.k != 2:
        raise UnsupportedGroupCountError(
            f"necklace_2g requires exactly 2 groups, got {dataset.k}; "
            "use sweep_and_cut for k > 2")
    n = dataset.n
    if n % m != 0 or int(dataset.group_sizes[0]) % m != 0:
        raise ValueError(
            f"necklace_2g needs m | n and m | |g1| (n={n}, |g1|="
            f"{int(dataset.group_sizes[0])}, m={m}); use sweep_and_cut instead")
    ordering = project_ordering(dataset, vector)
    labels_in_order = dataset.group_labels[ordering.permutation]
    assignment = _necklace_assignment(labels_in_order == 0,
                                      int(dataset.group_sizes[0]), n, m)
    return model_from_position_buckets(ordering, assignment, m, vector,
                                       meta={"algorithm": "necklace_2g"})


def _necklace_assignment(is_g1: np.ndarray, r1: int, n: int, m: int) -> np.ndarray:
    """Position -> bucket map of the circular-window extraction."""
    L = n // m
    quota = r1 // m
    ones = is_g1.astype(np.int64)

    # T[p]: group-1 count of the length-L circular window starting at p
    cs = np.concatenate(([0], np.cumsum(np.concatenate((ones, ones[: L - 1])))))
    T = cs[L : L + n] - cs[:n]
    flagged = T == quota
    heap = list(np.flatnonzero(flagged))
    heapq.heapify(heap)

    alive = np.ones(n, dtype=bool)
    live = np.arange(n)            # live slot -> original position
    slot_of = np.arange(n)         # original position -> live slot
    assignment = np.empty(n, dtype=np.int64)

    for bkt in range(m):
        while heap and not (alive[heap[0]] and flagged[heap[0]]):
            heapq.heappop(heap)
        if not heap:
            raise AssertionError("no balanced window exists; extraction invariant broken")
        j = heapq.heappop(heap)
        sz = len(live)
        s = slot_of[j]
        window_slots = (np.arange(L) + s) % sz
        window_ids = live[window_slots]
        assert int(ones[window_ids].sum()) == quota, "window lost group balance"
        assignment[window_ids] = bkt
        if sz == L:
            break
        # refresh T for the L-1 predecessors of the window while the circle
        # still contains it; their windows now reach past the removed block
        steps = np.arange(1, L, dtype=np.int64)
        back_ids = live[(s - steps) % sz]
        drop_ids = live[(s + 2 * L - steps) % sz]
        sigma0 = T[live[(s + L) % sz]]
        new_T = sigma0 + np.cumsum(ones[back_ids] - ones[drop_ids])
        T[back_ids] = new_T
        new_flags = new_T == quota
        became_true = back_ids[new_flags & ~flagged[back_ids]]
        flagged[back_ids] = new_flags
        for p in became_true:
            heapq.heappush(heap, int(p))
        alive[window_ids] = False
        live = np.delete(live, np.sort(window_slots))
        slot_of[live] = np.arange(len(live))
    return assignment
