"""Search over projection directions for the least-unfair equi-depth hashmap.

In 2D every combinatorially distinct ordering is visited exactly once by
sweeping a direction through the tie angles of all point pairs: between two
consecutive tie angles the ordering is fixed, and crossing one swaps a
single adjacent pair. The sweep maintains the per-group bucket counts and
pairwise-fairness values incrementally, so each swap costs O(1) arithmetic.

For arbitrary dimension, ``sampled_search`` scores a seeded sample of unit
directions from scratch instead; the first axis vector is always included
so the result never trails the equi-depth baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    HashmapModel,
    ProjectionVector,
    UnsupportedDimensionError,
    equidepth_epsilon,
    equidepth_position_buckets,
    model_from_position_buckets,
    position_counts,
    project_ordering,
)

_ANGLE_NUDGE = math.pi / 2e6


@dataclass(frozen=True, eq=False)
class SwapEvent:
    """Direction at which the projections of two points tie and swap order."""

    point_a: int
    point_b: int
    vector: ProjectionVector
    angle: float  # in [0, pi)


@dataclass(frozen=True, eq=False)
class RankingSearchResult:
    best_vector: ProjectionVector
    best_epsilon: float
    model: HashmapModel
    vectors_examined: int


def _event_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tie angles for all distinct pairs, sorted by (angle, a, b)."""
    pts = dataset.points
    a_idx, b_idx = np.triu_indices(dataset.n, k=1)
    diff = pts[a_idx] - pts[b_idx]
    distinct = np.any(diff != 0.0, axis=1)
    a_idx, b_idx, diff = a_idx[distinct], b_idx[distinct], diff[distinct]
    # the pair ties where the direction is perpendicular to diff
    angles = np.mod(np.arctan2(diff[:, 0], -diff[:, 1]), math.pi)
    order = np.lexsort((b_idx, a_idx, angles))
    return angles[order], a_idx[order], b_idx[order]


def enumerate_swap_events(dataset: Dataset) -> list[SwapEvent]:
    """All pairwise tie directions of a 2D dataset, ascending by angle.

    Duplicate points never swap, so they emit no event; at most
    n(n-1)/2 events total.
    """
    if dataset.dim != 2:
        raise UnsupportedDimensionError("swap events are defined for 2D data only")
    if dataset.n < 2:
        raise ValueError("need at least two points")
    angles, a_idx, b_idx = _event_arrays(dataset)
    events = []
    for angle, a, b in zip(angles, a_idx, b_idx):
        vec = ProjectionVector((math.cos(angle), math.sin(angle)),
                               provenance=("arrangement_event", int(a), int(b)))
        events.append(SwapEvent(int(a), int(b), vec, float(angle)))
    return events


def _direction(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


class _SweepState:
    """Ordering, per-group bucket counts and pairwise values at one direction."""

    def __init__(self, dataset: Dataset, m: int):
        self.dataset = dataset
        self.m = m
        self.bucket_of_position = equidepth_position_buckets(dataset.n, m)
        self.group_sizes = dataset.group_sizes.astype(np.float64)
        self.perm = None
        self.pos = None
        self.counts = None
        self.pairwise = None

    def recompute(self, angle: float):
        scores = self.dataset.points @ _direction(angle)
        self.perm = np.argsort(scores, kind="stable")
        self.pos = np.empty_like(self.perm)
        self.pos[self.perm] = np.arange(self.dataset.n)
        labels_in_order = self.dataset.group_labels[self.perm]
        self.counts = position_counts(labels_in_order, self.bucket_of_position,
                                      self.dataset.k, self.m).astype(np.float64)
        frac = self.counts / self.group_sizes[:, None]
        self.pairwise = (frac * frac).sum(axis=1)

    def swap_adjacent(self, a: int, b: int) -> bool:
        """Apply the swap of points a and b; False if they are not adjacent."""
        ia, ib = self.pos[a], self.pos[b]
        if abs(int(ia) - int(ib)) != 1:
            return False
        lo, hi = (ia, ib) if ia < ib else (ib, ia)
        p_low, p_high = self.perm[lo], self.perm[hi]
        self.perm[lo], self.perm[hi] = p_high, p_low
        self.pos[p_low], self.pos[p_high] = hi, lo
        bl, bh = self.bucket_of_position[lo], self.bucket_of_position[hi]
        if bl == bh:
            return True
        gi = self.dataset.group_labels[p_low]   # moves bucket bl -> bh
        gl = self.dataset.group_labels[p_high]  # moves bucket bh -> bl
        if gi == gl:
            return True
        szi = self.group_sizes[gi]
        ci_l, ci_h = self.counts[gi, bl], self.counts[gi, bh]
        self.pairwise[gi] += ((ci_l - 1.0) ** 2 + (ci_h + 1.0) ** 2
                              - ci_l ** 2 - ci_h ** 2) / (szi * szi)
        szl = self.group_sizes[gl]
        cl_l, cl_h = self.counts[gl, bl], self.counts[gl, bh]
        self.pairwise[gl] += ((cl_h - 1.0) ** 2 + (cl_l + 1.0) ** 2
                              - cl_h ** 2 - cl_l ** 2) / (szl * szl)
        self.counts[gi, bl] -= 1.0
        self.counts[gi, bh] += 1.0
        self.counts[gl, bh] -= 1.0
        self.counts[gl, bl] += 1.0
        return True

    def epsilon(self) -> float:
        eps = self.m * float(self.pairwise.max()) - 1.0
        return 0.0 if -1e-9 < eps < 0.0 else eps

    def scratch_epsilon(self) -> float:
        labels_in_order = self.dataset.group_labels[self.perm]
        return equidepth_epsilon(labels_in_order, self.dataset.group_sizes, self.m)


def exact_search_2d(dataset: Dataset, m: int,
                    validate_every: int = 0) -> RankingSearchResult:
    """Minimum-unfairness equi-depth hashmap over all 2D orderings.

    Sweeps all pairwise tie angles in [0, pi); runs of events at equal
    angles (degenerate inputs) are applied as a batch followed by a scratch
    recompute just past the shared angle. ``validate_every`` > 0 additionally
    recomputes the maintained pairwise values from scratch at that event
    cadence and raises if they drifted beyond 1e-9.
    """
    if dataset.dim != 2:
        raise UnsupportedDimensionError("exact search requires 2D data")
    if m < 1 or dataset.n < m:
        raise ValueError(f"need n >= m >= 1, got n={dataset.n}, m={m}")

    if dataset.n < 2:
        angles = np.empty(0)
        a_idx = b_idx = np.empty(0, dtype=np.int64)
    else:
        angles, a_idx, b_idx = _event_arrays(dataset)

    state = _SweepState(dataset, m)
    if len(angles) == 0:
        vector = ProjectionVector.axis(2)
        ordering = project_ordering(dataset, vector)
        model = model_from_position_buckets(ordering, state.bucket_of_position,
                                            m, vector, meta={"algorithm": "ranking_exact2d"})
        eps = equidepth_epsilon(dataset.group_labels[ordering.permutation],
                                dataset.group_sizes, m)
        return RankingSearchResult(vector, eps, model, vectors_examined=1)

    theta0 = float(angles[0]) - _ANGLE_NUDGE
    state.recompute(theta0)
    best_eps = state.epsilon()
    best_angle = theta0
    best_prov = ("arrangement_event", int(a_idx[0]), int(b_idx[0]))

    n_events = len(angles)
    i = 0
    processed = 0
    while i < n_events:
        j = i
        while j + 1 < n_events and angles[j + 1] == angles[i]:
            j += 1
        next_angle = float(angles[j + 1]) if j + 1 < n_events else theta0 + math.pi
        cell_angle = (float(angles[j]) + next_angle) / 2.0
        if j > i:
            # coincident tie angles: adjacent-swap bookkeeping is unreliable,
            # re-derive the ordering strictly past the shared angle
            state.recompute(cell_angle)
        else:
            ok = state.swap_adjacent(int(a_idx[i]), int(b_idx[i]))
            if not ok:
                state.recompute(cell_angle)
        processed += j - i + 1
        if validate_every and processed % validate_every == 0:
            drift = abs(state.epsilon() - state.scratch_epsilon())
            if drift > 1e-9:
                raise AssertionError(f"incremental sweep drifted by {drift}")
        eps = state.epsilon()
        if eps < best_eps:
            best_eps = eps
            best_angle = cell_angle
            best_prov = ("arrangement_event", int(a_idx[j]), int(b_idx[j]))
        i = j + 1

    vector = ProjectionVector(_direction(best_angle), provenance=best_prov)
    ordering = project_ordering(dataset, vector)
    final_eps = equidepth_epsilon(dataset.group_labels[ordering.permutation],
                                  dataset.group_sizes, m)
    model = model_from_position_buckets(ordering, state.bucket_of_position, m,
                                        vector, meta={"algorithm": "ranking_exact2d"})
    return RankingSearchResult(vector, final_eps, model,
                               vectors_examined=n_events + 1)


def sample_directions(dim: int, num_vectors: int, seed) -> np.ndarray:
    """num_vectors unit directions; row 0 is the first axis, the rest are
    Gaussian-normalized draws (uniform on the sphere), nested by prefix."""
    if num_vectors < 1:
        raise ValueError("num_vectors must be positive")
    dirs = np.zeros((num_vectors, dim))
    dirs[0, 0] = 1.0
    if num_vectors > 1:
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((num_vectors - 1, dim))
        norms = np.linalg.norm(raw, axis=1)
        degenerate = norms == 0.0
        raw[degenerate, 0] = 1.0
        norms[degenerate] = 1.0
        dirs[1:] = raw / norms[:, None]
    return dirs


def sampled_search(dataset: Dataset, m: int, num_vectors: int,
                   seed=0) -> RankingSearchResult:
    """Best equi-depth hashmap over a seeded sample of directions.

    Each candidate ordering is scored from scratch; ties resolve to the
    lowest sample index, and sample 0 is always the first axis so the result
    never exceeds the equi-depth baseline's unfairness.
    """
    if m < 1 or dataset.n < m:
        raise ValueError(f"need n >= m >= 1, got n={dataset.n}, m={m}")
    dirs = sample_directions(dataset.dim, num_vectors, seed)
    labels = dataset.group_labels
    best_eps = math.inf
    best_idx = 0
    chunk = max(1, int(2e6) // max(dataset.n, 1))
    for start in range(0, num_vectors, chunk):
        block = dirs[start : start + chunk]
        scores = dataset.points @ block.T
        perms = np.argsort(scores, axis=0, kind="stable")
        for c in range(block.shape[0]):
            eps = equidepth_epsilon(labels[perms[:, c]], dataset.group_sizes, m)
            if eps < best_eps:
                best_eps = eps
                best_idx = start + c
    provenance = ("axis", 0) if best_idx == 0 else ("sampled", seed, best_idx)
    vector = ProjectionVector(dirs[best_idx], provenance=provenance)
    ordering = project_ordering(dataset, vector)
    model = model_from_position_buckets(ordering,
                                        equidepth_position_buckets(dataset.n, m),
                                        m, vector, meta={"algorithm": "ranking_sampled"})
    return RankingSearchResult(vector, best_eps, model, vectors_examined=num_vectors)
