"""Discrepancy-bounded partitions: exact DP, randomized approximation, local search.

A partition of an ordering into m contiguous buckets has discrepancy gamma
when every bucket holds between (1-gamma)|g_i|/m and (1+gamma)|g_i|/m
members of each group. Small discrepancy buys bounded collision probability
and fairness on all three metrics at once, at the price of buckets that are
no longer exactly equi-depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BucketHistogram,
    Dataset,
    HashmapModel,
    Ordering,
    ProjectionVector,
    UnsupportedDimensionError,
    model_from_position_buckets,
    project_ordering,
)
from .ranking import _ANGLE_NUDGE, _direction, _event_arrays, sample_directions

_BAND_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscrepancyPartition:
    """m contiguous buckets on an ordering with their worst group deviation."""

    ordering: Ordering
    split_positions: np.ndarray  # (m-1,) strictly increasing in (0, n)
    discrepancy: float
    per_bucket_counts: BucketHistogram
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        splits = np.array(self.split_positions, dtype=np.int64, copy=True)
        n = self.ordering.n
        if splits.ndim != 1 or splits.shape[0] != self.per_bucket_counts.m - 1:
            raise ValueError("need exactly m-1 split positions")
        if splits.size and (splits.min() < 1 or splits.max() > n - 1
                            or np.any(np.diff(splits) <= 0)):
            raise ValueError("split positions must be strictly increasing in (0, n)")
        hist = self.per_bucket_counts
        quota = hist.group_totals[:, None] / hist.m
        dev = np.abs(hist.counts - quota)
        if np.any(dev > (self.discrepancy + _BAND_TOL) * quota):
            raise ValueError("bucket counts exceed the stated discrepancy band")
        splits.flags.writeable = False
        object.__setattr__(self, "split_positions", splits)

    @property
    def m(self) -> int:
        return self.per_bucket_counts.m


@dataclass(frozen=True)
class LocalSearchConfig:
    """Bounds for the boundary-nudging refiner.

    ``single_fairness_min/max`` and ``collision_max`` gate which moves are
    admissible; a move must keep every group's single fairness inside the
    band and the collision probability at or below the cap.
    """

    max_iterations: int
    single_fairness_min: float = 0.0
    single_fairness_max: float = 1.0
    collision_max: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if not (0.0 <= self.single_fairness_min <= self.single_fairness_max <= 1.0):
            raise ValueError("need 0 <= single_fairness_min <= single_fairness_max <= 1")
        if not (0.0 < self.collision_max <= 1.0):
            raise ValueError("collision_max must lie in (0, 1]")


def _prefix_counts(position_labels: np.ndarray, k: int) -> np.ndarray:
    """(k, n+1) running per-group counts; column i counts positions [0, i)."""
    n = len(position_labels)
    one_hot = np.zeros((k, n + 1), dtype=np.int64)
    one_hot[position_labels, np.arange(n) + 1] = 1
    return np.cumsum(one_hot, axis=1)


def _counts_for_splits(prefix: np.ndarray, splits: np.ndarray, n: int) -> np.ndarray:
    edges = np.concatenate(([0], splits, [n]))
    return (prefix[:, edges[1:]] - prefix[:, edges[:-1]]).astype(np.int64)


def _max_deviation(counts: np.ndarray, group_sizes: np.ndarray, m: int) -> float:
    scale = m / group_sizes.astype(np.float64)
    return float(np.abs(counts * scale[:, None] - 1.0).max())


def dp_min_discrepancy(ordering: Ordering, position_labels, group_totals,
                       m: int) -> DiscrepancyPartition:
    """Partition minimizing the max-over-buckets discrepancy, by dynamic program.

    best[j][i] = min over x of max(best[j-1][x], deviation of window [x, i));
    buckets are nonempty, so split positions come out strictly increasing.
    """
    labels = np.asarray(position_labels, dtype=np.int64)
    n = ordering.n
    if labels.shape != (n,):
        raise ValueError("position labels must cover the ordering")
    sizes = np.asarray(group_totals, dtype=np.int64)
    if np.any(sizes <= 0):
        raise ValueError("group totals must be positive")
    if m < 1 or n < m:
        raise ValueError(f"need n >= m >= 1, got n={n}, m={m}")
    k = len(sizes)
    prefix = _prefix_counts(labels, k)
    scale = (m / sizes.astype(np.float64))[:, None]

    prev = np.full(n + 1, math.inf)
    prev[0] = 0.0
    arg = np.zeros((m + 1, n + 1), dtype=np.int64)
    for j in range(1, m + 1):
        cur = np.full(n + 1, math.inf)
        for i in range(j, n - (m - j) + 1):
            xs = np.arange(j - 1, i)
            window_dev = np.abs((prefix[:, i : i + 1] - prefix[:, xs]) * scale - 1.0).max(axis=0)
            vals = np.maximum(prev[xs], window_dev)
            t = int(np.argmin(vals))
            cur[i] = vals[t]
            arg[j, i] = xs[t]
        prev = cur

    gamma = float(prev[n])
    splits = np.empty(m - 1, dtype=np.int64)
    i = n
    for j in range(m, 1, -1):
        i = int(arg[j, i])
        splits[j - 2] = i
    counts = _counts_for_splits(prefix, splits, n)
    return DiscrepancyPartition(ordering, splits, gamma,
                                BucketHistogram.from_counts(counts))


def partition_to_model(dataset: Dataset, vector: ProjectionVector,
                       partition: DiscrepancyPartition,
                       meta: dict | None = None) -> HashmapModel:
    """Materialize a partition's splits as midpoint boundaries."""
    m = partition.m
    sizes = np.diff(np.concatenate(([0], partition.split_positions,
                                    [partition.ordering.n])))
    assignment = np.repeat(np.arange(m, dtype=np.int64), sizes)
    return model_from_position_buckets(partition.ordering, assignment, m,
                                       vector, meta=meta)


def _cell_angles(dataset: Dataset) -> list[tuple[float, tuple]]:
    """(realization angle, provenance) for every arrangement cell in 2D."""
    if dataset.n < 2:
        return [(0.0, ("axis", 0))]
    angles, a_idx, b_idx = _event_arrays(dataset)
    if len(angles) == 0:
        return [(0.0, ("axis", 0))]
    distinct, first_at = np.unique(angles, return_index=True)
    theta0 = float(distinct[0]) - _ANGLE_NUDGE
    cells = [(theta0, ("arrangement_event", int(a_idx[0]), int(b_idx[0])))]
    bounds = np.concatenate((distinct[1:], [theta0 + math.pi]))
    for t, (lo, hi) in enumerate(zip(distinct, bounds)):
        prov = ("arrangement_event", int(a_idx[first_at[t]]), int(b_idx[first_at[t]]))
        cells.append(((float(lo) + float(hi)) / 2.0, prov))
    return cells


def exact_discrepancy_search(dataset: Dataset, m: int, mode: str = "exact_2d",
                             num_vectors: int = 100,
                             seed=0) -> tuple[ProjectionVector, DiscrepancyPartition]:
    """Minimize dp_min_discrepancy over enumerated or sampled directions.

    ``mode="exact_2d"`` scans one direction per arrangement cell (2D only);
    ``mode="sampled"`` scores ``num_vectors`` seeded directions in any
    dimension. Ties resolve to the earliest candidate.
    """
    if m < 1 or dataset.n < m:
        raise ValueError(f"need n >= m >= 1, got n={dataset.n}, m={m}")
    if mode == "exact_2d":
        if dataset.dim != 2:
            raise UnsupportedDimensionError("exact_2d mode requires 2D data")
        candidates = [ProjectionVector(_direction(a), provenance=prov)
                      for a, prov in _cell_angles(dataset)]
    elif mode == "sampled":
        dirs = sample_directions(dataset.dim, num_vectors, seed)
        candidates = [ProjectionVector(dirs[i],
                                       provenance=("axis", 0) if i == 0 else ("sampled", seed, i))
                      for i in range(len(dirs))]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    best_vec = None
    best_part = None
    for vec in candidates:
        ordering = project_ordering(dataset, vec)
        part = dp_min_discrepancy(ordering,
                                  dataset.group_labels[ordering.permutation],
                                  dataset.group_sizes, m)
        if best_part is None or part.discrepancy < best_part.discrepancy:
            best_vec, best_part = vec, part
    best_part.meta.update(mode=mode, vectors_examined=len(candidates))
    return best_vec, best_part


def _geometric_grid(n: int, delta: float) -> np.ndarray:
    """Candidate discrepancies {0, 1/n, (1+delta)/n, ...} capped at 1."""
    values = [0.0, 1.0 / n]
    while values[-1] < 1.0:
        values.append(min(values[-1] * (1.0 + delta), 1.0))
    return np.array(values)


def _first_reach_at_or_after(reach: np.ndarray) -> np.ndarray:
    size = len(reach)
    ft = np.full(size + 1, size, dtype=np.int64)
    idx = np.where(reach, np.arange(size), size)
    ft[:size] = np.minimum.accumulate(idx[::-1])[::-1]
    return ft


def _band_partition(prefix: np.ndarray, n: int, m: int, lo: np.ndarray,
                    hi: np.ndarray) -> np.ndarray | None:
    """Splits whose every bucket count lies in [lo_g, hi_g] per group, or None.

    For a fixed bucket end, the admissible starts form one contiguous index
    range per group (prefix counts are monotone), so each DP row reduces to
    an any-reachable-within-interval query answered in O(1).
    """
    k = prefix.shape[0]
    positions = np.arange(n + 1)
    reach = np.zeros(n + 1, dtype=bool)
    reach[0] = True
    witness = np.zeros((m + 1, n + 1), dtype=np.int64)
    for j in range(1, m + 1):
        lo_x = np.full(n + 1, j - 1, dtype=np.int64)
        hi_x = positions - 1
        for g in range(k):
            p = prefix[g]
            lo_x = np.maximum(lo_x, np.searchsorted(p, p - hi[g] - _BAND_TOL, side="left"))
            hi_x = np.minimum(hi_x, np.searchsorted(p, p - lo[g] + _BAND_TOL, side="right") - 1)
        ft = _first_reach_at_or_after(reach)
        first = ft[np.clip(lo_x, 0, n + 1)]
        reach = (lo_x <= hi_x) & (first <= hi_x)
        witness[j] = np.where(reach, first, 0)
    if not reach[n]:
        return None
    splits = np.empty(m - 1, dtype=np.int64)
    i = n
    for j in range(m, 1, -1):
        i = int(witness[j, i])
        splits[j - 2] = i
    return splits


def _sample_orderings(sample: Dataset, num_vectors: int, rng,
                      max_arrangement: int = 400) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deduplicated (direction, label sequence) candidates for a sample set."""
    if sample.dim == 2 and sample.n <= max_arrangement:
        directions = [_direction(a) for a, _ in _cell_angles(sample)]
    else:
        directions = list(sample_directions(sample.dim, num_vectors, rng))
    seen = set()
    out = []
    for w in directions:
        order = np.argsort(sample.points @ w, kind="stable")
        labels_in_order = sample.group_labels[order]
        key = labels_in_order.tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append((np.asarray(w), labels_in_order))
    return out


def randomized_discrepancy(dataset: Dataset, m: int, gamma: float, delta: float,
                           seed=0, sample_constant: float = 4.0,
                           num_vectors: int = 64
                           ) -> tuple[ProjectionVector, DiscrepancyPartition]:
    """Near-minimal discrepancy from per-group samples and a discretized search.

    Draws ceil(sample_constant * (m/gamma)^2 * ln n) points per group with
    replacement (whole group when that exceeds its size), then binary-searches
    the geometric grid {0, 1/n, (1+delta)/n, ...} for the smallest value
    whose widened band (alpha + gamma/2 around the per-group quota) admits a
    partition on some candidate ordering of the sample. The winning sample
    cuts are re-applied to the full dataset and the returned partition
    carries the discrepancy actually measured there.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if m < 1 or dataset.n < m:
        raise ValueError(f"need n >= m >= 1, got n={dataset.n}, m={m}")
    rng = np.random.default_rng(seed)
    n = dataset.n
    meta: dict = {"seed": seed, "sample_constant": sample_constant}

    target = max(m, math.ceil(sample_constant * (m / gamma) ** 2 * math.log(max(n, 2))))
    chosen = []
    clamped = []
    for g in range(dataset.k):
        members = np.flatnonzero(dataset.group_labels == g)
        if target >= len(members):
            chosen.append(members)
            clamped.append(g)
        else:
            chosen.append(rng.choice(members, size=target, replace=True))
    idx = np.concatenate(chosen)
    sample = Dataset.from_arrays(dataset.points[idx], dataset.group_labels[idx])
    meta["sample_sizes"] = tuple(int(s) for s in sample.group_sizes)
    if clamped:
        meta["clamped_groups"] = tuple(clamped)

    candidates = _sample_orderings(sample, num_vectors, rng)
    prefixes = [(_prefix_counts(labels, sample.k), w)
                for w, labels in candidates]
    s_sizes = sample.group_sizes.astype(np.float64)
    sn = sample.n

    def try_alpha(alpha: float):
        lo = (1.0 - alpha - gamma / 2.0) * s_sizes / m
        hi = (1.0 + alpha + gamma / 2.0) * s_sizes / m
        for prefix, w in prefixes:
            splits = _band_partition(prefix, sn, m, lo, hi)
            if splits is not None:
                return w, splits, prefix
        return None

    grid = _geometric_grid(n, delta)
    found = None
    lo_i, hi_i = 0, len(grid) - 1
    while lo_i <= hi_i:
        mid = (lo_i + hi_i) // 2
        hit = try_alpha(float(grid[mid]))
        if hit is not None:
            found = (float(grid[mid]), hit)
            hi_i = mid - 1
        else:
            lo_i = mid + 1

    if found is not None:
        alpha, (w, sample_splits, _) = found
        meta["grid_alpha"] = alpha
    else:
        # nothing on the grid admits a partition; fall back to the exact DP
        # on the sample's candidate orderings
        meta["grid_exhausted"] = True
        best = None
        for w, labels in candidates:
            order = np.argsort(sample.points @ w, kind="stable")
            part = dp_min_discrepancy(Ordering(order, np.sort(sample.points @ w)),
                                      labels, sample.group_sizes, m)
            if best is None or part.discrepancy < best[1].discrepancy:
                best = (w, part)
        w, part = best
        sample_splits = part.split_positions

    vector = ProjectionVector(w, provenance=("sampled", seed, 0))
    sample_scores = np.sort(sample.points @ vector.components, kind="stable")
    thresholds = (sample_scores[sample_splits - 1] + sample_scores[sample_splits]) / 2.0

    ordering = project_ordering(dataset, vector)
    splits = np.searchsorted(ordering.scores, thresholds, side="right")
    repaired = splits.copy()
    for t in range(m - 1):
        low = (repaired[t - 1] + 1) if t else 1
        repaired[t] = min(max(int(repaired[t]), low), n - (m - 1 - t))
    if not np.array_equal(repaired, splits):
        meta["degenerate_realization"] = True
    prefix_full = _prefix_counts(dataset.group_labels[ordering.permutation], dataset.k)
    counts = _counts_for_splits(prefix_full, repaired, n)
    measured = _max_deviation(counts, dataset.group_sizes, m)
    partition = DiscrepancyPartition(ordering, repaired, measured,
                                     BucketHistogram.from_counts(counts), meta=meta)
    return vector, partition


def local_search_refine(dataset: Dataset, model: HashmapModel,
                        config: LocalSearchConfig) -> HashmapModel:
    """Nudge bucket boundaries one ordering position at a time to cut unfairness.

    Each iteration evaluates moving every boundary one position left and
    right, keeps only moves whose single fairness stays inside
    [single_fairness_min, single_fairness_max] for every group and whose
    collision probability stays at or below collision_max, and applies the
    admissible move that lowers the unfairness the most (ties: lowest
    boundary, left before right). Stops as soon as no admissible move
    strictly improves, so the applied epsilon sequence is strictly
    decreasing. Buckets are never emptied and never cross.
    """
    m = model.m
    if model.cut_count != m - 1 or len(np.unique(model.bin_buckets)) != len(model.bin_buckets):
        raise ValueError("local search needs a contiguous model: one bin per bucket")
    if config.collision_max + 1e-12 < 1.0 / m:
        raise ValueError("collision_max below 1/m can never be satisfied")
    if m == 1:
        return model

    ordering = project_ordering(dataset, model.vector)
    n = dataset.n
    k = dataset.k
    labels_in_order = dataset.group_labels[ordering.permutation]
    edges = np.searchsorted(ordering.scores, model.boundaries, side="right")
    if edges.min() < 1 or edges.max() > n - 1 or np.any(np.diff(edges) <= 0):
        raise ValueError("every bucket must hold at least one training point")
    block_bucket = model.bin_buckets.astype(np.int64)

    prefix = _prefix_counts(labels_in_order, k)
    counts = _counts_for_splits(prefix, edges, n).astype(np.float64)
    # counts column b is the BLOCK b; scatter into bucket ids
    cnt = np.zeros((k, m))
    cnt[:, block_bucket] = counts
    nb = cnt.sum(axis=0)
    gsz = dataset.group_sizes.astype(np.float64)
    pr = ((cnt / gsz[:, None]) ** 2).sum(axis=1)
    sp = (cnt @ nb) / (gsz * n)
    cp = float(nb @ nb) / (n * n)
    eps = m * float(pr.max()) - 1.0

    f_lo, f_hi = config.single_fairness_min, config.single_fairness_max
    c_hi = config.collision_max
    applied = 0

    for _ in range(config.max_iterations):
        best_move = None  # (eps_new, j, direction, g, u, v)
        for j in range(m - 1):
            u, v = int(block_bucket[j]), int(block_bucket[j + 1])
            for direction in (-1, 1):
                if direction == -1:
                    if edges[j] - 1 <= (edges[j - 1] if j else 0):
                        continue
                    pos = edges[j] - 1
                    src, dst = u, v
                else:
                    if edges[j] + 1 >= (edges[j + 1] if j + 1 < m - 1 else n):
                        continue
                    pos = edges[j]
                    src, dst = v, u
                g = int(labels_in_order[pos])
                c_s, c_d = cnt[g, src], cnt[g, dst]
                pr_g = pr[g] + ((c_s - 1.0) ** 2 + (c_d + 1.0) ** 2
                                - c_s ** 2 - c_d ** 2) / (gsz[g] * gsz[g])
                pr_max = max(pr_g, float(np.max(np.delete(pr, g)))) if k > 1 else pr_g
                eps_new = m * pr_max - 1.0
                if eps_new >= eps - 1e-15:
                    continue
                n_s, n_d = nb[src], nb[dst]
                cp_new = cp + ((n_s - 1.0) ** 2 + (n_d + 1.0) ** 2
                               - n_s ** 2 - n_d ** 2) / (n * n)
                if cp_new > c_hi + 1e-12:
                    continue
                sp_new = sp + (cnt[:, dst] - cnt[:, src]) / (gsz * n)
                sp_new[g] = sp[g] + (((c_s - 1.0) * (n_s - 1.0) - c_s * n_s)
                                     + ((c_d + 1.0) * (n_d + 1.0) - c_d * n_d)) / (gsz[g] * n)
                if sp_new.min() < f_lo - 1e-12 or sp_new.max() > f_hi + 1e-12:
                    continue
                if best_move is None or eps_new < best_move[0] - 1e-15:
                    best_move = (eps_new, j, direction, g, src, dst,
                                 cp_new, sp_new, pr_g)
        if best_move is None:
            break
        eps_new, j, direction, g, src, dst, cp_new, sp_new, pr_g = best_move
        edges = edges.copy()
        edges[j] += direction
        cnt[g, src] -= 1.0
        cnt[g, dst] += 1.0
        nb[src] -= 1.0
        nb[dst] += 1.0
        pr[g] = pr_g
        sp = sp_new
        cp = cp_new
        eps = eps_new
        applied += 1

    sizes = np.diff(np.concatenate(([0], edges, [n])))
    assignment = np.repeat(block_bucket, sizes)
    meta = dict(model.meta)
    meta["local_search_iterations"] = applied
    return model_from_position_buckets(ordering, assignment, m, model.vector,
                                       meta=meta)
