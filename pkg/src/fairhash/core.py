"""Domain types, orderings, bucket histograms and the closed-form fairness metrics.

Everything downstream (the builders, the searches, the benchmark harness)
speaks these types: a labeled point set, a projection that orders it, a
model made of sorted cut values plus a bin-to-bucket map, and the
per-group-per-bucket occupancy histogram from which collision probability,
single fairness and pairwise fairness are computed.

Bin convention: bin ``i`` covers the half-open interval ``(B[i-1], B[i]]``
with ``B[-1] = -inf`` and ``B[len(B)] = +inf``; a score equal to a boundary
value falls in the bin to its left. Boundaries are placed at midpoints of
adjacent ordered scores, so training points never sit on a boundary unless
their scores are duplicated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UnsupportedDimensionError(ValueError):
    """The algorithm requires a specific point dimensionality."""


class UnsupportedGroupCountError(ValueError):
    """The algorithm requires a specific number of groups."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """A set of d-dimensional points, each carrying a dense group id in [0, k).

    ``group_sizes[i]`` is the number of points labeled ``i``; sizes are
    always positive and sum to ``n``.
    """

    points: np.ndarray         # (n, dim) float64
    group_labels: np.ndarray   # (n,) int64
    group_sizes: np.ndarray    # (k,) int64
    dim: int
    group_names: tuple[str, ...] | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, dim) array")
        if points.shape[1] != self.dim:
            raise ValueError(f"points have {points.shape[1]} coordinates, expected dim={self.dim}")
        if not np.all(np.isfinite(points)):
            raise ValueError("points must have finite coordinates")
        labels = np.array(self.group_labels, dtype=np.int64, copy=True)
        if labels.shape != (points.shape[0],):
            raise ValueError("group_labels must parallel points")
        sizes = np.array(self.group_sizes, dtype=np.int64, copy=True)
        if sizes.ndim != 1 or np.any(sizes <= 0):
            raise ValueError("every group must have a positive size")
        if labels.min() < 0 or labels.max() >= len(sizes):
            raise ValueError("group labels must be dense ids in [0, k)")
        counted = np.bincount(labels, minlength=len(sizes))
        if not np.array_equal(counted, sizes):
            raise ValueError("group_sizes disagree with the label counts")
        if self.group_names is not None and len(self.group_names) != len(sizes):
            raise ValueError("group_names must parallel group_sizes")
        points.flags.writeable = False
        labels.flags.writeable = False
        sizes.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "group_labels", labels)
        object.__setattr__(self, "group_sizes", sizes)

    @classmethod
    def from_arrays(cls, points, group_labels, group_names=None, warnings=()) -> "Dataset":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        labels = np.asarray(group_labels, dtype=np.int64)
        k = int(labels.max()) + 1 if labels.size else 0
        sizes = np.bincount(labels, minlength=k)
        return cls(pts, labels, sizes, dim=pts.shape[1],
                   group_names=tuple(group_names) if group_names is not None else None,
                   warnings=tuple(warnings))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return len(self.group_sizes)


@dataclass(frozen=True, eq=False)
class ProjectionVector:
    """A unit vector w; points are ranked by the linear score <p, w>.

    ``provenance`` records where the direction came from:
    ``("axis", i)``, ``("sampled", seed, index)`` or
    ``("arrangement_event", a, b)`` for the tie direction of points a and b.
    """

    components: np.ndarray
    provenance: tuple = ("axis", 0)

    def __post_init__(self):
        comps = np.array(self.components, dtype=np.float64, copy=True).reshape(-1)
        if comps.size < 1 or not np.all(np.isfinite(comps)):
            raise ValueError("projection vector must be finite and non-empty")
        norm = float(np.linalg.norm(comps))
        if norm == 0.0:
            raise ValueError("projection vector must be nonzero")
        if abs(norm - 1.0) > 1e-9:
            comps = comps / norm  # already-unit input kept bit-identical
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    @classmethod
    def axis(cls, dim: int, index: int = 0) -> "ProjectionVector":
        comps = np.zeros(dim)
        comps[index] = 1.0
        return cls(comps, provenance=("axis", index))

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ProjectionVector):
            return NotImplemented
        return np.array_equal(self.components, other.components)

    def __hash__(self):
        return hash(self.components.tobytes())


@dataclass(frozen=True, eq=False)
class Ordering:
    """A permutation of dataset indices sorted by projection score.

    Ties are broken by ascending dataset index (stable), so orderings are
    deterministic across runs and platforms.
    """

    permutation: np.ndarray  # (n,) position -> dataset index
    scores: np.ndarray       # (n,) non-decreasing, parallel to permutation

    def __post_init__(self):
        perm = _frozen_array(self.permutation, np.int64)
        scores = _frozen_array(self.scores, np.float64)
        n = perm.shape[0]
        if scores.shape != (n,):
            raise ValueError("scores must parallel the permutation")
        if not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("permutation must be a bijection on [0, n)")
        if np.any(np.diff(scores) < 0):
            raise ValueError("scores must be non-decreasing along the permutation")
        object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.permutation.shape[0]


@dataclass(frozen=True, eq=False)
class HashmapModel:
    """A built hashmap: projection vector, sorted cut values, bin->bucket map.

    ``bin_buckets`` has one entry per bin (``len(boundaries) + 1`` bins) and
    every bucket id in [0, m) appears at least once. Immutable; safe to share
    across concurrent readers.
    """

    vector: ProjectionVector
    boundaries: np.ndarray   # strictly increasing cut values
    bin_buckets: np.ndarray  # (len(boundaries)+1,) ids in [0, m)
    m: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        boundaries = _frozen_array(self.boundaries, np.float64)
        bin_buckets = _frozen_array(self.bin_buckets, np.int64)
        if self.m < 1:
            raise ValueError("m must be positive")
        if boundaries.ndim != 1 or bin_buckets.ndim != 1:
            raise ValueError("boundaries and bin_buckets must be 1-D")
        if len(bin_buckets) != len(boundaries) + 1:
            raise ValueError("need exactly len(boundaries)+1 bin bucket ids")
        if not np.all(np.isfinite(boundaries)):
            raise ValueError("boundaries must be finite")
        if len(boundaries) and np.any(np.diff(boundaries) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        if bin_buckets.min(initial=0) < 0 or bin_buckets.max(initial=0) >= self.m:
            raise ValueError("bucket ids must lie in [0, m)")
        if len(np.unique(bin_buckets)) != self.m:
            raise ValueError("every bucket id in [0, m) must own at least one bin")
        object.__setattr__(self, "boundaries", boundaries)
        object.__setattr__(self, "bin_buckets", bin_buckets)

    @property
    def cut_count(self) -> int:
        return len(self.boundaries)

    @property
    def memory_factor(self) -> float:
        if self.m == 1:
            return 0.0 if self.cut_count == 0 else math.inf
        return self.cut_count / (self.m - 1)

    def __eq__(self, other):
        if not isinstance(other, HashmapModel):
            return NotImplemented
        return (self.m == other.m
                and self.vector == other.vector
                and np.array_equal(self.boundaries, other.boundaries)
                and np.array_equal(self.bin_buckets, other.bin_buckets))

    def __hash__(self):
        return hash((self.m, self.boundaries.tobytes(), self.bin_buckets.tobytes()))


@dataclass(frozen=True, eq=False)
class BucketHistogram:
    """Per-group, per-bucket occupancy counts: counts[i][j] points of group i in bucket j."""

    counts: np.ndarray         # (k, m) non-negative ints
    bucket_totals: np.ndarray  # (m,)
    group_totals: np.ndarray   # (k,)
    n: int
    m: int

    def __post_init__(self):
        counts = _frozen_array(self.counts, np.int64)
        if counts.ndim != 2:
            raise ValueError("counts must be a (k, m) matrix")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        bucket_totals = _frozen_array(self.bucket_totals, np.int64)
        group_totals = _frozen_array(self.group_totals, np.int64)
        if not np.array_equal(counts.sum(axis=0), bucket_totals):
            raise ValueError("bucket totals disagree with counts")
        if not np.array_equal(counts.sum(axis=1), group_totals):
            raise ValueError("group totals disagree with counts")
        if int(bucket_totals.sum()) != self.n:
            raise ValueError("totals must sum to n")
        if counts.shape[1] != self.m:
            raise ValueError("counts must have m columns")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "bucket_totals", bucket_totals)
        object.__setattr__(self, "group_totals", group_totals)

    @classmethod
    def from_counts(cls, counts) -> "BucketHistogram":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts, counts.sum(axis=0), counts.sum(axis=1),
                   n=int(counts.sum()), m=counts.shape[1])

    @property
    def k(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Collision probability, per-group fairness values and the derived unfairness.

    ``epsilon = m * max_i pairwise_fairness[i] - 1`` and
    ``memory_factor = cut_count / (m - 1)`` (0 for a single bucket).
    """

    collision_probability: float
    single_fairness: np.ndarray    # (k,)
    pairwise_fairness: np.ndarray  # (k,)
    epsilon: float
    memory_factor: float
    cut_count: int
    m: int
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "single_fairness", _frozen_array(self.single_fairness, np.float64))
        object.__setattr__(self, "pairwise_fairness", _frozen_array(self.pairwise_fairness, np.float64))


def project_ordering(dataset: Dataset, vector: ProjectionVector) -> Ordering:
    """Sort the dataset by projection score, ties broken by dataset index."""
    if vector.dim != dataset.dim:
        raise ValueError(f"vector dimension {vector.dim} != dataset dim {dataset.dim}")
    raw = dataset.points @ vector.components
    perm = np.argsort(raw, kind="stable")
    return Ordering(perm, raw[perm])


def bins_for_scores(model: HashmapModel, scores: np.ndarray) -> np.ndarray:
    # side="left": a score equal to boundary i lands in bin i (left-closed-above).
    return np.searchsorted(model.boundaries, scores, side="left")


def query(model: HashmapModel, point) -> int:
    """Bucket id of a single point: O(log #bins) binary search over boundaries."""
    coords = np.asarray(point, dtype=np.float64).reshape(-1)
    if coords.shape[0] != model.vector.dim:
        raise ValueError(f"point dimension {coords.shape[0]} != model dim {model.vector.dim}")
    if not np.all(np.isfinite(coords)):
        raise ValueError("point coordinates must be finite")
    score = float(coords @ model.vector.components)
    return int(model.bin_buckets[np.searchsorted(model.boundaries, score, side="left")])


def query_many(model: HashmapModel, points) -> np.ndarray:
    """Vectorized `query` over an (n, d) array of points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[1] != model.vector.dim:
        raise ValueError(f"points dimension {pts.shape[1]} != model dim {model.vector.dim}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    scores = pts @ model.vector.components
    return model.bin_buckets[bins_for_scores(model, scores)]


def histogram(dataset: Dataset, model: HashmapModel) -> BucketHistogram:
    """Count, per group and bucket, where each dataset point hashes."""
    buckets = query_many(model, dataset.points)
    flat = np.bincount(dataset.group_labels * model.m + buckets,
                       minlength=dataset.k * model.m)
    return BucketHistogram.from_counts(flat.reshape(dataset.k, model.m))


def compute_metrics(hist: BucketHistogram, boundary_count: int,
                    warnings: tuple[str, ...] = ()) -> MetricsReport:
    """Evaluate the three closed-form probabilities and the unfairness of a histogram.

    collision = sum_j (n_j/n)^2, single_i = sum_j (a_ij/|g_i|)(n_j/n),
    pairwise_i = sum_j (a_ij/|g_i|)^2, epsilon = m * max_i pairwise_i - 1.
    """
    if np.any(hist.group_totals == 0):
        raise ValueError("every group must have at least one member")
    bucket_frac = hist.bucket_totals / hist.n
    group_frac = hist.counts / hist.group_totals[:, None]
    collision = float(bucket_frac @ bucket_frac)
    single = group_frac @ bucket_frac
    pairwise = (group_frac * group_frac).sum(axis=1)
    epsilon = hist.m * float(pairwise.max()) - 1.0
    if -1e-9 < epsilon < 0.0:
        epsilon = 0.0
    if hist.m == 1:
        memory = 0.0 if boundary_count == 0 else math.inf
    else:
        memory = boundary_count / (hist.m - 1)
    return MetricsReport(collision, single, pairwise, epsilon, memory,
                         boundary_count, hist.m, warnings=tuple(warnings))


def measure(dataset: Dataset, model: HashmapModel) -> MetricsReport:
    """Histogram the dataset through the model and compute its metrics."""
    return compute_metrics(histogram(dataset, model), model.cut_count,
                           warnings=tuple(model.meta.get("warnings", ())))


def equidepth_block_sizes(n: int, m: int) -> np.ndarray:
    """Bucket sizes for an equi-depth split: the first n % m buckets take the extra point."""
    if m < 1:
        raise ValueError("m must be positive")
    if n < m:
        raise ValueError(f"need at least m={m} points, got {n}")
    sizes = np.full(m, n // m, dtype=np.int64)
    sizes[: n % m] += 1
    return sizes


def equidepth_position_buckets(n: int, m: int) -> np.ndarray:
    """bucket id of every ordering position under the equi-depth split."""
    return np.repeat(np.arange(m, dtype=np.int64), equidepth_block_sizes(n, m))


def position_counts(labels_in_order: np.ndarray, bucket_of_position: np.ndarray,
                    k: int, m: int) -> np.ndarray:
    """(k, m) occupancy counts for an explicit position->bucket assignment."""
    flat = np.bincount(labels_in_order * m + bucket_of_position, minlength=k * m)
    return flat.reshape(k, m)


def pairwise_epsilon_of_counts(counts: np.ndarray, group_sizes: np.ndarray, m: int) -> float:
    frac = counts / group_sizes[:, None]
    eps = m * float((frac * frac).sum(axis=1).max()) - 1.0
    return 0.0 if -1e-9 < eps < 0.0 else eps


def equidepth_epsilon(labels_in_order: np.ndarray, group_sizes: np.ndarray, m: int) -> float:
    """Unfairness of the equi-depth split of one ordering, from label counts alone."""
    n = len(labels_in_order)
    counts = position_counts(labels_in_order, equidepth_position_buckets(n, m),
                             len(group_sizes), m)
    return pairwise_epsilon_of_counts(counts, group_sizes, m)


def realize_position_cuts(sorted_scores: np.ndarray, cut_positions) -> np.ndarray:
    """Turn desired ordering cuts into realizable ones.

    A cut at position c separates positions c-1 and c and needs
    ``scores[c-1] < scores[c]`` to be expressible as a real threshold. Cuts
    landing inside a run of duplicate scores shift right to the nearest
    strict increase; cuts that collide afterwards are merged (the points
    swept over follow the bin to their left).
    """
    cuts = np.asarray(cut_positions, dtype=np.int64)
    n = len(sorted_scores)
    if cuts.size == 0:
        return cuts
    if cuts.min() < 1 or cuts.max() > n - 1:
        raise ValueError("cut positions must lie in [1, n-1]")
    # gap_positions[i] is a position g where scores[g-1] < scores[g]
    gap_positions = np.flatnonzero(np.diff(sorted_scores) > 0) + 1
    if gap_positions.size == 0:
        return np.empty(0, dtype=np.int64)
    idx = np.searchsorted(gap_positions, cuts, side="left")
    keep = idx < len(gap_positions)
    realized = np.unique(gap_positions[idx[keep]])
    return realized


def model_from_position_buckets(ordering: Ordering, bucket_of_position,
                                m: int, vector: ProjectionVector,
                                meta: dict | None = None) -> HashmapModel:
    """Materialize a model from a per-position bucket assignment.

    Equal-bucket runs merge into bins; boundaries land at midpoints of
    adjacent scores, shifting right past duplicate scores. Raises if the
    realization leaves some bucket without any bin.
    """
    assignment = np.asarray(bucket_of_position, dtype=np.int64)
    n = ordering.n
    if assignment.shape != (n,):
        raise ValueError("bucket assignment must cover every ordering position")
    desired = np.flatnonzero(np.diff(assignment) != 0) + 1
    realized = realize_position_cuts(ordering.scores, desired)
    starts = np.concatenate(([0], realized))
    bin_buckets = assignment[starts]
    # collapse adjacent bins that ended up in the same bucket
    keep = np.concatenate(([True], bin_buckets[1:] != bin_buckets[:-1]))
    bin_buckets = bin_buckets[keep]
    realized = realized[keep[1:]]
    if len(np.unique(bin_buckets)) != m:
        raise ValueError(
            "cannot realize all buckets as score thresholds: duplicate scores "
            "swallowed every bin of some bucket")
    boundaries = (ordering.scores[realized - 1] + ordering.scores[realized]) / 2.0
    return HashmapModel(vector, boundaries, bin_buckets, m, meta=dict(meta or {}))
