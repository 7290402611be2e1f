"""Sparse soil-by-plant rating matrices and cosine-similarity completion.

A rating matrix holds integer scores 1..5 of how well each plant suits each
soil; missing cells are 0 internally and empty fields in CSV.  Completion
fills a missing cell from the k most cosine-similar soils that rated the
same plant, using a similarity-weighted average.  A seeded generator builds
synthetic soils plus a ground-truth matrix from fixed per-plant ideal
profiles, and the evaluator tallies a 5x5 confusion matrix over masked
cells.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RATING_MIN = 1
RATING_MAX = 5
DEFAULT_NEIGHBORS = 20
FALLBACK_RATING = 3  # mid-scale, used when a plant has no ratings at all

# Soil feature sampling ranges: N, P, K in ppm, temperature in deg C, pH.
FEATURE_NAMES = ("n_ppm", "p_ppm", "k_ppm", "temp_c", "ph")
FEATURE_LOW = np.array([0.0, 0.0, 0.0, 8.0, 3.5])
FEATURE_HIGH = np.array([140.0, 140.0, 140.0, 43.0, 9.9])


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class ConfigurationError(ValueError):
    """Requested dataset or mask parameters cannot be satisfied."""


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SoilProfile:
    """One soil sample: macro-nutrients in ppm, temperature, pH."""

    n_ppm: float
    p_ppm: float
    k_ppm: float
    temp_c: float
    ph: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.ph <= 14.0:
            raise ConfigurationError(f"ph must be in [0, 14], got {self.ph}")
        for name in ("n_ppm", "p_ppm", "k_ppm"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.n_ppm, self.p_ppm, self.k_ppm, self.temp_c, self.ph])


class SparseRatingMatrix:
    """m x n integer ratings with 0 marking a missing cell."""

    def __init__(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.int64)
        if values.ndim != 2:
            raise DimensionError("rating matrix must be 2-D")
        present = values[values != 0]
        if present.size and (present.min() < RATING_MIN or present.max() > RATING_MAX):
            raise ConfigurationError("present ratings must be in 1..5")
        if values.min() < 0:
            raise ConfigurationError("missing cells are encoded as 0, negatives invalid")
        self.values = values

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def sparsity(self) -> float:
        return float(np.count_nonzero(self.values == 0)) / self.values.size


class FullRatingMatrix:
    """Completed matrix: every cell rated, with per-cell provenance.

    ``observed`` is True where the value came straight from the source
    sparse matrix, False where it was predicted.
    """

    def __init__(self, values: np.ndarray, observed: np.ndarray | None = None) -> None:
        values = np.asarray(values, dtype=np.int64)
        if values.ndim != 2:
            raise DimensionError("rating matrix must be 2-D")
        if values.min() < RATING_MIN or values.max() > RATING_MAX:
            raise ConfigurationError("full matrix cells must all be in 1..5")
        if observed is None:
            observed = np.ones(values.shape, dtype=bool)
        observed = np.asarray(observed, dtype=bool)
        if observed.shape != values.shape:
            raise DimensionError("observed mask must match value shape")
        self.values = values
        self.observed = observed

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass
class ConfusionMatrix5:
    """5x5 counts, rows = true rating, columns = predicted rating."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (5, 5):
            raise DimensionError("confusion matrix must be 5x5")
        if self.counts.min() < 0:
            raise ConfigurationError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def to_json_obj(self, **extra) -> dict:
        obj = {"counts": self.counts.tolist(), "accuracy": self.accuracy}
        obj.update(extra)
        return obj


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    """cos(x, y) = x.y / (|x||y|) with missing entries zero-filled; 0 if a norm is 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError("rows must be 1-D and of equal length")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.dot(x, y) / (nx * ny))


def similarity_matrix(s: SparseRatingMatrix) -> np.ndarray:
    """All-pairs row cosine similarities; empty rows get a zero diagonal."""
    r = s.values.astype(float)
    norms = np.linalg.norm(r, axis=1)
    unit = np.divide(r, norms[:, None], out=np.zeros_like(r), where=norms[:, None] > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, np.where(norms > 0, 1.0, 0.0))
    return sim


def _top_k_weighted(cand_sims: np.ndarray, cand_vals: np.ndarray, k: int) -> float | None:
    """Similarity-weighted mean over the top-k positive-similarity candidates.

    Candidates arrive in ascending row order; ties at the k-th similarity are
    resolved toward the lower row index.  Returns None when no candidate has
    positive similarity.
    """
    pos = cand_sims > 0.0
    if not pos.any():
        return None
    sims = cand_sims[pos]
    vals = cand_vals[pos]
    if sims.size > k:
        kth = np.partition(sims, sims.size - k)[sims.size - k]
        above = np.flatnonzero(sims > kth)
        at = np.flatnonzero(sims == kth)[: k - above.size]
        sel = np.concatenate([above, at])
        sims = sims[sel]
        vals = vals[sel]
    return float(np.dot(sims, vals) / sims.sum())


def complete_matrix(s: SparseRatingMatrix, k: int = DEFAULT_NEIGHBORS) -> FullRatingMatrix:
    """Fill every missing cell from the k most similar soils that rated that plant.

    Prediction = similarity-weighted average of the neighbors' ratings,
    rounded half-up and clamped to 1..5.  Fallbacks: the plant's mean rating
    when no neighbor has positive similarity, then mid-scale 3 when the plant
    has no ratings at all.  Observed cells are copied unchanged.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    r = s.values.astype(float)
    m, n = r.shape
    observed = s.values != 0
    out = s.values.copy()

    norms = np.linalg.norm(r, axis=1)
    unit = np.divide(r, norms[:, None], out=np.zeros_like(r), where=norms[:, None] > 0)
    col_raters = [np.flatnonzero(observed[:, j]) for j in range(n)]
    col_means = []
    for j in range(n):
        raters = col_raters[j]
        col_means.append(float(r[raters, j].mean()) if raters.size else None)

    chunk = max(1, min(m, 8_000_000 // max(m, 1)))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        sims_block = unit[lo:hi] @ unit.T
        for i in range(lo, hi):
            missing = np.flatnonzero(~observed[i])
            if missing.size == 0:
                continue
            sims_row = sims_block[i - lo]
            for j in missing:
                raters = col_raters[j]
                if raters.size:
                    est = _top_k_weighted(sims_row[raters], r[raters, j], k)
                    if est is None:
                        est = col_means[j]
                else:
                    est = None
                pred = FALLBACK_RATING if est is None else round_half_up(est)
                out[i, j] = min(max(pred, RATING_MIN), RATING_MAX)
    return FullRatingMatrix(out, observed)


# Fixed per-plant ideal soil profiles (mu) and tolerances (sigma), columns in
# FEATURE_NAMES order.  Values were tuned offline so that the rating
# distribution concentrates in classes 2 and 3 with every class populated,
# and so that distinct plants respond to visibly different soil regions.
PLANT_MU = np.array([
    [17.4, 86.9, 123.0, 20.0, 3.8],
    [125.7, 42.1, 15.9, 31.4, 8.3],
    [105.8, 4.9, 48.6, 32.2, 6.8],
    [54.3, 105.6, 22.1, 12.7, 9.9],
    [38.0, 35.3, 79.1, 25.8, 9.9],
    [38.7, 50.7, 128.9, 30.7, 3.5],
    [102.2, 68.9, 12.7, 31.5, 8.4],
    [20.9, 78.9, 116.2, 20.8, 7.4],
    [88.3, 89.7, 16.4, 33.5, 4.2],
    [40.5, 114.2, 48.7, 24.3, 6.9],
    [126.7, 52.2, 84.2, 14.2, 9.9],
    [14.8, 119.3, 62.1, 13.4, 6.1],
    [107.3, 36.7, 126.6, 25.5, 9.1],
    [112.0, 97.4, 111.8, 39.7, 9.9],
    [18.0, 136.6, 2.0, 27.4, 9.9],
])
PLANT_SIGMA = np.array([
    [60.0, 29.9, 29.9, 20.7, 3.4],
    [60.0, 29.9, 29.9, 20.7, 3.4],
    [29.9, 60.0, 29.9, 20.7, 1.3],
    [60.0, 29.9, 60.0, 7.5, 1.3],
    [29.9, 60.0, 60.0, 7.5, 1.3],
    [60.0, 60.0, 29.9, 7.5, 3.4],
    [60.0, 29.9, 60.0, 7.5, 3.4],
    [29.9, 29.9, 60.0, 20.7, 1.3],
    [29.9, 60.0, 29.9, 20.7, 3.4],
    [29.9, 60.0, 29.9, 20.7, 1.3],
    [60.0, 60.0, 60.0, 7.5, 1.3],
    [29.9, 60.0, 60.0, 7.5, 3.4],
    [29.9, 29.9, 60.0, 7.5, 3.4],
    [60.0, 29.9, 29.9, 7.5, 3.4],
    [29.9, 29.9, 60.0, 20.7, 1.3],
])
RATING_ALPHA = 0.95

# Soils are sampled as jittered members of a fixed number of archetype bands
# inside the feature ranges: real plots cluster around recurring soil types,
# and the completion stage needs genuinely similar soils to exist.  The
# archetype centers sit exactly on the plant ideals, so every rating class,
# including 5, is populated.
N_ARCHETYPES = 15
ARCHETYPE_JITTER = 0.003  # stddev of member noise, as a fraction of each span


def _truth_ratings(features: np.ndarray) -> np.ndarray:
    """clamp(round(5 - alpha*d), 1, 5) with d the sigma-normalized distance."""
    # (m, plants, features) deviations
    dev = (features[:, None, :] - PLANT_MU[None, :, :]) / PLANT_SIGMA[None, :, :]
    d = np.sqrt((dev**2).sum(axis=2))
    raw = np.floor(5.0 - RATING_ALPHA * d + 0.5)  # round half up
    return np.clip(raw, RATING_MIN, RATING_MAX).astype(np.int64)


def generate_dataset(
    num_soils: int, num_plants: int = 15, seed: int = 0
) -> tuple[list[SoilProfile], FullRatingMatrix]:
    """Seeded synthetic soils plus their ground-truth rating matrix.

    Soils are drawn around the plant ideal profiles (one tight cluster per
    plant, quantized to 3 decimals so CSV round-trips are exact); the rating
    of soil i for plant j falls off with the sigma-normalized distance from
    plant j's ideal profile.  Only up to 15 plant profiles are defined.
    """
    if num_soils < 1:
        raise ConfigurationError("num_soils must be >= 1")
    if not 1 <= num_plants <= PLANT_MU.shape[0]:
        raise ConfigurationError(f"num_plants must be in 1..{PLANT_MU.shape[0]}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centers = rng.uniform(FEATURE_LOW, FEATURE_HIGH, size=(N_ARCHETYPES, 5))
    n_ideal = min(PLANT_MU.shape[0], N_ARCHETYPES)
    centers[:n_ideal] = PLANT_MU[:n_ideal]
    member = rng.integers(0, N_ARCHETYPES, size=num_soils)
    noise = rng.normal(0.0, 1.0, size=(num_soils, 5)) * (
        (FEATURE_HIGH - FEATURE_LOW) * ARCHETYPE_JITTER
    )
    raw = np.clip(centers[member] + noise, FEATURE_LOW, FEATURE_HIGH)
    features = np.round(raw, 3)
    ratings = _truth_ratings(features)[:, :num_plants]
    soils = [SoilProfile(*row) for row in features.tolist()]
    return soils, FullRatingMatrix(ratings)


def mask(truth: FullRatingMatrix, sparsity: float, seed: int = 0) -> SparseRatingMatrix:
    """Remove round(sparsity*m*n) seeded-random cells, keeping every row and
    column at least one rating.  Raises when that many cells cannot be
    removed without breaking the floor."""
    if not 0.0 <= sparsity < 1.0:
        raise ConfigurationError(f"sparsity must be in [0, 1), got {sparsity}")
    m, n = truth.m, truth.n
    target = round_half_up(sparsity * m * n)
    values = truth.values.copy()
    if target == 0:
        return SparseRatingMatrix(values)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(m * n)
    row_left = np.full(m, n)
    col_left = np.full(n, m)
    removed = 0
    for cell in order:
        if removed == target:
            break
        i, j = divmod(int(cell), n)
        if row_left[i] <= 1 or col_left[j] <= 1:
            continue
        values[i, j] = 0
        row_left[i] -= 1
        col_left[j] -= 1
        removed += 1
    if removed < target:
        raise ConfigurationError(
            f"cannot reach sparsity {sparsity} on a {m}x{n} matrix with the row/column floor"
        )
    return SparseRatingMatrix(values)


def evaluate_completion(
    truth: FullRatingMatrix, completed: FullRatingMatrix, masked_cells: np.ndarray
) -> ConfusionMatrix5:
    """Confusion over the masked (predicted) cells only; rows true, columns predicted."""
    if truth.values.shape != completed.values.shape:
        raise DimensionError("truth and completed shapes differ")
    masked_cells = np.asarray(masked_cells, dtype=bool)
    if masked_cells.shape != truth.values.shape:
        raise DimensionError("masked_cells shape must match the matrices")
    t = truth.values[masked_cells]
    p = completed.values[masked_cells]
    counts = np.zeros((5, 5), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix5(counts)


# ---------------------------------------------------------------------------
# file formats


def rating_header(n: int) -> list[str]:
    return [f"plant_{j}" for j in range(n)]


def write_rating_csv(path: str | Path, matrix: SparseRatingMatrix | FullRatingMatrix) -> None:
    values = matrix.values
    sparse = isinstance(matrix, SparseRatingMatrix)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rating_header(values.shape[1]))
        for row in values:
            writer.writerow(["" if sparse and v == 0 else int(v) for v in row])


def read_sparse_csv(path: str | Path) -> SparseRatingMatrix:
    rows = _read_rating_rows(path)
    values = [[0 if cell == "" else int(cell) for cell in row] for row in rows]
    return SparseRatingMatrix(np.array(values, dtype=np.int64))


def read_full_csv(path: str | Path) -> FullRatingMatrix:
    rows = _read_rating_rows(path)
    values = [[int(cell) for cell in row] for row in rows]
    return FullRatingMatrix(np.array(values, dtype=np.int64))


def _read_rating_rows(path: str | Path) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty rating CSV") from None
        n = len(header)
        if header != rating_header(n):
            raise ConfigurationError(f"{path}: expected header plant_0..plant_{n - 1}")
        rows = [row for row in reader if row]
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    if any(len(row) != n for row in rows):
        raise ConfigurationError(f"{path}: ragged rows")
    return rows


def write_soils_csv(path: str | Path, soils: list[SoilProfile]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_NAMES)
        for s in soils:
            writer.writerow([s.n_ppm, s.p_ppm, s.k_ppm, s.temp_c, s.ph])


def read_soils_csv(path: str | Path) -> list[SoilProfile]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(FEATURE_NAMES):
            raise ConfigurationError(f"{path}: expected header {','.join(FEATURE_NAMES)}")
        soils = [SoilProfile(*(float(c) for c in row)) for row in reader if row]
    if not soils:
        raise ConfigurationError(f"{path}: no data rows")
    return soils


def write_confusion_json(path: str | Path, cm: ConfusionMatrix5, **extra) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cm.to_json_obj(**extra), fh, indent=2, sort_keys=True)
        fh.write("\n")
