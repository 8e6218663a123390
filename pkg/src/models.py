"""Statistical models behind the predictive strategies, written on numpy.

Linear least squares goes through a QR factorization (never an explicit
normal-equations inverse). k-NN is brute force with stable tie-breaking so
every prediction is reproducible.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from errors import (
    DegenerateInput,
    DimensionMismatch,
    EmptyMatrix,
    InvalidCandidate,
    KTooLarge,
    SingularSystem,
    TooFewRows,
    TooFewRowsForFolds,
    ZeroVariance,
)

DEFAULT_RIDGE = 1e-8
DEFAULT_K_CANDIDATES = tuple(range(2, 16))
DEFAULT_FOLDS = 5
# Relative size of the smallest R diagonal below which a design is treated as
# rank deficient.
RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Feature rows (one per trading day) with optional next-day targets."""

    rows: np.ndarray
    targets: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        if rows.size == 0:
            rows = rows.reshape(0, rows.shape[-1] if rows.ndim == 2 else 0)
        object.__setattr__(self, "rows", rows)
        if self.targets is not None:
            targets = np.asarray(self.targets, dtype=np.float64).ravel()
            if len(targets) != len(rows):
                raise DimensionMismatch(
                    f"{len(targets)} targets for {len(rows)} feature rows."
                )
            object.__setattr__(self, "targets", targets)

    def __len__(self):
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def subset(self, index) -> "FeatureMatrix":
        return FeatureMatrix(
            self.rows[index], None if self.targets is None else self.targets[index]
        )

    def require_targets(self) -> np.ndarray:
        if self.targets is None:
            raise DimensionMismatch("Feature matrix has no targets to fit against.")
        return self.targets


# --- scaling -------------------------------------------------------------------


class ScalerKind(str, Enum):
    STANDARDIZE = "standardize"
    MINMAX = "minmax"


@dataclass(frozen=True, eq=False)
class ScalerParams:
    """Per-column centre and spread. A zero spread maps the column to zeros."""

    kind: ScalerKind
    centre: np.ndarray
    spread: np.ndarray


def fit_scaler(kind: ScalerKind, X: FeatureMatrix) -> ScalerParams:
    if len(X) == 0:
        raise EmptyMatrix("Cannot fit a scaler on an empty matrix.")
    kind = ScalerKind(kind)
    if kind is ScalerKind.STANDARDIZE:
        centre = X.rows.mean(axis=0)
        spread = X.rows.std(axis=0, ddof=0)
    else:
        centre = X.rows.min(axis=0)
        spread = X.rows.max(axis=0) - centre
    return ScalerParams(kind, centre, spread)


def apply_scaler(params: ScalerParams, X: FeatureMatrix) -> FeatureMatrix:
    if X.n_features != len(params.centre):
        raise DimensionMismatch(
            f"Scaler fitted on {len(params.centre)} columns, got {X.n_features}."
        )
    safe = np.where(params.spread > 0, params.spread, 1.0)
    scaled = np.where(params.spread > 0, (X.rows - params.centre) / safe, 0.0)
    return FeatureMatrix(scaled, X.targets)


# --- splitting -----------------------------------------------------------------


def split_sizes(n_rows: int, test_fraction: float) -> Tuple[int, int]:
    # Round before ceil so 30 * 0.1 counts as 3 rather than 4.
    n_test = math.ceil(round(n_rows * test_fraction, 9))
    return n_rows - n_test, n_test


def train_test_split(
    X: FeatureMatrix, test_fraction: float = 0.2, seed: int = 0
) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Seeded random partition; the test side gets ceil(N * test_fraction) rows."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}.")
    n = len(X)
    if n < 2:
        raise TooFewRows(f"Need at least 2 rows to split, got {n}.")
    n_train, n_test = split_sizes(n, test_fraction)
    if n_train < 1:
        raise TooFewRows(f"Split of {n} rows at {test_fraction} leaves no training rows.")
    order = np.random.default_rng(seed).permutation(n)
    return X.subset(np.sort(order[n_test:])), X.subset(np.sort(order[:n_test]))


# --- least squares -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    intercept: float
    ridge_applied: bool = False


def _is_rank_deficient(r: np.ndarray) -> bool:
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return False
    return diag.min() <= RANK_RTOL * max(diag.max(), 1.0)


def _qr_solve(design: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Least-squares coefficients via reduced QR; flags rank deficiency."""
    q, r = np.linalg.qr(design, mode="reduced")
    if _is_rank_deficient(r):
        return np.full(design.shape[1], np.nan), True
    return solve_triangular(r, q.T @ y, lower=False), False


def fit_linear(X: FeatureMatrix, ridge: Optional[float] = DEFAULT_RIDGE) -> LinearModel:
    """Ordinary least squares with intercept.

    A rank-deficient design (e.g. a constant volume column over a short
    window) is refitted with a ridge penalty on the weights, not the
    intercept. With `ridge` set to None or 0 it raises SingularSystem instead.
    """
    y = X.require_targets()
    n, p = X.rows.shape
    if n < p + 1:
        raise TooFewRows(f"Need at least {p + 1} rows for {p} features, got {n}.")
    design = np.column_stack([X.rows, np.ones(n)])
    coef, deficient = _qr_solve(design, y)
    if not deficient:
        return LinearModel(coef[:-1], float(coef[-1]))
    if not ridge:
        raise SingularSystem("Design matrix is rank deficient and ridge fallback is disabled.")

    penalty = np.hstack([math.sqrt(ridge) * np.eye(p), np.zeros((p, 1))])
    coef, deficient = _qr_solve(np.vstack([design, penalty]), np.concatenate([y, np.zeros(p)]))
    if deficient:
        raise SingularSystem("Design matrix is singular even with the ridge penalty.")
    return LinearModel(coef[:-1], float(coef[-1]), ridge_applied=True)


def predict_linear(model: LinearModel, row) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.shape[-1] != len(model.weights):
        raise DimensionMismatch(f"Model has {len(model.weights)} weights, row has {row.shape[-1]}.")
    return row @ model.weights + model.intercept


@dataclass(frozen=True)
class QuadraticFit:
    """y = a x^2 + b x + c, with the stationary point when a != 0."""

    a: float
    b: float
    c: float
    vertex: Optional[Tuple[float, float]] = None

    def __call__(self, x):
        return self.a * x * x + self.b * x + self.c


def fit_quadratic(points: Sequence[Tuple[float, float]]) -> QuadraticFit:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or len(np.unique(pts[:, 0])) < 3:
        raise DegenerateInput("Quadratic fit needs at least 3 distinct x values.")
    x, y = pts[:, 0], pts[:, 1]
    (a, b, c), deficient = _qr_solve(np.column_stack([x * x, x, np.ones_like(x)]), y)
    if deficient:
        raise DegenerateInput("Quadratic design matrix is rank deficient.")
    fit = QuadraticFit(float(a), float(b), float(c))
    if fit.a == 0:
        return fit
    vx = -fit.b / (2 * fit.a)
    return replace(fit, vertex=(vx, fit(vx)))


# --- k nearest neighbours ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KnnModel:
    rows: np.ndarray
    targets: np.ndarray
    k: int


def fit_knn(X: FeatureMatrix, k: int) -> KnnModel:
    y = X.require_targets()
    if k < 1:
        raise InvalidCandidate(f"k must be at least 1, got {k}.")
    if k > len(X):
        raise KTooLarge(f"k={k} exceeds the {len(X)} stored rows.")
    return KnnModel(X.rows, y, int(k))


def predict_knn_many(model: KnnModel, rows) -> np.ndarray:
    """Unweighted mean of the k nearest targets; ties go to the lower row index."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != model.rows.shape[1]:
        raise DimensionMismatch(
            f"Query has {rows.shape[1]} features, model stores {model.rows.shape[1]}."
        )
    diff = rows[:, None, :] - model.rows[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, : model.k]
    return model.targets[nearest].mean(axis=1)


def predict_knn(model: KnnModel, row) -> float:
    return float(predict_knn_many(model, row)[0])


# --- scoring and model selection -----------------------------------------------


def r2_score(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if len(predicted) != len(actual) or len(actual) == 0:
        raise DimensionMismatch(
            f"R^2 needs equal non-zero lengths, got {len(predicted)} and {len(actual)}."
        )
    ss_tot = np.sum((actual - actual.mean()) ** 2)
    if ss_tot == 0:
        raise ZeroVariance("R^2 is undefined when the actual values are constant.")
    return float(1.0 - np.sum((actual - predicted) ** 2) / ss_tot)


@dataclass(frozen=True)
class CvGridResult:
    scores: List[Tuple[int, float]] = field(default_factory=list)
    best_k: int = 0


def kfold_blocks(n_rows: int, folds: int, seed: int) -> List[np.ndarray]:
    """Contiguous blocks of a seeded permutation."""
    order = np.random.default_rng(seed).permutation(n_rows)
    return np.array_split(order, folds)


def grid_search_k(
    X: FeatureMatrix,
    candidates: Sequence[int] = DEFAULT_K_CANDIDATES,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
) -> CvGridResult:
    """Pick k by mean cross-validated R^2; ties go to the smallest k.

    Folds whose held-out targets are constant have no R^2 and are left out of
    that candidate's mean; a candidate with no scored fold ranks last.
    """
    y = X.require_targets()
    if folds < 2:
        raise TooFewRowsForFolds(f"Cross-validation needs at least 2 folds, got {folds}.")
    if len(X) < folds:
        raise TooFewRowsForFolds(f"{len(X)} rows cannot be split into {folds} folds.")
    candidates = sorted(set(int(k) for k in candidates))
    if not candidates:
        raise InvalidCandidate("No k candidates given.")

    blocks = kfold_blocks(len(X), folds, seed)
    smallest_train = len(X) - max(len(b) for b in blocks)
    bad = [k for k in candidates if k < 1 or k > smallest_train]
    if bad:
        raise InvalidCandidate(
            f"k candidates {bad} are outside 1..{smallest_train} (smallest training fold)."
        )

    fold_scores = {k: [] for k in candidates}
    for i, held_out in enumerate(blocks):
        train_idx = np.concatenate([b for j, b in enumerate(blocks) if j != i])
        train_rows, train_y = X.rows[train_idx], y[train_idx]
        val_rows, val_y = X.rows[held_out], y[held_out]
        if np.all(val_y == val_y[0]):
            continue
        diff = val_rows[:, None, :] - train_rows[None, :, :]
        order = np.argsort(np.einsum("ijk,ijk->ij", diff, diff), axis=1, kind="stable")
        for k in candidates:
            predicted = train_y[order[:, :k]].mean(axis=1)
            fold_scores[k].append(r2_score(predicted, val_y))

    scores = [(k, float(np.mean(s)) if s else float("nan")) for k, s in fold_scores.items()]
    best_k, best = candidates[0], -math.inf
    for k, score in scores:
        if not math.isnan(score) and score > best:
            best_k, best = k, score
    return CvGridResult(scores=scores, best_k=best_k)
