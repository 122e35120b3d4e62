"""Multi-class SVM: Gaussian-RBF kernel, SMO dual solver, one-vs-rest ensemble.

The binary solver optimizes the soft-margin dual

    min 0.5 a' Q a - e' a   s.t. 0 <= a_i <= C, sum y_i a_i = 0,
    Q_ij = y_i y_j K(x_i, x_j),  K(x, z) = exp(-gamma ||x - z||^2)

by repeatedly updating the maximal-KKT-violating pair (deterministic, ties to
the lowest index), stopping when the violation gap m - M drops to tol. The
bias b = (m + M) / 2 then satisfies every point's KKT condition within tol.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError, VersionMismatchError
from .features import FEATURE_CATALOG_VERSION

SVM_FORMAT_VERSION = 1

DEFAULT_C = 10.0
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 400_000

GAMMA_GRID = tuple(2.0**p for p in range(-6, 3))
VARIANCE_FLOOR = 1e-8


def pairwise_sq_dists(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (len(X), len(Z)). Clipped at 0."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    d = (
        (X * X).sum(axis=1)[:, None]
        + (Z * Z).sum(axis=1)[None, :]
        - 2.0 * (X @ Z.T)
    )
    return np.maximum(d, 0.0)


def rbf_kernel(x: np.ndarray, z: np.ndarray, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise ValueError(f"kernel arguments differ in shape: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-gamma * (d @ d)))


def rbf_gram(X: np.ndarray, Z: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * pairwise_sq_dists(X, Z))


@dataclass(frozen=True)
class BinarySvm:
    """Soft-margin RBF SVM: only support vectors (alpha > 0) are stored."""

    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray  # (m,), entries alpha_i * y_i
    bias: float
    C: float
    gamma: float

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        K = rbf_gram(X, self.support_vectors, self.gamma)
        return K @ self.dual_coef + self.bias


@dataclass
class SmoSolution:
    model: BinarySvm
    alpha: np.ndarray
    kkt_gap: float
    iterations: int
    objective_history: list[float] = field(default_factory=list)


def smo_solve(
    X: np.ndarray,
    y: np.ndarray,
    C: float = DEFAULT_C,
    gamma: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    K: np.ndarray | None = None,
    record_objective: bool = False,
) -> SmoSolution:
    """Run SMO to tolerance and return the model plus solver state.

    y must contain both -1 and +1. Pass a precomputed Gram matrix K to share
    it across one-vs-rest binaries.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if X.shape[0] != n:
        raise ValueError("X and y lengths differ")
    if not ((y == 1).any() and (y == -1).any()):
        raise ValueError("training data must contain both classes")
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    if K is None:
        K = rbf_gram(X, X, gamma)

    alpha = np.zeros(n)
    # v_i = y_i - sum_j alpha_j y_j K_ij; the optimal bias must satisfy
    # v_i <= b for every i in I_up and b <= v_j for every j in I_low, so the
    # largest up-side v minus the smallest low-side v is the KKT violation.
    v = y.copy()
    pos = y > 0
    dual_objective = 0.0
    history = [0.0] if record_objective else []

    it = 0
    while True:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (~pos & (alpha < C)) | (pos & (alpha > 0))
        v_up = np.where(up, v, -np.inf)
        v_low = np.where(low, v, np.inf)
        i = int(np.argmax(v_up))
        j = int(np.argmin(v_low))
        gap = v_up[i] - v_low[j]
        if gap <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not reach tol={tol} in {max_iter} iterations "
                f"(KKT violation {gap:.3e})"
            )
        quad = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        cap_i = C - alpha[i] if pos[i] else alpha[i]
        cap_j = alpha[j] if pos[j] else C - alpha[j]
        t = min(gap / quad, cap_i, cap_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = min(max(alpha[j], 0.0), C)
        v += t * (K[j] - K[i])
        dual_objective += t * gap - 0.5 * t * t * quad
        if record_objective:
            history.append(dual_objective)
        it += 1

    bias = float((v_up[i] + v_low[j]) / 2.0)
    sv = alpha > 0
    model = BinarySvm(
        support_vectors=X[sv].copy(),
        dual_coef=(alpha[sv] * y[sv]),
        bias=bias,
        C=C,
        gamma=gamma,
    )
    return SmoSolution(
        model=model,
        alpha=alpha,
        kkt_gap=float(gap),
        iterations=it,
        objective_history=history,
    )


def train_binary(
    X: np.ndarray,
    y: np.ndarray,
    C: float = DEFAULT_C,
    gamma: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    K: np.ndarray | None = None,
) -> BinarySvm:
    return smo_solve(X, y, C=C, gamma=gamma, tol=tol, max_iter=max_iter, K=K).model


def kkt_violations(alpha: np.ndarray, margins: np.ndarray, C: float) -> np.ndarray:
    """Per-point violation of the margin KKT conditions.

    alpha = 0      requires y f(x) >= 1
    0 < alpha < C  requires y f(x) == 1
    alpha = C      requires y f(x) <= 1
    """
    alpha = np.asarray(alpha, dtype=float)
    margins = np.asarray(margins, dtype=float)
    viol = np.empty(len(alpha))
    at_zero = alpha <= 0
    at_c = alpha >= C
    free = ~(at_zero | at_c)
    viol[at_zero] = np.maximum(0.0, 1.0 - margins[at_zero])
    viol[at_c] = np.maximum(0.0, margins[at_c] - 1.0)
    viol[free] = np.abs(margins[free] - 1.0)
    return viol


@dataclass(frozen=True)
class SvmModel:
    """One-vs-rest ensemble over a fixed, canonical class order."""

    classes: tuple[str, ...]
    binaries: tuple[BinarySvm, ...]
    feature_catalog_version: str = FEATURE_CATALOG_VERSION

    def __post_init__(self):
        if len(self.classes) < 2 or len(self.binaries) != len(self.classes):
            raise ValueError("need one binary per class and at least two classes")


def _check_version(model: SvmModel) -> None:
    if model.feature_catalog_version != FEATURE_CATALOG_VERSION:
        raise VersionMismatchError(
            f"model built for catalog {model.feature_catalog_version!r}, "
            f"library provides {FEATURE_CATALOG_VERSION!r}"
        )


def train_one_vs_rest(
    X: np.ndarray,
    labels,
    classes: tuple[str, ...],
    C: float = DEFAULT_C,
    gamma: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SvmModel:
    """Train one binary per class; the Gram matrix is computed once."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    present = set(labels.tolist())
    missing = [c for c in classes if c not in present]
    if missing:
        raise ValueError(f"classes absent from training data: {missing}")
    K = rbf_gram(X, X, gamma)
    binaries = []
    for cls in classes:
        y = np.where(labels == cls, 1.0, -1.0)
        binaries.append(
            train_binary(X, y, C=C, gamma=gamma, tol=tol, max_iter=max_iter, K=K)
        )
    return SvmModel(classes=tuple(classes), binaries=tuple(binaries))


def decision_matrix(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """(n, n_classes) one-vs-rest decision values."""
    _check_version(model)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([b.decision(X) for b in model.binaries])


def predict(model: SvmModel, x: np.ndarray) -> tuple[str, dict[str, float]]:
    """Argmax class over the one-vs-rest decisions; ties go to the earlier class."""
    scores = decision_matrix(model, np.asarray(x, dtype=float)[None, :])[0]
    idx = int(np.argmax(scores))
    return model.classes[idx], {c: float(s) for c, s in zip(model.classes, scores)}


def predict_batch(model: SvmModel, X: np.ndarray) -> list[str]:
    scores = decision_matrix(model, X)
    return [model.classes[i] for i in np.argmax(scores, axis=1)]


# ---------------------------------------------------------------------------
# Gamma selection: 5-fold cross-validation over a fixed power-of-two grid.


def deterministic_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """Stratified fold assignment: seeded shuffle, then round-robin per class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assignment = np.zeros(len(labels), dtype=int)
    for cls in sorted(set(labels.tolist())):
        idx = np.where(labels == cls)[0]
        idx = rng.permutation(idx)
        assignment[idx] = np.arange(len(idx)) % k
    return [np.where(assignment == f)[0] for f in range(k)]


def fallback_gamma(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    var = max(float(X.var(axis=0).mean()), VARIANCE_FLOOR)
    return 1.0 / (X.shape[1] * var)


def _folds_feasible(labels, folds, classes) -> bool:
    if any(len(f) == 0 for f in folds):
        return False
    for f in range(len(folds)):
        train_idx = np.concatenate([folds[g] for g in range(len(folds)) if g != f])
        train_present = set(np.asarray(labels)[train_idx].tolist())
        if any(c not in train_present for c in classes):
            return False
    return True


def cv_gamma_accuracy(
    X,
    labels,
    gamma: float,
    classes: tuple[str, ...],
    folds: list[np.ndarray],
    C: float = DEFAULT_C,
    tol: float = DEFAULT_TOL,
) -> float:
    """Mean held-out accuracy of a one-vs-rest model at one gamma value."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    d2 = pairwise_sq_dists(X, X)
    accs = []
    for f, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[g] for g in range(len(folds)) if g != f])
        K_train = np.exp(-gamma * d2[np.ix_(train_idx, train_idx)])
        binaries = []
        for cls in classes:
            y = np.where(labels[train_idx] == cls, 1.0, -1.0)
            binaries.append(
                train_binary(X[train_idx], y, C=C, gamma=gamma, tol=tol, K=K_train)
            )
        sub = SvmModel(classes=tuple(classes), binaries=tuple(binaries))
        pred = predict_batch(sub, X[test_idx])
        accs.append(float(np.mean(pred == labels[test_idx])))
    return float(np.mean(accs))


def select_gamma(
    X,
    labels,
    C: float = DEFAULT_C,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    grid: tuple[float, ...] = GAMMA_GRID,
    n_folds: int = 5,
) -> float:
    """Best-mean-accuracy gamma over the grid; deterministic seeded folds.

    Falls back to 1 / (d * mean feature variance) when any fold's training
    split would miss a class. Grid ties resolve to the smaller gamma.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if len(labels) < 10:
        raise ValueError("gamma selection needs at least 10 samples")
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise ValueError("gamma selection needs at least two classes")
    folds = deterministic_folds(labels, n_folds, seed)
    if not _folds_feasible(labels, folds, classes):
        return fallback_gamma(X)
    best_gamma, best_acc = grid[0], -1.0
    for gamma in grid:
        acc = cv_gamma_accuracy(X, labels, gamma, classes, folds, C=C, tol=tol)
        if acc > best_acc:
            best_gamma, best_acc = gamma, acc
    return float(best_gamma)


# ---------------------------------------------------------------------------
# Serialization.


def svm_to_dict(model: SvmModel) -> dict:
    return {
        "format_version": SVM_FORMAT_VERSION,
        "kind": "svm-ovr",
        "feature_catalog_version": model.feature_catalog_version,
        "classes": list(model.classes),
        "binaries": [
            {
                "gamma": b.gamma,
                "C": b.C,
                "bias": b.bias,
                "dual_coefs": b.dual_coef.tolist(),
                "support_vectors": b.support_vectors.tolist(),
            }
            for b in model.binaries
        ],
    }


def svm_from_dict(doc: dict) -> SvmModel:
    try:
        if doc.get("kind") != "svm-ovr":
            raise ValueError(f"not an svm model file (kind={doc.get('kind')!r})")
        if doc["format_version"] != SVM_FORMAT_VERSION:
            raise ValueError(f"unsupported svm format_version {doc['format_version']}")
        binaries = tuple(
            BinarySvm(
                support_vectors=np.array(b["support_vectors"], dtype=float),
                dual_coef=np.array(b["dual_coefs"], dtype=float),
                bias=float(b["bias"]),
                C=float(b["C"]),
                gamma=float(b["gamma"]),
            )
            for b in doc["binaries"]
        )
        return SvmModel(
            classes=tuple(doc["classes"]),
            binaries=binaries,
            feature_catalog_version=doc["feature_catalog_version"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed svm model file: {exc}") from exc


def save_svm(model: SvmModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(svm_to_dict(model), fp)
        fp.write("\n")


def load_svm(path) -> SvmModel:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt svm model file {path}: {exc}") from exc
    model = svm_from_dict(doc)
    _check_version(model)
    return model
