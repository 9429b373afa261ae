"""RBF-kernel SVM trained by simplified SMO, with one-vs-one multiclass voting."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DimensionMismatchError, ModelFormatError, SingleClassError
from .forest import derive_seed

FORMAT_VERSION = 1
SV_EPS = 1e-8


@dataclass(frozen=True)
class SvmConfig:
    C: float = 250.0
    gamma: float = 1.0
    tol: float = 1e-3
    max_passes: int = 20
    max_iter: int = 100_000  # cap on examined multipliers, summed over sweeps
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_passes < 1 or self.max_iter < 1:
            raise ValueError("max_passes and max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class BinarySvmModel:
    support_vectors: np.ndarray  # (n_sv, d)
    alphas: np.ndarray
    labels: np.ndarray  # +1 / -1
    bias: float
    gamma: float

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


@dataclass(frozen=True, eq=False)
class MulticlassSvmModel:
    models: tuple  # ((class_a, class_b, BinarySvmModel), ...)
    class_count: int
    C: float
    gamma: float


@dataclass
class SmoResult:
    alphas: np.ndarray
    bias: float
    iterations: int
    converged: bool


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatchError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def dual_objective(alphas, y, K) -> float:
    ay = np.asarray(alphas) * np.asarray(y)
    return float(np.sum(alphas) - 0.5 * ay @ K @ ay)


def _validate_binary(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) matching y")
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("binary labels must be +1/-1")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise SingleClassError()
    return X, y


def _final_bias(alphas, y, K, C) -> float:
    g = y - K @ (alphas * y)  # bias that would put each point exactly on its margin
    free = (alphas > SV_EPS) & (alphas < C - SV_EPS)
    if free.any():
        return float(g[free].mean())
    at_zero = alphas <= SV_EPS
    at_c = ~at_zero
    lower = ((at_zero & (y > 0)) | (at_c & (y < 0)))
    upper = ((at_zero & (y < 0)) | (at_c & (y > 0)))
    lo = g[lower].max() if lower.any() else None
    hi = g[upper].min() if upper.any() else None
    if lo is None:
        return float(hi)
    if hi is None:
        return float(lo)
    return float((lo + hi) / 2.0)


def smo_solve(X, y, config: SvmConfig) -> SmoResult:
    """Simplified SMO: sweep over multipliers violating KKT by more than tol,
    pair each with a random partner, and stop after ``max_passes`` sweeps in a
    row make no progress (or ``max_iter`` examinations in total)."""
    X, y = _validate_binary(X, y)
    n = X.shape[0]
    C, tol = float(config.C), float(config.tol)
    K = rbf_gram(X, X, config.gamma)
    rng = np.random.default_rng(config.seed)
    a = np.zeros(n)
    b = 0.0
    E = -y.copy()  # f(x_i) - y_i with f = 0
    passes = 0
    examined = 0
    while passes < config.max_passes and examined < config.max_iter:
        changed = 0
        for i in range(n):
            examined += 1
            Ei = E[i]
            r = y[i] * Ei
            if not ((r < -tol and a[i] < C) or (r > tol and a[i] > 0)):
                continue
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            Ej = E[j]
            ai_old, aj_old = a[i], a[j]
            if y[i] != y[j]:
                L, H = max(0.0, aj_old - ai_old), min(C, C + aj_old - ai_old)
            else:
                L, H = max(0.0, ai_old + aj_old - C), min(C, ai_old + aj_old)
            if L >= H:
                continue
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                continue
            aj = min(H, max(L, aj_old - y[j] * (Ei - Ej) / eta))
            if abs(aj - aj_old) < 1e-12 * max(1.0, C):
                continue
            ai = min(C, max(0.0, ai_old + y[i] * y[j] * (aj_old - aj)))
            dai, daj = ai - ai_old, aj - aj_old
            b1 = b - Ei - y[i] * dai * K[i, i] - y[j] * daj * K[i, j]
            b2 = b - Ej - y[i] * dai * K[i, j] - y[j] * daj * K[j, j]
            if 0 < ai < C:
                b_new = b1
            elif 0 < aj < C:
                b_new = b2
            else:
                b_new = (b1 + b2) / 2.0
            a[i], a[j] = ai, aj
            E += y[i] * dai * K[i] + y[j] * daj * K[j] + (b_new - b)
            b = b_new
            changed += 1
            if examined >= config.max_iter:
                break
        passes = passes + 1 if changed == 0 else 0
    return SmoResult(a, _final_bias(a, y, K, C), examined, passes >= config.max_passes)


def smo_train(X, y, config: SvmConfig) -> BinarySvmModel:
    X, y = _validate_binary(X, y)
    res = smo_solve(X, y, config)
    keep = res.alphas > SV_EPS
    return BinarySvmModel(X[keep].copy(), res.alphas[keep].copy(), y[keep].copy(),
                          res.bias, float(config.gamma))


def decision_value(model: BinarySvmModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if model.support_vectors.shape[0] == 0:
        return float(model.bias)
    if x.shape != (model.dim,):
        raise DimensionMismatchError(f"expected {model.dim} features, got shape {x.shape}")
    d = model.support_vectors - x
    k = np.exp(-model.gamma * np.einsum("ij,ij->i", d, d))
    return float(np.dot(model.alphas * model.labels, k) + model.bias)


def decision_values(model: BinarySvmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if model.support_vectors.size == 0:
        return np.full(X.shape[0], float(model.bias))
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionMismatchError(f"expected {model.dim} features")
    k = rbf_gram(X, model.support_vectors, model.gamma)
    return k @ (model.alphas * model.labels) + model.bias


# --- one-vs-one --------------------------------------------------------------------


def train_ovo(X, y, config: SvmConfig, n_jobs: int = 1) -> MulticlassSvmModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    present = np.unique(y)
    if present.size < 2:
        raise SingleClassError()
    K = int(y.max()) + 1

    def one(pair):
        ca, cb = pair
        sel = (y == ca) | (y == cb)
        yy = np.where(y[sel] == ca, -1.0, 1.0)
        cfg = SvmConfig(config.C, config.gamma, config.tol, config.max_passes,
                        config.max_iter, derive_seed(config.seed, ca, cb))
        return (ca, cb, smo_train(X[sel], yy, cfg))

    pairs = list(combinations(range(K), 2))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            models = tuple(pool.map(one, pairs))
    else:
        models = tuple(one(p) for p in pairs)
    return MulticlassSvmModel(models, K, float(config.C), float(config.gamma))


def vote(pairwise, class_count: int) -> int:
    """Majority vote over ``(class_a, class_b, decision)`` triples.

    A positive decision votes for class_b. Ties go to the larger summed
    |decision| among the tied classes, then to the lowest class index.
    """
    votes = [0] * class_count
    margin = [0.0] * class_count
    for ca, cb, d in pairwise:
        winner = cb if d > 0 else ca
        votes[winner] += 1
        margin[winner] += abs(d)
    best = max(votes)
    tied = [c for c in range(class_count) if votes[c] == best]
    return max(tied, key=lambda c: (margin[c], -c))


def svm_predict(model: MulticlassSvmModel, x) -> int:
    return vote([(ca, cb, decision_value(m, x)) for ca, cb, m in model.models], model.class_count)


def svm_predict_batch(model: MulticlassSvmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    dv = [(ca, cb, decision_values(m, X)) for ca, cb, m in model.models]
    return np.array([vote([(ca, cb, d[i]) for ca, cb, d in dv], model.class_count)
                     for i in range(X.shape[0])], dtype=np.intp)


def grid_search(X_train, y_train, X_val, y_val, Cs=(1, 10, 100, 250, 1000),
                gammas=(0.1, 0.5, 1, 2), base: SvmConfig = SvmConfig()):
    """Validation accuracy for every (C, gamma) cell of the grid."""
    y_val = np.asarray(y_val)
    rows = []
    for C in Cs:
        for g in gammas:
            cfg = SvmConfig(float(C), float(g), base.tol, base.max_passes, base.max_iter, base.seed)
            model = train_ovo(X_train, y_train, cfg)
            acc = float(np.mean(svm_predict_batch(model, X_val) == y_val))
            rows.append({"C": float(C), "gamma": float(g), "val_accuracy": acc})
    return rows


# --- serialization -------------------------------------------------------------------


def svm_to_dict(model: MulticlassSvmModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "svm_ovo",
        "gamma": model.gamma,
        "C": model.C,
        "models": [
            {
                "class_a": ca,
                "class_b": cb,
                "support_vectors": m.support_vectors.tolist(),
                "alphas": m.alphas.tolist(),
                "labels": [int(v) for v in m.labels],
                "bias": m.bias,
            }
            for ca, cb, m in model.models
        ],
    }


def svm_from_dict(obj) -> MulticlassSvmModel:
    if not isinstance(obj, dict) or obj.get("kind") != "svm_ovo":
        raise ModelFormatError("not an svm_ovo model")
    if obj.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    try:
        gamma = float(obj["gamma"])
        C = float(obj["C"])
        models = []
        dim = None
        for rec in obj["models"]:
            sv = np.asarray(rec["support_vectors"], dtype=float)
            alphas = np.asarray(rec["alphas"], dtype=float)
            labels = np.asarray(rec["labels"], dtype=float)
            if sv.size == 0:
                sv = sv.reshape(0, dim or 0)
            if sv.ndim != 2 or sv.shape[0] != alphas.size or alphas.size != labels.size:
                raise ModelFormatError("support vector arrays disagree in length")
            if sv.shape[0] and dim is not None and sv.shape[1] != dim:
                raise ModelFormatError("pairwise models disagree in dimension")
            if sv.shape[0]:
                dim = sv.shape[1]
            models.append((int(rec["class_a"]), int(rec["class_b"]),
                           BinarySvmModel(sv, alphas, labels, float(rec["bias"]), gamma)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed svm model: {exc}") from None
    if not models:
        raise ModelFormatError("svm model has no pairwise models")
    K = max(max(ca, cb) for ca, cb, _ in models) + 1
    return MulticlassSvmModel(tuple(models), K, C, gamma)


def dumps_svm(model: MulticlassSvmModel) -> str:
    return json.dumps(svm_to_dict(model), separators=(",", ":"))


def loads_svm(text: str) -> MulticlassSvmModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return svm_from_dict(obj)
