"""Patient class-ratio biomarker and a class-weighted logistic regression for MVI."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .metrics import rank_auc

WEIGHT_GRID = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
THRESHOLD_GRID = tuple(round(0.01 * i, 2) for i in range(101))


class BiomarkerError(ValueError):
    pass


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    class_weight_pos: float = 1.0
    threshold: float = 0.5

    def score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return _sigmoid(x @ self.weights + self.bias)

    def predict(self, x) -> np.ndarray:
        return (self.score(x) >= self.threshold).astype(np.int64)

    def to_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "bias": float(self.bias),
                "class_weight_pos": float(self.class_weight_pos), "threshold": float(self.threshold)}


@dataclass
class ProgMetrics:
    sensitivity: float
    specificity: float
    auc: float | None
    j: float

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def class_ratios(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise BiomarkerError("no boundary elements to count")
    return counts / total


def patient_biomarker(slice_labels, n_classes: int = 3) -> np.ndarray:
    """Pool class counts over every slice of a patient and normalise.

    Each entry is a label sequence (one count per vertex), a ``(vertices,
    labels)`` pair, or a 2D class raster where negative values mark
    non-boundary pixels.
    """
    if len(slice_labels) == 0:
        raise BiomarkerError("patient has no slices")
    counts = np.zeros(n_classes)
    for item in slice_labels:
        lab = np.asarray(item[1] if isinstance(item, tuple) else item)
        vals = lab[lab >= 0].astype(np.int64).ravel()
        counts += np.bincount(vals, minlength=n_classes)[:n_classes]
    return class_ratios(counts)


def independent_features(ratios) -> np.ndarray:
    """The first two ratios; the third is fixed by the sum-to-one constraint."""
    return np.atleast_2d(np.asarray(ratios, dtype=np.float64))[:, :2]


def weighted_nll(model_w, model_b, x, y, class_weight_pos) -> float:
    z = x @ model_w + model_b
    sw = np.where(y == 1, class_weight_pos, 1.0)
    # log(1 + e^z) - y z, evaluated stably
    nll = np.logaddexp(0.0, z) - y * z
    return float(np.sum(sw * nll) / len(y))


def fit_logreg(features, labels, class_weight_pos: float = 1.0, iterations: int = 5000,
               lr: float = 0.1, trace: list | None = None) -> LogRegModel:
    """Full-batch gradient descent on the class-weighted logistic loss from zero init.

    With ``A = [x, 1]`` the loss has curvature at most
    ``L = max(1, w) * lambda_max(A^T A / n) / 4``, so any ``lr < 2 / L`` gives a
    non-increasing loss. Ratio features satisfy ``lambda_max <= 3``, which makes
    the default 0.1 safe for every weight up to 8.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise BiomarkerError("features and labels disagree")
    if len(y) < 2 or y.min() == y.max():
        raise BiomarkerError("degenerate labels")
    sw = np.where(y == 1, class_weight_pos, 1.0)
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iterations):
        r = sw * (_sigmoid(x @ w + b) - y)
        w = w - lr * (x.T @ r) / n
        b = b - lr * r.sum() / n
        if trace is not None:
            trace.append(weighted_nll(w, b, x, y, class_weight_pos))
    return LogRegModel(w, float(b), float(class_weight_pos), 0.5)


def prog_metrics(scores, labels, threshold: float) -> ProgMetrics:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape:
        raise BiomarkerError("scores and labels disagree")
    pred = s >= threshold
    pos = y == 1
    tp = int((pred & pos).sum())
    fn = int((~pred & pos).sum())
    tn = int((~pred & ~pos).sum())
    fp = int((pred & ~pos).sum())
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    auc = rank_auc(s, pos) if 0 < pos.sum() < pos.size else None
    return ProgMetrics(sens, spec, auc, sens + spec - 1.0)


def sweep(scores, labels, thresholds=THRESHOLD_GRID) -> list:
    return [prog_metrics(scores, labels, t) for t in thresholds]


def _middle_of_best_run(js: np.ndarray) -> int:
    """Index at the centre of the first contiguous run of maximal J."""
    top = js.max()
    start = int(np.flatnonzero(js == top)[0])
    end = start
    while end + 1 < len(js) and js[end + 1] == top:
        end += 1
    return (start + end) // 2


def tune_youden(features, labels, weight_grid=WEIGHT_GRID, threshold_grid=THRESHOLD_GRID,
                iterations: int = 5000, lr: float = 0.1):
    """Pick (class weight, threshold) maximising J on the given data.

    Ties between weights go to the smaller weight. Within a weight, the
    threshold is the middle of the first run of grid values that reach the
    best J, which keeps the cut away from the closest training scores.
    """
    x = np.asarray(features, dtype=np.float64)
    ts = sorted(threshold_grid)
    best = None
    for cw in sorted(weight_grid):
        model = fit_logreg(x, labels, cw, iterations, lr)
        scores = model.score(x)
        ms = [prog_metrics(scores, labels, t) for t in ts]
        i = _middle_of_best_run(np.array([m.j for m in ms]))
        if best is None or ms[i].j > best[2].j:
            best = (model, ts[i], ms[i])
    model, t, m = best
    model.threshold = float(t)
    return model, m
