"""Sequential dice + cross-entropy objective, SGD, the training loop and slice inference."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry, metrics
from .features import FeatureGrid, feature_grid, sequence_features, zero_disabled
from .mlp import MlpParams, backward, forward, init_params, logits, predict_labels, softmax

DICE_EPS = 1e-6
LOG_FLOOR = 1e-12


class TrainingError(ValueError):
    pass


@dataclass
class SeqLossValue:
    total: float
    dice_part: float
    ce_part: float


@dataclass
class SgdConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 300

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainingError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise TrainingError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise TrainingError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise TrainingError("batch_size >= 1 and epochs >= 0 required")


@dataclass
class PipelineConfig:
    n_vertices: int = 90
    hidden: int = 64
    n_classes: int = 3
    pyramid: bool = True
    coordpos: bool = True


@dataclass
class SgdState:
    velocity: MlpParams

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "SgdState":
        return cls(MlpParams.zeros_like(params))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    val_loss: float
    seed: int
    wall_time: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["wall_time"] is None:
            del d["wall_time"]
        return d


@dataclass
class TrainResult:
    params: MlpParams  # final
    best_params: MlpParams
    best_epoch: int
    history: list = field(default_factory=list)


# ---------------------------------------------------------------- loss

def seq_dice_ce_loss(probs, labels, n_classes: int | None = None):
    """Per-class soft dice (averaged over classes) plus mean cross entropy.

    Returns ``(SeqLossValue, dlogits)`` where ``dlogits`` is the gradient of the
    total with respect to the pre-softmax logits that produced ``probs``.
    """
    p = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise TrainingError(f"probs {p.shape} and labels {labels.shape} disagree")
    n, k = p.shape
    if n_classes is not None and n_classes != k:
        raise TrainingError("class count mismatch")
    y = np.zeros_like(p)
    y[np.arange(n), labels] = 1.0

    inter = (p * y).sum(axis=0)
    denom = p.sum(axis=0) + y.sum(axis=0) + DICE_EPS
    dice = float(np.mean(1.0 - 2.0 * inter / denom))
    # d dice / d p[i, c] = -(2/K) * (y[i, c] / denom_c - inter_c / denom_c^2)
    g_dice = -(2.0 / k) * (y / denom - inter / denom ** 2)

    picked = p[np.arange(n), labels]
    floored = np.maximum(picked, LOG_FLOOR)
    ce = float(np.mean(-np.log(floored)))
    g_ce = np.zeros_like(p)
    g_ce[np.arange(n), labels] = np.where(picked > LOG_FLOOR, -1.0 / (n * floored), 0.0)

    g = g_dice + g_ce
    dlogits = p * (g - (p * g).sum(axis=1, keepdims=True))
    return SeqLossValue(dice + ce, dice, ce), dlogits


def sequence_loss(params: MlpParams, xs, labels) -> float:
    probs, _ = forward(params, xs)
    return seq_dice_ce_loss(probs, labels)[0].total


def loss_and_grads(params: MlpParams, xs, labels):
    probs, cache = forward(params, xs)
    value, dlogits = seq_dice_ce_loss(probs, labels)
    grads, _ = backward(cache, dlogits)
    return value, grads


# ---------------------------------------------------------------- optimiser

def sgd_step(params: MlpParams, grads: MlpParams, state: SgdState, cfg: SgdConfig):
    """v <- mu*v + g + lambda*w ; w <- w - lr*v. Returns new (params, state)."""
    new_p, new_v = [], []
    for w, g, v in zip(params.tensors(), grads.tensors(), state.velocity.tensors()):
        v2 = cfg.momentum * v + g + cfg.weight_decay * w
        new_v.append(v2)
        new_p.append(w - cfg.lr * v2)
    return MlpParams(*new_p), SgdState(MlpParams(*new_v))


# ---------------------------------------------------------------- data prep

@dataclass
class FeatureNorm:
    """Per-channel affine standardisation of decoder inputs.

    Applied to the whole feature grid; because bilinear weights sum to one this
    equals standardising the sampled vectors.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "FeatureNorm":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, xs) -> "FeatureNorm":
        xs = np.asarray(xs, dtype=np.float64)
        mean = xs.mean(axis=0)
        std = xs.std(axis=0)
        # constant (e.g. ablated) channels stay zero after centring
        scale = np.where(std > 1e-12, std, 1.0)
        return cls(mean, scale)

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


def fit_norm(prepared: list) -> FeatureNorm:
    return FeatureNorm.fit(np.concatenate([p.test_features for p in prepared]))


def apply_norm(prepared: list, norm: FeatureNorm) -> list:
    """Standardise grids and cached test features in place; returns the list."""
    for p in prepared:
        p.grid = FeatureGrid(norm.apply(p.grid.values))
        p.test_features = norm.apply(p.test_features)
    return prepared


@dataclass
class PreparedSlice:
    """Everything about a slice that does not change between epochs."""

    grid: object
    grids: geometry.AngularGrids
    test_vertices: geometry.VertexSequence
    test_features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    # flattened candidate table for fast per-epoch resampling
    cand_xy: np.ndarray = None
    cand_offset: np.ndarray = None
    cand_count: np.ndarray = None


def prepare_slice(image, mask, labels, n_vertices: int, pyramid: bool = True, coordpos: bool = True) -> PreparedSlice:
    grid = feature_grid(image, mask, pyramid=pyramid, coordpos=coordpos)
    boundary = geometry.extract_boundary(mask)
    pole = geometry.centroid(mask)
    grids = geometry.build_angular_grids(boundary, pole, n_vertices)
    tv = geometry.generate_vertices_test(boundary, pole, n_vertices)
    counts = np.array([len(g) for g in grids.grids])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    allc = np.concatenate(grids.grids, axis=0)
    x, y = geometry.from_polar(allc[:, 0], allc[:, 1], pole)
    return PreparedSlice(
        grid=grid, grids=grids, test_vertices=tv,
        test_features=sequence_features(grid, tv),
        labels=np.asarray(labels, dtype=np.int64), mask=np.asarray(mask, dtype=bool),
        cand_xy=np.column_stack([x, y]), cand_offset=offsets, cand_count=counts,
    )


def resample_features(ps: PreparedSlice, rng: np.random.Generator) -> np.ndarray:
    """Train-time vertex draw (one uniform candidate per grid) and feature lookup.

    Equivalent to ``sample_vertices_train`` followed by ``sequence_features`` but
    vectorised over the precomputed candidate table.
    """
    pick = ps.cand_offset + np.floor(rng.random(len(ps.cand_count)) * ps.cand_count).astype(np.int64)
    return sequence_features(ps.grid, ps.cand_xy[pick])


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, stream]))


def evaluate_prepared(params: MlpParams, prepared: list):
    """Held-out loss and label predictions with test-time vertices."""
    if not prepared:
        return float("nan"), []
    xs = np.concatenate([p.test_features for p in prepared])
    probs, _ = forward(params, xs)
    losses, preds = [], []
    start = 0
    for p in prepared:
        n = len(p.labels)
        pr = probs[start:start + n]
        losses.append(seq_dice_ce_loss(pr, p.labels)[0].total)
        preds.append(predict_labels(pr))
        start += n
    return float(np.mean(losses)), preds


def train(train_set: list, cfg: SgdConfig, pipe: PipelineConfig, seed: int,
          val_set: list | None = None, init: MlpParams | None = None,
          record_time: bool = False, log=None) -> TrainResult:
    """Train the decoder on prepared slices.

    Shuffling and vertex augmentation draw from generators keyed by
    ``(seed, epoch, stream)`` so reruns are bit-identical.
    """
    if not train_set:
        raise TrainingError("empty training split")
    d = train_set[0].grid.dim
    params = init if init is not None else init_params(
        d, pipe.hidden, pipe.n_classes, np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE])))
    state = SgdState.zeros_like(params)
    best, best_f1, best_epoch = params.copy(), -1.0, -1
    history = []
    val_set = val_set or []
    n_vertices = len(train_set[0].labels)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order_rng = _epoch_rng(seed, epoch, 1)
        aug_rng = _epoch_rng(seed, epoch, 2)
        order = order_rng.permutation(len(train_set))
        feats = [resample_features(train_set[i], aug_rng) for i in order]
        epoch_losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = range(b0, min(b0 + cfg.batch_size, len(order)))
            xs = np.concatenate([feats[j] for j in idx])
            cache = logits(params, xs)
            probs = softmax(cache.logits)
            dl = np.empty_like(probs)
            nb = len(idx)
            for t, j in enumerate(idx):
                sl = slice(t * n_vertices, (t + 1) * n_vertices)
                val, g = seq_dice_ce_loss(probs[sl], train_set[order[j]].labels)
                dl[sl] = g / nb
                epoch_losses.append(val.total)
            grads, _ = backward(cache, dl)
            params, state = sgd_step(params, grads, state, cfg)

        if val_set:
            val_loss, preds = evaluate_prepared(params, val_set)
            val_f1 = metrics.macro_f1([p.labels for p in val_set], preds, pipe.n_classes)
        else:
            val_loss, val_f1 = float("nan"), float("nan")
        score = val_f1 if val_set else -float(np.mean(epoch_losses))
        if score > best_f1:
            best, best_f1, best_epoch = params.copy(), score, epoch
        rec = EpochRecord(epoch, float(np.mean(epoch_losses)), float(val_f1), float(val_loss), int(seed),
                          time.perf_counter() - t0 if record_time else None)
        history.append(rec)
        if log is not None:
            log(rec)

    if best_epoch < 0:
        best = params.copy()
    return TrainResult(params=params, best_params=best, best_epoch=best_epoch, history=history)


# ---------------------------------------------------------------- inference

@dataclass
class SlicePrediction:
    vertices: geometry.VertexSequence
    probs: np.ndarray
    labels: np.ndarray
    mask_used: np.ndarray


def perturbation_rng(seed: int, patient_id: str, slice_index: int) -> np.random.Generator:
    key = [int(seed), int(slice_index)] + [ord(c) for c in patient_id]
    return np.random.default_rng(np.random.SeedSequence(key))


def predict_slice(params: MlpParams, image, mask, n_vertices: int, perturb: float = 0.0,
                  rng: np.random.Generator | None = None, pyramid: bool = True,
                  coordpos: bool = True, norm: FeatureNorm | None = None) -> SlicePrediction:
    """Test-time vertex generation on the (optionally perturbed) mask, then decoding."""
    mask = np.asarray(mask, dtype=bool)
    if perturb > 0:
        mask = geometry.perturb_mask(mask, perturb, rng if rng is not None else np.random.default_rng(0))
    # disabled channels are zeroed after standardisation so an ablated evaluation
    # of a fully trained model feeds exact zeros to the decoder
    values = feature_grid(image, mask).values
    if norm is not None:
        values = norm.apply(values)
    grid = FeatureGrid(zero_disabled(values, pyramid, coordpos))
    boundary = geometry.extract_boundary(mask)
    pole = geometry.centroid(mask)
    vs = geometry.generate_vertices_test(boundary, pole, n_vertices)
    probs, _ = forward(params, sequence_features(grid, vs))
    return SlicePrediction(vs, probs, predict_labels(probs), mask)
