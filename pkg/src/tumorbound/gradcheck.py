"""Central finite-difference checks for the decoder and the sequence loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import PARAM_NAMES, MlpParams, backward, forward, gelu_grad, init_params, logits
from .training import seq_dice_ce_loss

STEP = 1e-5
# denominators are floored so coordinates with ~0 true gradient are judged by
# absolute error (roundoff in the difference quotient is ~1e-11)
REL_FLOOR = 1e-4


def rel_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def numeric_grad(f, params: MlpParams, h: float = STEP) -> MlpParams:
    """d f / d params by central differences, one coordinate at a time."""
    out = MlpParams.zeros_like(params)
    for name in PARAM_NAMES:
        t = getattr(params, name)
        g = getattr(out, name)
        for idx in np.ndindex(t.shape):
            orig = t[idx]
            t[idx] = orig + h
            fp = f(params)
            t[idx] = orig - h
            fm = f(params)
            t[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
    return out


def numeric_input_grad(f, x, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


@dataclass
class CheckResult:
    name: str
    max_rel: dict  # tensor name -> max relative error
    worst: tuple  # (tensor, index, analytic, numeric)

    @property
    def overall(self) -> float:
        return max(self.max_rel.values())


def _compare(name, analytic: dict, numeric: dict) -> CheckResult:
    max_rel, worst, worst_v = {}, None, -1.0
    for key in analytic:
        err = rel_error(analytic[key], numeric[key])
        max_rel[key] = float(err.max())
        i = np.unravel_index(int(np.argmax(err)), err.shape)
        if err[i] > worst_v:
            worst_v = float(err[i])
            worst = (key, tuple(int(v) for v in i), float(np.asarray(analytic[key])[i]),
                     float(np.asarray(numeric[key])[i]))
    return CheckResult(name, max_rel, worst)


def random_instance(rng: np.random.Generator, max_d=8, max_h=8, max_n=7, k=3):
    d = int(rng.integers(2, max_d + 1))
    hd = int(rng.integers(2, max_h + 1))
    n = int(rng.integers(1, max_n + 1))
    params = init_params(d, hd, k, rng)
    params.b1 += rng.normal(0, 0.3, size=hd)
    params.b2 += rng.normal(0, 0.3, size=k)
    x = rng.normal(size=(n, d))
    labels = rng.integers(0, k, size=n)
    return params, x, labels


def check_mlp(params: MlpParams, x, proj, dgelu=gelu_grad) -> CheckResult:
    """Gradient of the linear probe sum(logits * proj) through the decoder."""

    def f(p):
        return float(np.sum(logits(p, x).logits * proj))

    cache = logits(params, x)
    grads, dx = backward(cache, proj, dgelu=dgelu)
    num = numeric_grad(f, params.copy())
    num_x = numeric_input_grad(lambda xx: float(np.sum(logits(params, xx).logits * proj)), x)
    analytic = {n: getattr(grads, n) for n in PARAM_NAMES}
    analytic["x"] = dx
    numeric = {n: getattr(num, n) for n in PARAM_NAMES}
    numeric["x"] = num_x
    return _compare("mlp", analytic, numeric)


def check_loss_logits(z, labels) -> CheckResult:
    """dlogits returned by the loss against differences of the loss in the logits."""
    z = np.asarray(z, dtype=np.float64)

    def total(zz):
        e = np.exp(zz - zz.max(axis=1, keepdims=True))
        return seq_dice_ce_loss(e / e.sum(axis=1, keepdims=True), labels)[0].total

    e = np.exp(z - z.max(axis=1, keepdims=True))
    _, dl = seq_dice_ce_loss(e / e.sum(axis=1, keepdims=True), labels)
    return _compare("loss", {"logits": dl}, {"logits": numeric_input_grad(total, z)})


def check_end_to_end(params: MlpParams, x, labels, dgelu=gelu_grad) -> CheckResult:
    """Loss -> softmax -> decoder, analytic vs numeric for every parameter."""

    def f(p):
        probs, _ = forward(p, x)
        return seq_dice_ce_loss(probs, labels)[0].total

    probs, cache = forward(params, x)
    _, dl = seq_dice_ce_loss(probs, labels)
    grads, _ = backward(cache, dl, dgelu=dgelu)
    num = numeric_grad(f, params.copy())
    return _compare("end_to_end", {n: getattr(grads, n) for n in PARAM_NAMES},
                    {n: getattr(num, n) for n in PARAM_NAMES})


def run_suite(n_instances: int = 20, seed: int = 0, dgelu=gelu_grad) -> list:
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(n_instances):
        params, x, labels = random_instance(rng)
        proj = rng.normal(size=(len(x), 3))
        results.append(check_mlp(params, x, proj, dgelu=dgelu))
        results.append(check_loss_logits(rng.normal(size=(len(x), 3)), labels))
        results.append(check_end_to_end(params, x, labels, dgelu=dgelu))
    return results


def summarize(results: list) -> dict:
    """Worst relative error per (check, tensor) across instances."""
    out: dict = {}
    for r in results:
        for k, v in r.max_rel.items():
            key = f"{r.name}.{k}"
            out[key] = max(out.get(key, 0.0), v)
    return out
