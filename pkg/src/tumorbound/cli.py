"""Command line entry point: gen | train | eval | infer | biomarker | gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import biomarker as bm
from . import gradcheck as gc
from . import metrics, render
from .features import N_BASE_CHANNELS
from .io import (FORMAT_VERSION, Dataset, FormatError, atomic_write_bytes, atomic_write_text, dumps,
                 load_checkpoint, save_checkpoint, write_dataset, write_history)
from .mlp import gelu_grad
from .phantom import PhantomConfig, generate_cohort
from .training import (PipelineConfig, SgdConfig, TrainingError, apply_norm, fit_norm, perturbation_rng,
                       predict_slice, prepare_slice, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, data=True, model=False):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-vertices", type=int, default=None, help="rays per slice (default 90)")
    if data:
        p.add_argument("--data", required=True, help="dataset directory or manifest.json")
    if model:
        p.add_argument("--model", required=True, help="checkpoint JSON")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tumorbound", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--patients", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--flip-prob", type=float, default=0.05)
    p.add_argument("--mvi-threshold", type=float, default=0.30)
    _common(p, data=False)

    p = sub.add_parser("train", help="train the sequence decoder")
    _common(p)
    p.add_argument("--model", default=None, help="checkpoint output (default <data>/model.json)")
    p.add_argument("--history", default=None, help="per-epoch JSONL (default next to the checkpoint)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--no-pyrafeat", action="store_true")
    p.add_argument("--no-coordpos", action="store_true")
    p.add_argument("--record-time", action="store_true", help="add wall time to history records")
    p.add_argument("--save", choices=("best", "final"), default="best")

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    _common(p, model=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default=None, help="report JSON (default <model>.eval.json)")
    p.add_argument("--figure", default=None, help="optional PNG with confusion matrix and per-class bars")
    p.add_argument("--perturb", type=float, default=0.0, help="boundary shift magnitude in px")
    p.add_argument("--no-pyrafeat", action="store_true")
    p.add_argument("--no-coordpos", action="store_true")

    p = sub.add_parser("infer", help="render one slice's prediction as SVG")
    _common(p, model=True)
    p.add_argument("--slice", required=True, help="PATIENT:INDEX, e.g. P0003:2")
    p.add_argument("--out", required=True, help="SVG output path")
    p.add_argument("--ppm", default=None, help="optional P6 snapshot of the slice")
    p.add_argument("--perturb", type=float, default=0.0)

    p = sub.add_parser("biomarker", help="MVI prediction from capsular class ratios")
    _common(p, model=True)
    p.add_argument("--out", default=None, help="report JSON (default <model>.biomarker.json)")
    p.add_argument("--figure", default=None, help="optional ROC PNG")
    p.add_argument("--fit-fraction", type=float, default=0.5)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.1)

    p = sub.add_parser("gradcheck", help="finite-difference check of loss and decoder gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--out", default=None, help="optional JSON report")
    p.add_argument("--inject-fault", choices=("gelu-sign",), default=None, help=argparse.SUPPRESS)
    return ap


# ---------------------------------------------------------------- helpers

def _dataset(path) -> Dataset:
    try:
        return Dataset(path)
    except FormatError as exc:
        raise DataError(str(exc)) from exc


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except (FormatError, KeyError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from exc


def _labels(ds: Dataset, entry: dict, n: int) -> np.ndarray:
    if n == ds.n_vertices:
        return np.asarray(entry["labels"], dtype=np.int64)
    from .phantom import AngleLabels
    return AngleLabels.from_list(entry["bands"]).sequence(n)


def _prepare(ds: Dataset, entries, n, pipe: PipelineConfig) -> list:
    out = []
    for e in entries:
        s = ds.load_slice(e)
        out.append(prepare_slice(s.image, s.mask, _labels(ds, e, n), n, pipe.pyramid, pipe.coordpos))
    return out


def _tsv(rows) -> str:
    return "\n".join("\t".join(str(c) for c in r) for r in rows)


# ---------------------------------------------------------------- commands

def cmd_gen(a) -> int:
    total = a.train + a.val + a.test
    if min(a.train, a.val, a.test) < 0 or total == 0:
        raise UsageError("split counts must be non-negative and not all zero")
    if a.patients < 1 or a.patients > total:
        raise UsageError("--patients must be between 1 and the total slice count")
    cfg = PhantomConfig(image_size=a.size, n_vertices=a.n_vertices or 90, seed=a.seed,
                        mvi_flip_prob=a.flip_prob, mvi_threshold=a.mvi_threshold)
    base, extra = divmod(total, a.patients)
    counts = [base + (1 if i < extra else 0) for i in range(a.patients)]
    records = generate_cohort(cfg, a.patients, counts=counts)
    try:
        path = write_dataset(records, (a.train, a.val, a.test), a.out, cfg)
    except FormatError as exc:
        raise DataError(str(exc)) from exc
    print(path)
    return EXIT_OK


def cmd_train(a) -> int:
    ds = _dataset(a.data)
    n = a.n_vertices or 90
    try:
        sgd = SgdConfig(lr=a.lr, momentum=a.momentum, weight_decay=a.weight_decay,
                        batch_size=a.batch_size, epochs=a.epochs)
    except TrainingError as exc:
        raise UsageError(str(exc)) from exc
    pipe = PipelineConfig(n_vertices=n, hidden=a.hidden, pyramid=not a.no_pyrafeat, coordpos=not a.no_coordpos)
    tr_entries = ds.split("train")
    if not tr_entries:
        raise DataError("dataset has no training slices")
    tr = _prepare(ds, tr_entries, n, pipe)
    va = _prepare(ds, ds.split("val"), n, pipe)
    norm = fit_norm(tr)
    apply_norm(tr, norm)
    apply_norm(va, norm)
    res = train(tr, sgd, pipe, a.seed, val_set=va, record_time=a.record_time)
    model = Path(a.model) if a.model else ds.root / "model.json"
    hist = Path(a.history) if a.history else model.with_suffix(".history.jsonl")
    params = res.best_params if a.save == "best" else res.params
    save_checkpoint(model, params=params, norm=norm, pipe=pipe, sgd=sgd, seed=a.seed,
                    best_epoch=res.best_epoch if a.save == "best" else len(res.history) - 1,
                    n_base_channels=N_BASE_CHANNELS)
    write_history(hist, res.history)
    last = res.history[-1] if res.history else None
    print(_tsv([["checkpoint", "history", "epochs", "best_epoch", "final_train_loss", "final_val_f1"],
                [model, hist, len(res.history), res.best_epoch,
                 f"{last.train_loss:.6f}" if last else "-", f"{last.val_f1:.4f}" if last else "-"]]))
    return EXIT_OK


def evaluate(ds: Dataset, params, norm, pipe: PipelineConfig, split: str, n: int, perturb: float = 0.0,
             seed: int = 0, pyramid: bool = True, coordpos: bool = True) -> dict:
    """Score a split; returns the report document."""
    entries = ds.split(split)
    if not entries:
        raise DataError(f"split {split!r} is empty")
    preds, gts, probs, dscs = [], [], [], []
    for e in entries:
        s = ds.load_slice(e)
        rng = perturbation_rng(seed, s.patient_id, s.slice_index)
        out = predict_slice(params, s.image, s.mask, n, perturb=perturb, rng=rng,
                            pyramid=pyramid, coordpos=coordpos, norm=norm)
        preds.append(out.labels)
        probs.append(out.probs)
        gts.append(_labels(ds, e, n))
        dscs.append(metrics.dsc(out.mask_used, s.mask))
    k = pipe.n_classes
    m = metrics.seq_metrics(preds, gts, probs, k)
    cm = metrics.confusion(preds, gts, k)
    prec, rec, f1 = metrics.per_class(cm)
    per_class = [{"class": c + 1, "precision": round(100 * prec[c], 2), "recall": round(100 * rec[c], 2),
                  "f1": round(100 * f1[c], 2), "support": int(cm[c].sum())} for c in range(k)]
    return {
        "format_version": FORMAT_VERSION,
        "split": split,
        "n_slices": len(entries),
        "n_vertices": n,
        "metrics": m.as_percent(),
        "metrics_raw": {"f1": m.f1, "accuracy": m.accuracy, "auc": m.auc,
                        "precision": m.precision, "recall": m.recall},
        "per_class": per_class,
        "confusion": cm.tolist(),
        "dsc": round(100.0 * float(np.mean(dscs)), 2),
        "config": {"perturb": perturb, "seed": seed, "pyramid": pyramid, "coordpos": coordpos},
    }


def cmd_eval(a) -> int:
    ds = _dataset(a.data)
    params, norm, pipe, doc = _checkpoint(a.model)
    n = a.n_vertices or pipe.n_vertices
    if a.perturb < 0:
        raise UsageError("--perturb must be >= 0")
    report = evaluate(ds, params, norm, pipe, a.split, n, a.perturb, a.seed,
                      pyramid=pipe.pyramid and not a.no_pyrafeat, coordpos=pipe.coordpos and not a.no_coordpos)
    report["config"]["checkpoint"] = {"dims": doc["dims"], "pipeline": doc["pipeline"],
                                      "train_config": doc["train_config"], "best_epoch": doc["best_epoch"]}
    out = Path(a.out) if a.out else Path(a.model).with_suffix(".eval.json")
    atomic_write_text(out, dumps(report))
    if a.figure:
        atomic_write_bytes(a.figure, render.eval_figure(
            np.asarray(report["confusion"]), report["per_class"], f"{a.split} split, N={n}"))
    m = report["metrics"]
    print(_tsv([["split", "F1", "Accuracy", "AUC", "Precision", "Recall", "DSC"],
                [a.split, m["f1"], m["accuracy"], m["auc"], m["precision"], m["recall"], report["dsc"]]]))
    return EXIT_OK


def _find_entry(ds: Dataset, ref: str) -> dict:
    try:
        pid, idx = ref.split(":")
        idx = int(idx)
    except ValueError as exc:
        raise UsageError(f"--slice must look like P0003:2, got {ref!r}") from exc
    for e in ds.entries:
        if e["patient_id"] == pid and int(e["slice_index"]) == idx:
            return e
    raise DataError(f"slice {ref} not found in {ds.path}")


def cmd_infer(a) -> int:
    ds = _dataset(a.data)
    params, norm, pipe, _ = _checkpoint(a.model)
    n = a.n_vertices or pipe.n_vertices
    e = _find_entry(ds, a.slice)
    s = ds.load_slice(e)
    out = predict_slice(params, s.image, s.mask, n, perturb=a.perturb,
                        rng=perturbation_rng(a.seed, s.patient_id, s.slice_index),
                        pyramid=pipe.pyramid, coordpos=pipe.coordpos, norm=norm)
    svg = render.overlay_svg(out.vertices.points, out.labels, _labels(ds, e, n), out.vertices.pole,
                             s.image.shape, title=f"{s.patient_id} slice {s.slice_index}")
    atomic_write_text(a.out, svg)
    if a.ppm:
        atomic_write_bytes(a.ppm, render.ppm_bytes(s.image))
    print(a.out)
    return EXIT_OK


def split_patients(pids, labels, fit_fraction: float, seed: int):
    """Stratified patient split; each class contributes round(fraction * count) fit patients."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10]))
    fit, held = [], []
    for cls in (0, 1):
        group = [p for p, y in zip(pids, labels) if y == cls]
        order = rng.permutation(len(group))
        n_fit = min(max(1, int(round(fit_fraction * len(group)))), len(group) - 1)
        fit += [group[i] for i in order[:n_fit]]
        held += [group[i] for i in order[n_fit:]]
    return sorted(fit), sorted(held)


def biomarker_report(ds: Dataset, params, norm, pipe: PipelineConfig, seed: int = 0,
                     fit_fraction: float = 0.5, iterations: int = 5000, lr: float = 0.1):
    """Returns (report document, held-out curves for plotting)."""
    mvi = ds.mvi
    gt_seqs: dict = {}
    pred_seqs: dict = {}
    n = pipe.n_vertices
    for e in ds.entries:
        s = ds.load_slice(e)
        out = predict_slice(params, s.image, s.mask, n, pyramid=pipe.pyramid, coordpos=pipe.coordpos, norm=norm)
        gt_seqs.setdefault(s.patient_id, []).append(np.asarray(e["labels"], dtype=np.int64))
        pred_seqs.setdefault(s.patient_id, []).append(out.labels)
    pids = sorted(gt_seqs)
    labels = [mvi.get(p, 0) for p in pids]
    if min(labels.count(0), labels.count(1)) < 2:
        raise DataError("need at least 2 patients per MVI class")
    fit, held = split_patients(pids, labels, fit_fraction, seed)
    rows, curves = {}, {}
    for row, seqs in (("upper_bound", gt_seqs), ("prediction", pred_seqs)):
        ratios = {p: bm.patient_biomarker(seqs[p]) for p in pids}
        xf = bm.independent_features(np.array([ratios[p] for p in fit]))
        yf = np.array([mvi[p] for p in fit])
        xh = bm.independent_features(np.array([ratios[p] for p in held]))
        yh = np.array([mvi[p] for p in held])
        model, fit_m = bm.tune_youden(xf, yf, iterations=iterations, lr=lr)
        scores = model.score(xh)
        held_m = bm.prog_metrics(scores, yh, model.threshold)
        rows[row] = {"model": model.to_dict(), "fit": fit_m.to_dict(), "held_out": held_m.to_dict(),
                     "ratios": {p: [float(v) for v in ratios[p]] for p in pids}}
        curves[row] = (scores, yh)
    report = {
        "format_version": FORMAT_VERSION,
        "n_patients": len(pids),
        "fit_patients": fit,
        "held_out_patients": held,
        "mvi": {p: mvi[p] for p in pids},
        "rows": rows,
        "config": {"seed": seed, "fit_fraction": fit_fraction, "iterations": iterations, "lr": lr,
                   "weight_grid": list(bm.WEIGHT_GRID), "threshold_step": 0.01},
    }
    return report, curves


def cmd_biomarker(a) -> int:
    ds = _dataset(a.data)
    params, norm, pipe, _ = _checkpoint(a.model)
    if a.n_vertices:
        pipe.n_vertices = a.n_vertices
    report, curves = biomarker_report(ds, params, norm, pipe, a.seed, a.fit_fraction, a.iterations, a.lr)
    out = Path(a.out) if a.out else Path(a.model).with_suffix(".biomarker.json")
    atomic_write_text(out, dumps(report))
    if a.figure:
        atomic_write_bytes(a.figure, render.roc_figure(curves, "held-out MVI prediction"))
    table = [["row", "Sensitivity", "Specificity", "AUC", "J"]]
    for name, r in report["rows"].items():
        h = r["held_out"]
        table.append([name] + [f"{100 * v:.2f}" if v is not None else "-"
                               for v in (h["sensitivity"], h["specificity"], h["auc"], h["j"])])
    print(_tsv(table))
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    dgelu = gelu_grad
    if a.inject_fault == "gelu-sign":
        def dgelu(x):
            return -gelu_grad(x)
    results = gc.run_suite(a.instances, a.seed, dgelu=dgelu)
    summary = gc.summarize(results)
    worst = max(results, key=lambda r: r.overall)
    ok = all(v < a.tol for v in summary.values())
    rows = [["tensor", "max_rel_error", "status"]]
    rows += [[k, f"{v:.3e}", "ok" if v < a.tol else "FAIL"] for k, v in sorted(summary.items())]
    print(_tsv(rows))
    if not ok:
        t, idx, an, nu = worst.worst
        print(f"worst: {worst.name}.{t}{list(idx)} analytic={an:.9e} numeric={nu:.9e}", file=sys.stderr)
    if a.out:
        atomic_write_text(a.out, dumps({"format_version": FORMAT_VERSION, "tolerance": a.tol,
                                        "instances": a.instances, "max_rel_error": summary, "passed": ok,
                                        "worst": {"check": worst.name, "tensor": worst.worst[0],
                                                  "index": list(worst.worst[1])}}))
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "biomarker": cmd_biomarker, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "n_vertices", None) is not None and args.n_vertices < 4:
        print("tumorbound: error: --n-vertices must be >= 4", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"tumorbound {args.cmd}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError) as exc:
        print(f"tumorbound {args.cmd}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
