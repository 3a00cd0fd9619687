"""On-disk formats: dataset manifest + rasters, checkpoints, histories and reports.

All JSON is UTF-8. Images are raw little-endian float32, masks raw uint8 0/1,
both row-major with dimensions recorded in the manifest.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .phantom import AngleLabels, PatientRecord, PhantomConfig, PhantomSlice
from .mlp import MlpParams, PARAM_NAMES
from .training import FeatureNorm, PipelineConfig, SgdConfig

FORMAT_VERSION = "1.0"
SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    pass


def check_version(doc: dict, what: str):
    v = str(doc.get("format_version", ""))
    major = v.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise FormatError(f"{what}: unsupported format_version {v!r}")


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------- dataset

def split_counts(n: int, fractions) -> list:
    """Largest-remainder apportionment of ``n`` items over ``fractions``."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size != 3 or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("split fractions must be three non-negative values summing to 1")
    exact = fr * n
    base = np.floor(exact + 1e-9).astype(int)
    rest = n - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    for i in order[:rest]:
        base[i] += 1
    return [int(v) for v in base]


def _slice_stem(s: PhantomSlice) -> str:
    return f"{s.patient_id}_{s.slice_index:03d}"


def write_dataset(records, split_spec, out_dir, cfg: PhantomConfig | None = None) -> Path:
    """Write slices patient-major; the first ``train`` slices go to train, then val, then test.

    ``split_spec`` is three fractions or three integer counts.
    """
    slices = [s for r in records for s in r.slices]
    if not slices:
        raise FormatError("empty dataset")
    spec = list(split_spec)
    if all(isinstance(v, (int, np.integer)) for v in spec):
        counts = [int(v) for v in spec]
        if sum(counts) != len(slices):
            raise ValueError(f"split counts {counts} do not add up to {len(slices)} slices")
    else:
        counts = split_counts(len(slices), spec)
    labels = [name for name, c in zip(SPLITS, counts) for _ in range(c)]

    out = Path(out_dir)
    entries = []
    try:
        for s, split in zip(slices, labels):
            stem = _slice_stem(s)
            img_rel, mask_rel = f"images/{stem}.f32", f"masks/{stem}.u8"
            atomic_write_bytes(out / img_rel, np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            atomic_write_bytes(out / mask_rel, np.ascontiguousarray(s.mask, dtype=np.uint8).tobytes())
            entries.append({
                "patient_id": s.patient_id,
                "slice_index": int(s.slice_index),
                "split": split,
                "image": img_rel,
                "mask": mask_rel,
                "n_vertices": int(len(s.gt_label_sequence)),
                "labels": [int(v) for v in s.gt_label_sequence],
                "bands": s.gt_angle_labels.to_list(),
            })
        h, w = slices[0].image.shape
        doc = {
            "format_version": FORMAT_VERSION,
            "phantom_config": cfg.to_dict() if cfg is not None else None,
            "height": int(h),
            "width": int(w),
            "n_vertices": int(len(slices[0].gt_label_sequence)),
            "slices": entries,
            "patients": [{"patient_id": r.patient_id, "patient_seed": int(r.patient_seed),
                          "mvi_label": int(r.mvi_label)} for r in records],
        }
        path = out / "manifest.json"
        atomic_write_text(path, dumps(doc))
    except OSError as exc:
        raise FormatError(f"cannot write dataset under {out}: {exc.strerror or exc}") from exc
    return path


class Dataset:
    """A loaded manifest; slices are materialised lazily from their raster files."""

    def __init__(self, manifest_path):
        p = Path(manifest_path)
        if p.is_dir():
            p = p / "manifest.json"
        self.path = p
        self.root = p.parent
        self.doc = read_json(p)
        check_version(self.doc, str(p))
        self.height = int(self.doc["height"])
        self.width = int(self.doc["width"])
        self.n_vertices = int(self.doc["n_vertices"])
        for e in self.doc["slices"]:
            if int(e["n_vertices"]) != self.n_vertices:
                raise FormatError(f"{p}: mixed vertex counts in manifest")

    @property
    def entries(self) -> list:
        return self.doc["slices"]

    def split(self, name: str) -> list:
        return [e for e in self.entries if e["split"] == name]

    @property
    def mvi(self) -> dict:
        return {r["patient_id"]: int(r["mvi_label"]) for r in self.doc.get("patients", [])}

    def load_slice(self, entry: dict) -> PhantomSlice:
        n = self.height * self.width
        try:
            img = np.fromfile(self.root / entry["image"], dtype="<f4")
            mask = np.fromfile(self.root / entry["mask"], dtype=np.uint8)
        except OSError as exc:
            raise FormatError(f"cannot read slice rasters for {entry['patient_id']}: {exc}") from exc
        if img.size != n or mask.size != n:
            raise FormatError(f"{entry['image']}: raster size does not match {self.height}x{self.width}")
        return PhantomSlice(
            image=img.reshape(self.height, self.width).astype(np.float32),
            mask=mask.reshape(self.height, self.width).astype(bool),
            gt_angle_labels=AngleLabels.from_list(entry["bands"]),
            gt_label_sequence=np.asarray(entry["labels"], dtype=np.int64),
            patient_id=entry["patient_id"],
            slice_index=int(entry["slice_index"]),
        )

    def records(self) -> list:
        """Group every slice back into PatientRecords."""
        mvi = self.mvi
        seeds = {r["patient_id"]: int(r.get("patient_seed", 0)) for r in self.doc.get("patients", [])}
        by_pid: dict = {}
        for e in self.entries:
            by_pid.setdefault(e["patient_id"], []).append(self.load_slice(e))
        return [PatientRecord(pid, sl, mvi.get(pid, 0), seeds.get(pid, 0)) for pid, sl in by_pid.items()]

    def resave(self, path):
        atomic_write_text(path, dumps(self.doc))


# ---------------------------------------------------------------- checkpoint

def checkpoint_doc(params: MlpParams, norm: FeatureNorm, pipe: PipelineConfig, sgd: SgdConfig,
                   seed: int, best_epoch: int, n_base_channels: int) -> dict:
    d, hd, k = params.dims
    return {
        "format_version": FORMAT_VERSION,
        "dims": {"D": d, "Hd": hd, "K": k, "N": pipe.n_vertices, "C": d - 2},
        "pipeline": {"pyramid": pipe.pyramid, "coordpos": pipe.coordpos, "base_channels": n_base_channels},
        "train_config": {"lr": sgd.lr, "momentum": sgd.momentum, "weight_decay": sgd.weight_decay,
                         "batch_size": sgd.batch_size, "epochs": sgd.epochs},
        "seed": int(seed),
        "best_epoch": int(best_epoch),
        "norm": {"mean": [float(v) for v in norm.mean], "scale": [float(v) for v in norm.scale]},
        "params": {n: [float(v) for v in np.ravel(getattr(params, n))] for n in PARAM_NAMES},
    }


def save_checkpoint(path, **kw):
    atomic_write_text(path, dumps(checkpoint_doc(**kw)))


def load_checkpoint(path):
    """Returns (params, norm, pipeline config, raw document)."""
    doc = read_json(path)
    check_version(doc, str(path))
    dims = doc["dims"]
    d, hd, k = int(dims["D"]), int(dims["Hd"]), int(dims["K"])
    shapes = {"w1": (d, hd), "b1": (hd,), "w2": (hd, k), "b2": (k,)}
    arrs = {}
    for name, shape in shapes.items():
        a = np.asarray(doc["params"][name], dtype=np.float64)
        if a.size != int(np.prod(shape)):
            raise FormatError(f"{path}: {name} has {a.size} values, expected {shape}")
        arrs[name] = a.reshape(shape)
    norm = FeatureNorm(np.asarray(doc["norm"]["mean"], dtype=np.float64),
                       np.asarray(doc["norm"]["scale"], dtype=np.float64))
    if norm.mean.size != d or norm.scale.size != d:
        raise FormatError(f"{path}: normalisation length does not match D={d}")
    pipe = PipelineConfig(n_vertices=int(dims["N"]), hidden=hd, n_classes=k,
                          pyramid=bool(doc["pipeline"]["pyramid"]), coordpos=bool(doc["pipeline"]["coordpos"]))
    return MlpParams(**arrs), norm, pipe, doc


def write_history(path, records):
    atomic_write_text(path, "".join(json.dumps(r.to_dict()) + "\n" for r in records))


def read_history(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
