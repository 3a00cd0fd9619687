"""SVG boundary overlays, PPM snapshots and matplotlib report figures."""

from __future__ import annotations

import io as _io

import numpy as np

CLASS_COLORS = ("#2ca02c", "#ff7f0e", "#d62728")
CLASS_NAMES = ("class 1", "class 2", "class 3")


def _f(v: float) -> str:
    return f"{v:.3f}"


def overlay_svg(vertices, pred_labels, gt_labels, pole, image_shape, scale: float = 8.0,
                title: str = "") -> str:
    """Boundary polyline coloured per vertex plus a flattened band strip.

    Segment ``k`` joins vertex ``k`` to vertex ``k+1`` (wrapping) and takes the
    colour of vertex ``k``'s predicted class. The strip lists rays from the 0°
    ray onward, which runs clockwise on screen.
    """
    pts = np.asarray(vertices, dtype=np.float64) * scale
    n = len(pts)
    h, w = image_shape
    width = w * scale
    strip_h = 18.0
    top = h * scale + 10.0
    height = top + 2 * strip_h + 36.0
    px, py = pole.x * scale, pole.y * scale
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}">',
    ]
    if title:
        out.append(f"<title>{title}</title>")
    out.append(f'<rect x="0" y="0" width="{_f(width)}" height="{_f(h * scale)}" fill="#202020"/>')
    out.append('<g id="boundary" class="boundary-polyline" stroke-width="3" stroke-linecap="round">')
    for k in range(n):
        a, b = pts[k], pts[(k + 1) % n]
        c = CLASS_COLORS[int(pred_labels[k])]
        out.append(f'<line x1="{_f(a[0])}" y1="{_f(a[1])}" x2="{_f(b[0])}" y2="{_f(b[1])}" stroke="{c}"/>')
    out.append("</g>")
    out.append('<g id="start-ray" stroke="#ffffff" stroke-dasharray="4,3" fill="#ffffff">')
    out.append(f'<line x1="{_f(px)}" y1="{_f(py)}" x2="{_f(pts[0][0])}" y2="{_f(pts[0][1])}"/>')
    out.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="3"/>')
    out.append(f'<text x="{_f(px + 6)}" y="{_f(py - 6)}" font-size="12" stroke="none">0°</text>')
    out.append("</g>")
    cell = width / n
    for row, (name, labs) in enumerate((("prediction", pred_labels), ("ground-truth", gt_labels))):
        y0 = top + row * (strip_h + 14.0)
        out.append(f'<g id="band-{name}" class="band-strip">')
        out.append(f'<text x="0" y="{_f(y0 + strip_h + 11)}" font-size="10">{name}</text>')
        for k in range(n):
            c = CLASS_COLORS[int(labs[k])]
            out.append(f'<rect x="{_f(k * cell)}" y="{_f(y0)}" width="{_f(cell)}" height="{_f(strip_h)}" fill="{c}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def ppm_bytes(image: np.ndarray) -> bytes:
    """Binary P6 greyscale rendering, min-max scaled."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    norm = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    g = np.round(norm * 255.0).astype(np.uint8)
    rgb = np.repeat(g[:, :, None], 3, axis=2)
    h, w = g.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


# ---------------------------------------------------------------- figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _png(fig) -> bytes:
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    return buf.getvalue()


def eval_figure(confusion: np.ndarray, per_class: list, title: str = "") -> bytes:
    """Confusion matrix next to per-class precision / recall / F1 bars."""
    plt = _pyplot()
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.8))
    cm = np.asarray(confusion)
    ax0.imshow(cm, cmap="Greys")
    k = cm.shape[0]
    for i in range(k):
        for j in range(k):
            ax0.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                     color="white" if cm[i, j] > cm.max() / 2 else "black", fontsize=9)
    ax0.set_xticks(range(k), [str(c + 1) for c in range(k)])
    ax0.set_yticks(range(k), [str(c + 1) for c in range(k)])
    ax0.set_xlabel("predicted class")
    ax0.set_ylabel("reference class")
    x = np.arange(k)
    for off, key in ((-0.25, "precision"), (0.0, "recall"), (0.25, "f1")):
        ax1.bar(x + off, [row[key] for row in per_class], width=0.25, label=key)
    ax1.set_xticks(x, [str(c + 1) for c in range(k)])
    ax1.set_ylim(0, 100)
    ax1.set_xlabel("class")
    ax1.set_ylabel("%")
    ax1.legend(frameon=False, fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    data = _png(fig)
    plt.close(fig)
    return data


def roc_points(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    thr = np.concatenate([[np.inf], np.unique(s)[::-1]])
    tpr = [float((s[y] >= t).mean()) for t in thr]
    fpr = [float((s[~y] >= t).mean()) for t in thr]
    return np.array(fpr), np.array(tpr)


def roc_figure(curves: dict, title: str = "") -> bytes:
    """``curves`` maps row name -> (scores, labels)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    for name, (scores, labels) in curves.items():
        fpr, tpr = roc_points(scores, labels)
        ax.plot(fpr, tpr, drawstyle="steps-post", label=name)
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    ax.set_xlabel("1 - specificity")
    ax.set_ylabel("sensitivity")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=8, loc="lower right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    data = _png(fig)
    plt.close(fig)
    return data
