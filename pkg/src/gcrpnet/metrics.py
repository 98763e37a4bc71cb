"""Saliency evaluation: MAE, S-measure, F-measure and E-measure (max / mean / adaptive).

Predictions are float maps in [0, 1]; ground truth is binary. Threshold
sweeps use 256 evenly spaced thresholds ``t_k = k / 255`` with ``pred >= t``.
The adaptive threshold is ``min(1, 2 * mean(pred))``.

Degenerate convention for F: when the ground truth has no foreground, F is 1
if the binarised prediction is also empty and 0 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA2 = 0.3
ALPHA = 0.5
NUM_THRESHOLDS = 256
_EPS = np.spacing(1.0)

THRESHOLDS = np.linspace(0.0, 1.0, NUM_THRESHOLDS)


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt) > 0.5
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if pred.size and (pred.min() < 0 or pred.max() > 1):
        raise ValueError("predictions must lie in [0, 1]")
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _prep(pred, gt)
    return float(np.abs(pred - gt).mean())


def adaptive_threshold(pred) -> float:
    return float(min(2.0 * np.mean(pred), 1.0))


# ---------------------------------------------------------------------------
# confusion counts and F-measure
# ---------------------------------------------------------------------------


def _counts(pred: np.ndarray, gt: np.ndarray, thresholds: np.ndarray):
    """TP, FP per threshold (pixels with pred >= t), plus |G| and total."""
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    tp = fg.size - np.searchsorted(fg, thresholds, side="left")
    fp = bg.size - np.searchsorted(bg, thresholds, side="left")
    return tp.astype(np.float64), fp.astype(np.float64), float(fg.size), float(pred.size)


def _f_from_counts(tp, fp, n_fg):
    tp = np.atleast_1d(tp)
    fp = np.atleast_1d(fp)
    if n_fg == 0:
        f = np.where(tp + fp == 0, 1.0, 0.0)
        precision = np.where(tp + fp == 0, 1.0, 0.0)
        return precision, np.ones_like(f), f
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = tp / n_fg
    denom = BETA2 * precision + recall
    f = np.divide((1 + BETA2) * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f


def f_measure(pred, gt, threshold: float) -> tuple[float, float, float]:
    """(precision, recall, F_beta) of ``pred >= threshold``."""
    pred, gt = _prep(pred, gt)
    tp, fp, n_fg, _ = _counts(pred, gt, np.array([threshold]))
    p, r, f = _f_from_counts(tp, fp, n_fg)
    return float(p[0]), float(r[0]), float(f[0])


def pr_curve(pred, gt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall and F over the 256-threshold sweep."""
    pred, gt = _prep(pred, gt)
    tp, fp, n_fg, _ = _counts(pred, gt, THRESHOLDS)
    return _f_from_counts(tp, fp, n_fg)


def f_suite(pred, gt) -> dict[str, float]:
    pred, gt = _prep(pred, gt)
    _, _, f = pr_curve(pred, gt)
    _, _, f_adp = f_measure(pred, gt, adaptive_threshold(pred))
    return {"f_max": float(f.max()), "f_mean": float(f.mean()), "f_adp": f_adp}


# ---------------------------------------------------------------------------
# E-measure (enhanced alignment)
# ---------------------------------------------------------------------------


def _e_from_counts(tp, fp, n_fg, n):
    """E-measure of binary maps from confusion counts.

    Every pixel of a (prediction, gt) class pair has the same alignment value,
    so the per-pixel sum collapses to four terms.
    """
    tp = np.atleast_1d(tp)
    fp = np.atleast_1d(fp)
    n_pred = tp + fp
    if n_fg == 0:
        enhanced_sum = n - n_pred          # enhanced = 1 - FM
    elif n_fg == n:
        enhanced_sum = n_pred              # enhanced = FM
    else:
        fn = n_fg - tp
        tn = n - n_fg - fp
        mu_p = n_pred / n
        mu_g = n_fg / n
        total = np.zeros_like(tp)
        for fm_val, g_val, count in ((1.0, 1.0, tp), (1.0, 0.0, fp), (0.0, 1.0, fn), (0.0, 0.0, tn)):
            a = fm_val - mu_p
            b = g_val - mu_g
            align = 2 * a * b / (a * a + b * b + _EPS)
            total = total + count * (align + 1) ** 2 / 4
        enhanced_sum = total
    return enhanced_sum / (n - 1 + _EPS)


def e_measure(pred, gt, threshold: float) -> float:
    pred, gt = _prep(pred, gt)
    tp, fp, n_fg, n = _counts(pred, gt, np.array([threshold]))
    return float(_e_from_counts(tp, fp, n_fg, n)[0])


def e_curve(pred, gt) -> np.ndarray:
    pred, gt = _prep(pred, gt)
    tp, fp, n_fg, n = _counts(pred, gt, THRESHOLDS)
    return _e_from_counts(tp, fp, n_fg, n)


def e_suite(pred, gt) -> dict[str, float]:
    pred, gt = _prep(pred, gt)
    curve = e_curve(pred, gt)
    return {"e_max": float(curve.max()), "e_mean": float(curve.mean()),
            "e_adp": e_measure(pred, gt, adaptive_threshold(pred))}


# ---------------------------------------------------------------------------
# S-measure (structure similarity)
# ---------------------------------------------------------------------------


def _object_score(x: np.ndarray, mask: np.ndarray) -> float:
    vals = x[mask]
    if vals.size == 0:
        return 0.0
    mu = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    return 2 * mu / (mu * mu + 1 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    fg = _object_score(pred * gt, gt)
    bg = _object_score((1 - pred) * (~gt), ~gt)
    return u * fg + (1 - u) * bg


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((gt - y) ** 2).sum() / denom
    sxy = ((pred - x) * (gt - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    if not gt.any():
        return int(round(w / 2)), int(round(h / 2))
    ys, xs = np.nonzero(gt)
    return int(np.round(xs.mean())) + 1, int(np.round(ys.mean())) + 1


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    area = h * w
    gtf = gt.astype(np.float64)
    w1 = x * y / area
    w2 = y * (w - x) / area
    w3 = (h - y) * x / area
    w4 = 1 - w1 - w2 - w3
    quads = [(slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
             (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w))]
    return sum(wk * _ssim(pred[q], gtf[q]) for wk, q in zip((w1, w2, w3, w4), quads))


def s_measure(pred, gt, alpha: float = ALPHA) -> float:
    """Structure measure combining object-aware and region-aware similarity."""
    pred, gt = _prep(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


# ---------------------------------------------------------------------------
# aggregate report
# ---------------------------------------------------------------------------

METRIC_KEYS = ("f_max", "f_mean", "f_adp", "e_max", "e_mean", "e_adp", "s_alpha", "mae")
LOWER_IS_BETTER = frozenset({"mae"})

# Published full-scale GCRPNet scores (384 x 384 input, 100 epochs on the real benchmarks).
REFERENCE_SCORES = {
    "EORSSD": dict(zip(METRIC_KEYS, (0.9032, 0.8876, 0.8719, 0.9801, 0.9748, 0.9457, 0.9487, 0.0049))),
    "ORSSD": dict(zip(METRIC_KEYS, (0.9356, 0.9243, 0.9196, 0.9861, 0.9819, 0.9650, 0.9590, 0.0056))),
}


def image_metrics(pred, gt) -> dict[str, float]:
    pred, gt = _prep(pred, gt)
    out = {}
    out.update(f_suite(pred, gt))
    out.update(e_suite(pred, gt))
    out["s_alpha"] = s_measure(pred, gt)
    out["mae"] = mae(pred, gt)
    return out


@dataclass
class EvalReport:
    """Dataset-level scores.

    The max/mean F and E scores follow the usual dataset convention: curves
    are averaged over images first, then the max/mean over thresholds is
    taken. Adaptive scores, S and MAE are per-image means.
    """

    f_max: float
    f_mean: float
    f_adp: float
    e_max: float
    e_mean: float
    e_adp: float
    s_alpha: float
    mae: float
    num_images: int
    precision_curve: np.ndarray = field(repr=False)
    recall_curve: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)
    e_curve: np.ndarray = field(repr=False)

    def scores(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_text(self) -> str:
        lines = [f"{k}={v:.6f}" for k, v in self.scores().items()]
        lines.append(f"num_images={self.num_images}")
        return "\n".join(lines) + "\n"

    def csv_header(self) -> str:
        return ",".join(METRIC_KEYS + ("num_images",))

    def csv_row(self) -> str:
        return ",".join([f"{getattr(self, k):.6f}" for k in METRIC_KEYS] + [str(self.num_images)])

    def curves_csv(self) -> str:
        rows = ["threshold,precision,recall,f"]
        for t, p, r, f in zip(THRESHOLDS, self.precision_curve, self.recall_curve, self.f_curve):
            rows.append(f"{t:.6f},{p:.6f},{r:.6f},{f:.6f}")
        return "\n".join(rows) + "\n"

    def compare(self, targets: dict[str, float]) -> list[tuple[str, float, float, bool]]:
        """``(metric, ours, target, meets)`` for every metric present in ``targets``."""
        rows = []
        for k in METRIC_KEYS:
            if k in targets:
                ours, target = getattr(self, k), float(targets[k])
                meets = ours <= target if k in LOWER_IS_BETTER else ours >= target
                rows.append((k, ours, target, meets))
        return rows

    def comparison_text(self, targets: dict[str, float], label: str = "target") -> str:
        lines = [f"{'metric':8s} {'ours':>8s} {label:>8s}"]
        for k, ours, target, meets in self.compare(targets):
            lines.append(f"{k:8s} {ours:8.4f} {target:8.4f} {'meets' if meets else 'below'}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_text(text: str) -> dict[str, float]:
        out = {}
        for line in text.splitlines():
            if "=" in line:
                k, _, v = line.partition("=")
                out[k.strip()] = float(v)
        return out


class Evaluator:
    """Accumulate per-image statistics; call :meth:`report` at the end."""

    def __init__(self):
        self._p, self._r, self._f, self._e = [], [], [], []
        self._f_adp, self._e_adp, self._s, self._mae = [], [], [], []

    def add(self, pred, gt) -> dict[str, float]:
        pred, gt = _prep(pred, gt)
        p, r, f = pr_curve(pred, gt)
        e = e_curve(pred, gt)
        thr = adaptive_threshold(pred)
        f_adp = f_measure(pred, gt, thr)[2]
        e_adp = e_measure(pred, gt, thr)
        s = s_measure(pred, gt)
        m = mae(pred, gt)
        self._p.append(p)
        self._r.append(r)
        self._f.append(f)
        self._e.append(e)
        self._f_adp.append(f_adp)
        self._e_adp.append(e_adp)
        self._s.append(s)
        self._mae.append(m)
        return {"f_max": float(f.max()), "f_mean": float(f.mean()), "f_adp": f_adp, "e_max": float(e.max()),
                "e_mean": float(e.mean()), "e_adp": e_adp, "s_alpha": s, "mae": m}

    def __len__(self) -> int:
        return len(self._mae)

    def report(self) -> EvalReport:
        if not self._mae:
            raise ValueError("no images were evaluated")
        f_curve = np.mean(self._f, axis=0)
        e_curve_ = np.mean(self._e, axis=0)
        return EvalReport(
            f_max=float(f_curve.max()), f_mean=float(f_curve.mean()), f_adp=float(np.mean(self._f_adp)),
            e_max=float(e_curve_.max()), e_mean=float(e_curve_.mean()), e_adp=float(np.mean(self._e_adp)),
            s_alpha=float(np.mean(self._s)), mae=float(np.mean(self._mae)), num_images=len(self._mae),
            precision_curve=np.mean(self._p, axis=0), recall_curve=np.mean(self._r, axis=0),
            f_curve=f_curve, e_curve=e_curve_,
        )
