"""Signal statistics, semantic/radio correlation and image-quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from sklearn.mixture import GaussianMixture

from .scenegen import SemanticClass

HIST_EDGES = np.arange(-160.0, 1.0, 1.0)
PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5 -> 11 x 11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class UndefinedResultError(ValueError):
    """Raised when a statistic is mathematically undefined for the input."""


def point_biserial(mask, signal, valid=None) -> float:
    """Point-biserial correlation of a binary mask with a real signal.

    Uses the population standard deviation of the signal over valid pixels.
    """
    m = np.asarray(mask, dtype=bool)
    s = np.asarray(signal, dtype=np.float64)
    if m.shape != s.shape:
        raise ValueError(f"mask {m.shape} and signal {s.shape} differ in shape")
    v = np.ones_like(m) if valid is None else np.asarray(valid, dtype=bool)
    if v.shape != m.shape:
        raise ValueError("valid mask shape differs")
    m, s = m[v], s[v]
    n = m.size
    n1 = int(m.sum())
    n0 = n - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedResultError("mask is constant over valid pixels")
    sd = s.std()
    if not sd > 0:
        raise UndefinedResultError("signal is constant over valid pixels")
    r = (s[m].mean() - s[~m].mean()) / sd * math.sqrt(n1 * n0 / (n * n))
    return float(min(1.0, max(-1.0, r)))


CONCEPTS = ("Roads", "Buildings", "Roofs")


def concept_masks(semantic) -> dict[str, np.ndarray]:
    sem = np.asarray(semantic)
    return {
        "Roads": sem == SemanticClass.ROAD,
        "Buildings": (sem == SemanticClass.BUILDING_WALL) | (sem == SemanticClass.BUILDING_ROOF),
        "Roofs": sem == SemanticClass.BUILDING_ROOF,
    }


def concept_correlations(semantic, path_gain_db) -> dict[str, float]:
    """r_pb of each concept mask against path gain over finite pixels; NaN when undefined."""
    pg = np.asarray(path_gain_db, dtype=np.float64)
    valid = np.isfinite(pg)
    out = {}
    for name, mask in concept_masks(semantic).items():
        try:
            out[name] = point_biserial(mask, np.where(valid, pg, 0.0), valid)
        except UndefinedResultError:
            out[name] = float("nan")
    return out


@dataclass
class GainStats:
    sample_ids: list
    mean_db: np.ndarray
    max_db: np.ndarray
    std_db: np.ndarray
    histograms: dict
    bic: tuple | None
    skipped: int

    @property
    def bimodal(self) -> bool:
        return self.bic is not None and self.bic[1] < self.bic[0]

    def table(self) -> list[dict]:
        return [
            {"sample": sid, "mean_db": float(a), "max_db": float(b), "std_db": float(c)}
            for sid, a, b, c in zip(self.sample_ids, self.mean_db, self.max_db, self.std_db)
        ]


def sample_statistics(path_gain_db) -> tuple[float, float, float] | None:
    v = np.asarray(path_gain_db, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return None
    return float(v.mean()), float(v.max()), float(v.std())


def mixture_bic(values, components: int, seed: int = 0) -> float:
    x = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    gm = GaussianMixture(n_components=components, n_init=5, random_state=seed).fit(x)
    return float(gm.bic(x))


def gain_statistics(maps, sample_ids=None) -> GainStats:
    """Per-sample (mean, max, std) in dB plus campaign histograms and a 1-vs-2 GMM BIC on P_max.

    ``maps`` holds RadioMap objects or raw path-gain-dB arrays. Maps with no
    finite pixel are skipped and counted.
    """
    maps = list(maps)
    sample_ids = list(range(len(maps))) if sample_ids is None else list(sample_ids)
    ids, rows, skipped = [], [], 0
    for sid, m in zip(sample_ids, maps):
        stats = sample_statistics(getattr(m, "path_gain_db", m))
        if stats is None:
            skipped += 1
            continue
        ids.append(sid)
        rows.append(stats)
    if not rows:
        raise ValueError("no map has a finite pixel")
    arr = np.array(rows)
    hist = {name: np.histogram(np.clip(arr[:, k], HIST_EDGES[0], HIST_EDGES[-1]), HIST_EDGES)[0]
            for k, name in enumerate(("mean_db", "max_db", "std_db"))}
    bic = None
    if len(arr) >= 4:
        bic = (mixture_bic(arr[:, 1], 1), mixture_bic(arr[:, 1], 2))
    return GainStats(ids, arr[:, 0], arr[:, 1], arr[:, 2], hist, bic, skipped)


def _ssim(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def blur(a):
        return gaussian_filter(a, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    pad = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    if min(s.shape) > 2 * pad:
        s = s[pad:-pad, pad:-pad]
    return float(s.mean())


def image_metrics(pred, gt, data_range: float) -> dict[str, float]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2:
        raise ValueError(f"pred {p.shape} and gt {g.shape} must be equal 2-D shapes")
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    denom = np.sum(g * g)
    if denom == 0:
        raise UndefinedResultError("NMSE undefined for an all-zero reference")
    err = p - g
    mse = float(np.mean(err * err))
    psnr = PSNR_CAP if mse < 1e-12 else 20.0 * math.log10(data_range) - 10.0 * math.log10(mse)
    return {
        "NMSE": float(np.sum(err * err) / denom),
        "MAE": float(np.mean(np.abs(err))),
        "PSNR": float(psnr),
        "SSIM": _ssim(p, g, data_range),
    }
