"""Objective stand-ins for visual quality: bone-length drift and smoothness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .skeleton import MotionClip, SkeletonTopology, bone_lengths

COLLAPSE_THRESHOLD = 0.10


@dataclass(frozen=True, eq=False)
class DriftReport:
    """Relative bone-length error ``|len - ref| / ref`` per frame.

    ``frames`` holds the clip's frame indices; ``first_exceedance`` is the
    first frame index whose mean error passes ``threshold`` (None if never).
    """

    frames: np.ndarray
    mean_rel_err: np.ndarray
    max_rel_err: np.ndarray
    threshold: float = COLLAPSE_THRESHOLD

    @property
    def horizon(self) -> int:
        return len(self.frames)

    @property
    def mean(self) -> float:
        return float(self.mean_rel_err.mean()) if self.horizon else 0.0

    @property
    def max(self) -> float:
        return float(self.max_rel_err.max()) if self.horizon else 0.0

    @property
    def first_exceedance(self) -> int | None:
        hits = np.flatnonzero(self.mean_rel_err > self.threshold)
        return int(self.frames[hits[0]]) if hits.size else None

    def summary(self) -> dict:
        return {
            "horizon": self.horizon,
            "mean": self.mean,
            "max": self.max,
            "final_mean": float(self.mean_rel_err[-1]) if self.horizon else 0.0,
            "first_exceedance": self.first_exceedance,
        }


@dataclass(frozen=True, eq=False)
class SmoothnessReport:
    """Mean joint displacement (from frame 1) and second difference (from frame 2)."""

    frames: np.ndarray
    displacement: np.ndarray
    jerk: np.ndarray
    partial: bool = False

    def summary(self) -> dict:
        def stats(a):
            return (float(a.mean()), float(a.max())) if a.size else (0.0, 0.0)

        d_mean, d_max = stats(self.displacement)
        j_mean, j_max = stats(self.jerk)
        return {
            "disp_mean": d_mean,
            "disp_max": d_max,
            "jerk_mean": j_mean,
            "jerk_max": j_max,
            "partial": self.partial,
        }


def bone_drift(clip: MotionClip, topo: SkeletonTopology, threshold: float = COLLAPSE_THRESHOLD) -> DriftReport:
    if len(clip) == 0:
        raise ValidationError("drift needs a non-empty clip")
    ref = topo.bone_reference
    rel = np.abs(bone_lengths(clip.joints, topo) - ref) / ref
    return DriftReport(np.asarray(clip.frame_indices), rel.mean(axis=1), rel.max(axis=1), threshold)


def smoothness(clip: MotionClip) -> SmoothnessReport:
    j = clip.joints
    d1 = np.linalg.norm(np.diff(j, n=1, axis=0), axis=-1).mean(axis=-1) if len(j) >= 2 else np.zeros(0)
    d2 = np.linalg.norm(np.diff(j, n=2, axis=0), axis=-1).mean(axis=-1) if len(j) >= 3 else np.zeros(0)
    return SmoothnessReport(np.asarray(clip.frame_indices), d1, d2, partial=len(j) < 3)


def displacement_xcorr(subject: MotionClip, counterpart: MotionClip, max_lag: int = 25) -> tuple[int, float]:
    """Best-lag Pearson correlation of per-frame displacement magnitudes.

    Positive lag means the counterpart moves after the subject. Auxiliary
    statistic only; returns (0, 0.0) when either series is constant.
    """
    a = smoothness(subject).displacement
    b = smoothness(counterpart).displacement
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    best = (0, 0.0)
    max_lag = min(max_lag, n - 3)
    for lag in range(-max_lag, max_lag + 1):
        x, y = (a[: n - lag], b[lag:]) if lag >= 0 else (a[-lag:], b[: n + lag])
        if x.std() == 0 or y.std() == 0:
            continue
        r = float(np.corrcoef(x, y)[0, 1])
        if abs(r) > abs(best[1]):
            best = (lag, r)
    return best


def write_drift_csv(report: DriftReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "mean_rel_err", "max_rel_err"])
        for f, m, x in zip(report.frames, report.mean_rel_err, report.max_rel_err):
            w.writerow([int(f), f"{m:.9g}", f"{x:.9g}"])


def write_smoothness_csv(report: SmoothnessReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "disp", "jerk"])
        for k, f in enumerate(report.frames):
            disp = f"{report.displacement[k - 1]:.9g}" if k >= 1 else ""
            jerk = f"{report.jerk[k - 2]:.9g}" if k >= 2 else ""
            w.writerow([int(f), disp, jerk])
