"""Clinical and waveform-similarity metrics for generated ABP."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks

from .nets import GeneratorParams, ModelBundle, generate
from .signals import DatasetTensor, denormalize_abp

log = logging.getLogger(__name__)

AAMI_MEAN_MMHG = 5.0
AAMI_SD_MMHG = 8.0
LOA_Z = 1.96
MAX_HR_BPM = 200.0
PROMINENCE_FRACTION = 0.25


class UnusableSegment(ValueError):
    pass


# ---------------------------------------------------------------------------
# beats and pressures


def detect_beats(abp: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Systolic peak and diastolic trough indices of an ABP series.

    Peaks are at least ``fs * 60 / 200`` samples apart and have prominence of at
    least a quarter of the series' peak-to-peak range. The trough of a beat is
    the minimum between two consecutive peaks.
    """
    abp = np.asarray(abp, dtype=np.float64)
    if len(abp) < 2 * fs:
        raise UnusableSegment(f"series of {len(abp)} samples is shorter than 2 s at {fs} Hz")
    span = float(np.ptp(abp))
    if not span > 0:
        raise UnusableSegment("flat series")
    distance = max(1, math.ceil(fs * 60.0 / MAX_HR_BPM))
    peaks, _ = find_peaks(abp, distance=distance, prominence=PROMINENCE_FRACTION * span)
    if len(peaks) < 2:
        raise UnusableSegment(f"found {len(peaks)} beat(s)")
    troughs = np.array([lo + int(np.argmin(abp[lo:hi])) for lo, hi in zip(peaks[:-1], peaks[1:])])
    return peaks, troughs


def extract_sbp_dbp(abp: np.ndarray, fs: float) -> tuple[float, float]:
    peaks, troughs = detect_beats(abp, fs)
    abp = np.asarray(abp, dtype=np.float64)
    return float(np.median(abp[peaks])), float(np.median(abp[troughs]))


def map_from_sbp_dbp(sbp: float, dbp: float) -> float:
    if sbp < dbp:
        raise ValueError(f"SBP {sbp} below DBP {dbp}")
    return (sbp + 2.0 * dbp) / 3.0


@dataclass
class BPMetrics:
    sbp: float
    dbp: float
    map: float


def bp_metrics(abp_mmhg: np.ndarray, fs: float) -> BPMetrics:
    sbp, dbp = extract_sbp_dbp(abp_mmhg, fs)
    return BPMetrics(sbp, dbp, map_from_sbp_dbp(sbp, dbp))


# ---------------------------------------------------------------------------
# agreement


@dataclass
class BlandAltman:
    mean_error: float
    sd: float
    loa_low: float
    loa_high: float
    means: np.ndarray = field(repr=False)
    differences: np.ndarray = field(repr=False)

    @property
    def aami_pass(self) -> bool:
        return abs(self.mean_error) < AAMI_MEAN_MMHG and self.sd < AAMI_SD_MMHG


def bland_altman(ref: Sequence[float], est: Sequence[float]) -> BlandAltman:
    """Differences est - ref with population SD and limits mean +/- 1.96 SD."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 1:
        raise ValueError(f"reference and estimate must be equal-length 1-D, got {ref.shape}, {est.shape}")
    if len(ref) == 0:
        raise ValueError("Bland-Altman needs at least one pair")
    d = est - ref
    mu = float(d.mean())
    sd = float(d.std())
    return BlandAltman(mu, sd, mu - LOA_Z * sd, mu + LOA_Z * sd, (ref + est) / 2.0, d)


def calibrate(
    est: Sequence[float], ref: Sequence[float], times: Sequence[float], cal_duration: float = 60.0
) -> np.ndarray:
    """Remove the mean bias observed during the first ``cal_duration`` seconds.

    The bias is subtracted from every estimate, including those inside the
    calibration window.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if not est.shape == ref.shape == times.shape:
        raise ValueError("est, ref and times must have the same length")
    window = times < times.min() + cal_duration if len(times) else np.zeros(0, bool)
    if not window.any():
        raise ValueError("no paired samples inside the calibration window")
    bias = float(np.mean(est[window] - ref[window]))
    return est - bias


# ---------------------------------------------------------------------------
# waveform similarity


def dtw(a: Sequence[float], b: Sequence[float]) -> float:
    """Unconstrained DTW with absolute-difference cost and match/insert/delete steps.

    Evaluated one anti-diagonal at a time so each step is a vector operation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty series")
    inf = np.inf
    # diagonals indexed by row i (0..n); entry i of diagonal d holds D[i, d - i]
    prev2 = np.full(n + 1, inf)
    prev1 = np.full(n + 1, inf)
    prev2[0] = 0.0  # D[0, 0] on diagonal 0
    rb = b[::-1]
    for d in range(2, n + m + 1):
        lo = max(1, d - m)
        hi = min(n, d - 1)
        cur = np.full(n + 1, inf)
        i = slice(lo, hi + 1)
        # j = d - i runs from d - lo down to d - hi; b index j - 1
        cost = np.abs(a[lo - 1 : hi] - rb[m - (d - lo) : m - (d - hi) + 1])
        best = np.minimum(np.minimum(prev2[lo - 1 : hi], prev1[lo - 1 : hi]), prev1[i])
        cur[i] = cost + best
        prev2, prev1 = prev1, cur
    return float(prev1[n])


def rmse(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"rmse: length mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def pcc(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("pcc needs two equal-length series of at least 2 samples")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise ValueError("pcc undefined for a constant series")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# full run


@dataclass
class EvalReport:
    bland_altman: BlandAltman
    calibrated: bool
    dtw: float
    rmse: float
    pcc: float
    ref_map: np.ndarray = field(repr=False)
    est_map: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    n_segments: int = 0
    n_usable: int = 0

    @property
    def aami_pass(self) -> bool:
        return self.bland_altman.aami_pass

    def summary(self) -> dict[str, float | bool | str]:
        ba = self.bland_altman
        return {
            "calibrated": self.calibrated,
            "mean_error": ba.mean_error,
            "sd": ba.sd,
            "loa_low": ba.loa_low,
            "loa_high": ba.loa_high,
            "dtw": self.dtw,
            "rmse": self.rmse,
            "pcc": self.pcc,
            "aami_pass": self.aami_pass,
            "n_segments": self.n_segments,
            "n_usable": self.n_usable,
        }


SUMMARY_COLUMNS = [
    "calibrated", "mean_error", "sd", "loa_low", "loa_high",
    "dtw", "rmse", "pcc", "aami_pass", "n_segments", "n_usable",
]


def _as_generator(model) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, ModelBundle):
        return lambda x: generate(model.g_pa, x)
    if isinstance(model, GeneratorParams):
        return lambda x: generate(model, x)
    if callable(model):
        return model
    raise TypeError(f"cannot generate with {type(model).__name__}")


@dataclass
class Generated:
    """Per-segment intermediate results shared by calibrated and raw reports."""

    fake: np.ndarray
    ref_map: np.ndarray
    est_map: np.ndarray
    times: np.ndarray
    usable: np.ndarray
    dtw: float
    rmse: float
    pcc: float


def run_generation(model, dataset: DatasetTensor, abp_scale=None, fs: float | None = None) -> Generated:
    gen = _as_generator(model)
    scale = dataset.abp_scale if abp_scale is None else abp_scale
    fs = dataset.sample_rate if fs is None else fs
    real = dataset.abp
    fake = np.asarray(gen(dataset.ppg), dtype=np.float64)
    if fake.shape != real.shape:
        raise ValueError(f"generator returned {fake.shape}, expected {real.shape}")
    n = len(real)
    seg_seconds = real.shape[1] / fs
    ref_map = np.full(n, np.nan)
    est_map = np.full(n, np.nan)
    for k in range(n):
        try:
            ref_map[k] = bp_metrics(denormalize_abp(real[k], scale), fs).map
            est_map[k] = bp_metrics(denormalize_abp(fake[k], scale), fs).map
        except UnusableSegment as exc:
            log.debug("segment %d unusable: %s", k, exc)
    usable = np.isfinite(ref_map) & np.isfinite(est_map)
    dtws = [dtw(fake[k], real[k]) for k in range(n)]
    rmses = [rmse(fake[k], real[k]) for k in range(n)]
    pccs = []
    for k in range(n):
        try:
            pccs.append(pcc(fake[k], real[k]))
        except ValueError:
            pass
    return Generated(
        fake=fake,
        ref_map=ref_map,
        est_map=est_map,
        times=np.arange(n) * seg_seconds,
        usable=usable,
        dtw=float(np.mean(dtws)),
        rmse=float(np.mean(rmses)),
        pcc=float(np.mean(pccs)) if pccs else math.nan,
    )


def report_from(g: Generated, calibrate_first_minute: bool, cal_duration: float = 60.0) -> EvalReport:
    if not g.usable.any():
        raise ValueError("no usable segments: beat detection failed on every segment")
    ref = g.ref_map[g.usable]
    est = g.est_map[g.usable]
    times = g.times[g.usable]
    if calibrate_first_minute:
        est = calibrate(est, ref, times, cal_duration)
    return EvalReport(
        bland_altman=bland_altman(ref, est),
        calibrated=calibrate_first_minute,
        dtw=g.dtw,
        rmse=g.rmse,
        pcc=g.pcc,
        ref_map=ref,
        est_map=est,
        times=times,
        n_segments=len(g.usable),
        n_usable=int(g.usable.sum()),
    )


def evaluate_run(
    model,
    dataset: DatasetTensor,
    abp_scale=None,
    calibrate_first_minute: bool = False,
    fs: float | None = None,
) -> EvalReport:
    """Generate ABP from every PPG segment with P2A and score it against the real ABP.

    ``model`` is a ``ModelBundle``, a ``GeneratorParams`` or any callable
    mapping [N, 1000] PPG to [N, 1000] normalised ABP.
    """
    return report_from(run_generation(model, dataset, abp_scale, fs), calibrate_first_minute)


# ---------------------------------------------------------------------------
# serialisation


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_summary(path: str | Path, reports: Sequence[EvalReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in reports:
            s = r.summary()
            w.writerow([_fmt(s[c]) for c in SUMMARY_COLUMNS])
    return path


def write_ba_points(path: str | Path, report: EvalReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mean", "difference"])
        for m, d in zip(report.bland_altman.means, report.bland_altman.differences):
            w.writerow([repr(float(m)), repr(float(d))])
    return path


def plot_bland_altman(path: str | Path, report: EvalReport, title: str | None = None) -> Path:
    """Vector BA plot with lines at the mean error and the 95% limits."""
    import matplotlib
    from matplotlib.figure import Figure

    ba = report.bland_altman
    path = Path(path)
    # fixed salt so element ids, and therefore the file bytes, repeat across runs
    with matplotlib.rc_context({"svg.hashsalt": "t2tgan"}):
        fig = Figure(figsize=(6, 4))
        ax = fig.subplots()
        ax.scatter(ba.means, ba.differences, s=8, alpha=0.6)
        for y, style in ((ba.mean_error, "-"), (ba.loa_low, "--"), (ba.loa_high, "--")):
            ax.axhline(y, color="k", linestyle=style, linewidth=1)
        ax.set_xlabel("mean of reference and generated MAP (mmHg)")
        ax.set_ylabel("generated - reference MAP (mmHg)")
        ax.set_title(title or ("calibrated" if report.calibrated else "uncalibrated"))
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
