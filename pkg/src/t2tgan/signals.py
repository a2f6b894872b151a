"""Waveform ingestion, segmentation, normalisation and synthetic paired data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import checkpoint

log = logging.getLogger(__name__)

WINDOW = 1000
DEFAULT_ABP_SCALE = (30.0, 220.0)


class UnusableSegmentError(ValueError):
    pass


class RecordFormatError(ValueError):
    pass


@dataclass
class WaveformRecord:
    ppg: np.ndarray
    abp: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.ppg = np.asarray(self.ppg, dtype=np.float64)
        self.abp = np.asarray(self.abp, dtype=np.float64)
        if self.ppg.shape != self.abp.shape or self.ppg.ndim != 1:
            raise ValueError(f"ppg and abp must be equal-length 1-D series, got {self.ppg.shape}, {self.abp.shape}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.ppg)


@dataclass
class RawSegment:
    ppg: np.ndarray
    abp: np.ndarray
    offset: int


@dataclass
class SegmentPair:
    ppg: np.ndarray
    abp: np.ndarray
    abp_scale: tuple[float, float]
    offset: int = 0


@dataclass
class DatasetTensor:
    """[N, 2, 1000] array; channel 0 is PPG, channel 1 is ABP, both in [0, 1].

    ``truth`` optionally carries per-segment ground truth (sbp, dbp, map, hr)
    for synthetic data; ``offsets`` the start sample of each segment in its
    parent record.
    """

    data: np.ndarray
    abp_scale: tuple[float, float] = DEFAULT_ABP_SCALE
    offsets: np.ndarray | None = None
    truth: dict[str, np.ndarray] = field(default_factory=dict)
    sample_rate: float = 100.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1] != 2 or self.data.shape[0] < 1:
            raise ValueError(f"dataset tensor must be [N>=1, 2, L], got {self.data.shape}")
        lo, hi = self.abp_scale
        if not lo < hi:
            raise ValueError(f"abp_scale must satisfy min < max, got {self.abp_scale}")
        self.abp_scale = (float(lo), float(hi))

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def ppg(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def abp(self) -> np.ndarray:
        return self.data[:, 1]

    def subset(self, idx) -> "DatasetTensor":
        idx = np.asarray(idx, dtype=np.int64)
        return DatasetTensor(
            data=self.data[idx],
            abp_scale=self.abp_scale,
            offsets=None if self.offsets is None else self.offsets[idx],
            truth={k: v[idx] for k, v in self.truth.items()},
            sample_rate=self.sample_rate,
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "ppg": self.ppg,
            "abp": self.abp,
            "abp_scale": np.asarray(self.abp_scale),
            "sample_rate": np.asarray([self.sample_rate]),
        }
        if self.offsets is not None:
            out["offset"] = np.asarray(self.offsets, dtype=np.float64)
        for k in sorted(self.truth):
            out[k] = self.truth[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "DatasetTensor":
        try:
            data = np.stack([arrays["ppg"], arrays["abp"]], axis=1)
            scale = tuple(arrays["abp_scale"])
        except KeyError as exc:
            raise ValueError(f"dataset container lacks {exc}") from None
        fs = float(arrays["sample_rate"][0]) if "sample_rate" in arrays else 100.0
        offsets = arrays["offset"].astype(np.int64) if "offset" in arrays else None
        known = {"ppg", "abp", "abp_scale", "sample_rate", "offset"}
        truth = {k: v for k, v in arrays.items() if k not in known}
        return cls(data=data, abp_scale=scale, offsets=offsets, truth=truth, sample_rate=fs)

    def save(self, path: str | Path) -> Path:
        return checkpoint.save(path, self.to_arrays())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetTensor":
        return cls.from_arrays(checkpoint.load(path))


# ---------------------------------------------------------------------------


def segment(record: WaveformRecord, window: int = WINDOW, hop: int | None = None) -> list[RawSegment]:
    """Cut a record into windows; a trailing partial window is dropped."""
    hop = window if hop is None else hop
    if window < 1 or hop < 1:
        raise ValueError("window and hop must be positive")
    n = len(record)
    if n < window:
        raise ValueError(f"record of {n} samples is shorter than one window ({window})")
    return [
        RawSegment(record.ppg[s : s + window].copy(), record.abp[s : s + window].copy(), s)
        for s in range(0, n - window + 1, hop)
    ]


def normalize_abp(abp_mmhg: np.ndarray, abp_scale: tuple[float, float]) -> np.ndarray:
    lo, hi = abp_scale
    return np.clip((np.asarray(abp_mmhg, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def denormalize_abp(segment: np.ndarray, abp_scale: tuple[float, float]) -> np.ndarray:
    """Map normalised ABP back to mmHg with the dataset-level scale."""
    lo, hi = abp_scale
    return lo + np.asarray(segment, dtype=np.float64) * (hi - lo)


def normalize_segment(raw: RawSegment, abp_scale: tuple[float, float]) -> SegmentPair:
    lo, hi = float(raw.ppg.min()), float(raw.ppg.max())
    if not hi > lo:
        raise UnusableSegmentError(f"constant PPG at offset {raw.offset}")
    return SegmentPair(
        ppg=(raw.ppg - lo) / (hi - lo),
        abp=normalize_abp(raw.abp, abp_scale),
        abp_scale=(float(abp_scale[0]), float(abp_scale[1])),
        offset=raw.offset,
    )


def normalize(
    segments: Sequence[RawSegment], abp_scale: tuple[float, float] = DEFAULT_ABP_SCALE
) -> list[SegmentPair]:
    """PPG min-max per segment; ABP by the fixed dataset scale, clipped to [0, 1].

    Segments with a flat PPG are dropped.
    """
    if not abp_scale[0] < abp_scale[1]:
        raise ValueError(f"abp_scale must satisfy min < max, got {abp_scale}")
    out = []
    for raw in segments:
        try:
            out.append(normalize_segment(raw, abp_scale))
        except UnusableSegmentError as exc:
            log.warning("dropping segment: %s", exc)
    return out


def to_dataset(
    pairs: Sequence[SegmentPair], abp_scale: tuple[float, float], sample_rate: float = 100.0
) -> DatasetTensor:
    if not pairs:
        raise ValueError("no usable segments")
    data = np.stack([np.stack([p.ppg, p.abp]) for p in pairs])
    offsets = np.array([p.offset for p in pairs], dtype=np.int64)
    return DatasetTensor(data=data, abp_scale=abp_scale, offsets=offsets, sample_rate=sample_rate)


def prepare_dataset(
    records: Sequence[WaveformRecord], abp_scale: tuple[float, float] = DEFAULT_ABP_SCALE
) -> DatasetTensor:
    pairs = []
    rates = set()
    for rec in records:
        rates.add(rec.sample_rate)
        pairs.extend(normalize(segment(rec), abp_scale))
    fs = rates.pop() if len(rates) == 1 else float("nan")
    return to_dataset(pairs, abp_scale, sample_rate=fs)


# ---------------------------------------------------------------------------
# record files


def load_records(path: str | Path) -> list[WaveformRecord]:
    """Parse a record file: ``rate=<Hz>`` header, ``ppg,abp`` lines, blank line between records."""
    path = Path(path)
    lines = path.read_text().splitlines()
    records: list[WaveformRecord] = []
    rate: float | None = None
    ppg: list[float] = []
    abp: list[float] = []

    def flush(lineno: int):
        nonlocal rate, ppg, abp
        if rate is None:
            return
        if not ppg:
            raise RecordFormatError(f"{path}:{lineno}: record has no samples")
        records.append(WaveformRecord(np.array(ppg), np.array(abp), rate))
        rate, ppg, abp = None, [], []

    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            flush(lineno)
            continue
        if rate is None:
            key, sep, value = text.partition("=")
            if key.strip() != "rate" or not sep:
                raise RecordFormatError(f"{path}:{lineno}: expected 'rate=<Hz>' header, got {text!r}")
            try:
                rate = float(value)
            except ValueError:
                raise RecordFormatError(f"{path}:{lineno}: bad sample rate {value!r}") from None
            if not rate > 0:
                raise RecordFormatError(f"{path}:{lineno}: sample rate must be positive")
            continue
        cols = text.split(",")
        if len(cols) != 2:
            raise RecordFormatError(f"{path}:{lineno}: expected 2 columns, found {len(cols)}")
        try:
            ppg.append(float(cols[0]))
            abp.append(float(cols[1]))
        except ValueError:
            raise RecordFormatError(f"{path}:{lineno}: non-numeric sample {text!r}") from None
    flush(len(lines) + 1)
    if not records:
        raise RecordFormatError(f"{path}: no records found")
    return records


def write_records(path: str | Path, records: Sequence[WaveformRecord]) -> Path:
    path = Path(path)
    chunks = []
    for rec in records:
        body = "\n".join(f"{p!r},{a!r}" for p, a in zip(rec.ppg.tolist(), rec.abp.tolist()))
        chunks.append(f"rate={rec.sample_rate:g}\n{body}\n")
    path.write_text("\n".join(chunks))
    return path


# ---------------------------------------------------------------------------
# synthetic data

UPSTROKE_S = 0.18
PTT_S = 0.150
ASYMPTOTE_MMHG = 0.0
HR_RANGE = (60.0, 100.0)
DBP_RANGE = (60.0, 90.0)
SBP_RANGE = (100.0, 160.0)


def abp_waveform(t: np.ndarray, hr: float, sbp: float, dbp: float, phase: float) -> np.ndarray:
    """Periodic beat train in mmHg sampled at times ``t`` (seconds).

    Each beat rises from DBP to SBP along a raised cosine, then decays
    exponentially towards a fixed asymptote, reaching DBP exactly at the next
    onset. Onsets occur at ``phase + k * period``.
    """
    period = 60.0 / hr
    u = np.mod(t - phase, period)
    rise = dbp + (sbp - dbp) * 0.5 * (1.0 - np.cos(np.pi * u / UPSTROKE_S))
    tau = (period - UPSTROKE_S) / np.log((sbp - ASYMPTOTE_MMHG) / (dbp - ASYMPTOTE_MMHG))
    fall = ASYMPTOTE_MMHG + (sbp - ASYMPTOTE_MMHG) * np.exp(-(u - UPSTROKE_S) / tau)
    return np.where(u < UPSTROKE_S, rise, fall)


def _draw_parameters(rng: np.random.Generator, n: int, coupling: float) -> dict[str, np.ndarray]:
    """Uniform marginals in the physiological ranges, joined by a Gaussian copula."""
    cov = np.full((3, 3), coupling) + (1.0 - coupling) * np.eye(3)
    z = rng.multivariate_normal(np.zeros(3), cov, size=n, method="cholesky")
    u = norm.cdf(z)
    span = lambda r, v: r[0] + (r[1] - r[0]) * v  # noqa: E731
    return {
        "hr": span(HR_RANGE, u[:, 0]),
        "sbp": span(SBP_RANGE, u[:, 1]),
        "dbp": span(DBP_RANGE, u[:, 2]),
    }


def synth_paired_dataset(
    n_segments: int,
    seed: int,
    fs: float = 100.0,
    abp_scale: tuple[float, float] = DEFAULT_ABP_SCALE,
    coupling: float = 0.0,
    noise: float = 0.02,
) -> DatasetTensor:
    """Paired PPG/ABP segments with known SBP, DBP and MAP.

    PPG is the ABP pulse delayed by a fixed transit time, min-max scaled, with
    Gaussian noise of ``noise`` times its range. ``coupling`` is the latent
    correlation between heart rate, SBP and DBP (0 draws them independently).
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if not -0.5 < coupling < 1.0:
        raise ValueError("coupling must lie in (-0.5, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E6]))
    params = _draw_parameters(rng, n_segments, coupling)
    phases = rng.uniform(0.0, 1.0, n_segments)
    t = np.arange(WINDOW) / fs
    raws = []
    for k in range(n_segments):
        hr, sbp, dbp = params["hr"][k], params["sbp"][k], params["dbp"][k]
        phase = phases[k] * 60.0 / hr
        abp = abp_waveform(t, hr, sbp, dbp, phase)
        pulse = abp_waveform(t - PTT_S, hr, sbp, dbp, phase)
        pulse = (pulse - pulse.min()) / (pulse.max() - pulse.min())
        ppg = pulse + rng.normal(0.0, noise, WINDOW)
        raws.append(RawSegment(ppg, abp, k * WINDOW))
    pairs = [normalize_segment(r, abp_scale) for r in raws]
    ds = to_dataset(pairs, abp_scale, sample_rate=fs)
    ds.truth = {
        "sbp": params["sbp"],
        "dbp": params["dbp"],
        "map": (params["sbp"] + 2.0 * params["dbp"]) / 3.0,
        "hr": params["hr"],
    }
    return ds


def synth_record(
    seconds: float, seed: int, fs: float = 100.0, hr: float = 75.0, sbp: float = 120.0, dbp: float = 80.0
) -> WaveformRecord:
    """One continuous record with fixed haemodynamics (handy for file fixtures)."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(seconds * fs))) / fs
    abp = abp_waveform(t, hr, sbp, dbp, 0.1)
    ppg = 1.0 + 0.5 * (abp_waveform(t - PTT_S, hr, sbp, dbp, 0.1) - dbp) / (sbp - dbp)
    ppg += rng.normal(0.0, 0.01, len(t))
    return WaveformRecord(ppg=ppg, abp=abp, sample_rate=fs)
