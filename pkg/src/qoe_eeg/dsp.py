"""Filtering, Welch spectra, band powers and differential entropy.

Feature columns are laid out as ``electrode * 10 + band * 2 + kind`` with
kind 0 = band power (PSD) and kind 1 = differential entropy (DE).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

from .errors import (
    BandOutOfRange,
    InvalidBand,
    SegmentTooShort,
    TooShort,
    UnstableDesign,
)
from .ingest import CHANNELS, RawRecording

FILTER_LOW = 1.0
FILTER_HIGH = 47.0
FILTER_ORDER = 4
DE_FLOOR = 1e-12
KINDS = ("psd", "de")


@dataclass(frozen=True)
class FrequencyBand:
    name: str
    low: float
    high: float


BANDS = (
    FrequencyBand("delta", 1.0, 4.0),
    FrequencyBand("theta", 4.0, 8.0),
    FrequencyBand("alpha", 8.0, 13.0),
    FrequencyBand("beta", 13.0, 30.0),
    # nominally 30-60 Hz; everything above the 47 Hz cutoff is filtered out
    FrequencyBand("gamma", 30.0, FILTER_HIGH),
)

N_FEATURES = len(CHANNELS) * len(BANDS) * len(KINDS)


def column_index(electrode: int, band: int, kind: int) -> int:
    return electrode * len(BANDS) * len(KINDS) + band * len(KINDS) + kind


def column_names(channels=CHANNELS, bands=BANDS) -> list:
    return [f"{ch}_{b.name}_{k}" for ch in channels for b in bands for k in KINDS]


# -- filtering ---------------------------------------------------------------

@dataclass(frozen=True)
class IirFilter:
    sections: tuple  # ((b0, b1, b2, a1, a2), ...)
    low: float
    high: float
    order: int
    sample_rate: float

    @property
    def sos(self) -> np.ndarray:
        s = np.asarray(self.sections, dtype=np.float64)
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    @property
    def transient_length(self) -> int:
        return 2 * len(self.sections)

    def response(self, freqs) -> np.ndarray:
        """Complex transfer function of the cascade at ``freqs`` (Hz)."""
        z1 = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / self.sample_rate)
        h = np.ones_like(z1)
        for b0, b1, b2, a1, a2 in self.sections:
            h = h * (b0 + b1 * z1 + b2 * z1**2) / (1 + a1 * z1 + a2 * z1**2)
        return h

    def magnitude(self, freqs) -> np.ndarray:
        return np.abs(self.response(freqs))

    def metadata(self) -> dict:
        return {"family": "butterworth", "low_hz": self.low, "high_hz": self.high,
                "order": self.order, "sample_rate_hz": self.sample_rate,
                "application": "zero-phase"}


def design_bandpass(low: float = FILTER_LOW, high: float = FILTER_HIGH,
                    order: int = FILTER_ORDER, sample_rate: float = 250.0) -> IirFilter:
    """Butterworth bandpass as second-order sections.

    ``order`` is the prototype order, so the cascade has ``order`` sections.
    """
    if order not in (2, 4, 6, 8):
        raise InvalidBand(f"order must be one of 2, 4, 6, 8, got {order}")
    if not 0 < low < high < sample_rate / 2:
        raise InvalidBand(
            f"need 0 < low < high < Nyquist ({sample_rate / 2:g} Hz), got low={low}, high={high}"
        )
    sos = signal.butter(order, [low, high], btype="bandpass", fs=sample_rate, output="sos")
    for sec in sos:
        if np.any(np.abs(np.roots(sec[3:])) >= 1.0):
            raise UnstableDesign(f"pole on or outside the unit circle for {low}-{high} Hz")
    sections = tuple(tuple(float(v) for v in (s[0], s[1], s[2], s[4], s[5])) for s in sos)
    return IirFilter(sections, float(low), float(high), int(order), float(sample_rate))


def apply_zero_phase(filt: IirFilter, x) -> np.ndarray:
    """Forward-backward filtering with odd reflection padding of 3x the transient."""
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * filt.transient_length
    if x.shape[-1] <= padlen:
        raise TooShort(f"signal of {x.shape[-1]} samples too short; need more than {padlen}")
    return signal.sosfiltfilt(filt.sos, x, axis=-1, padtype="odd", padlen=padlen)


def bandpass_recording(rec: RawRecording, filt: IirFilter) -> RawRecording:
    return rec.with_samples(apply_zero_phase(filt, rec.samples))


# -- spectra -----------------------------------------------------------------

@dataclass(frozen=True)
class WindowPlan:
    window_len: int = 750
    hop: int = 375
    welch_subsegment: int = 250
    welch_overlap: float = 0.5
    taper: str = "hann"

    @classmethod
    def for_rate(cls, sample_rate: float, **kw) -> "WindowPlan":
        w = int(round(3 * sample_rate))
        kw.setdefault("welch_subsegment", int(round(sample_rate)))
        return cls(window_len=w, hop=w // 2, **kw)

    def validate(self) -> None:
        if self.window_len < 1 or self.hop < 1:
            raise TooShort("window and hop must be positive")
        if self.welch_subsegment > self.window_len:
            raise SegmentTooShort("welch_subsegment exceeds window_len")
        if not 0 <= self.welch_overlap < 1:
            raise SegmentTooShort("welch_overlap must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PsdEstimate:
    frequencies: np.ndarray
    density: np.ndarray

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def total_power(self) -> float:
        return float(np.sum(self.density) * self.resolution)


def welch_psd(segment, sample_rate: float, plan: WindowPlan) -> PsdEstimate:
    x = np.asarray(segment, dtype=np.float64)
    n = plan.welch_subsegment
    if x.shape[-1] < n:
        raise SegmentTooShort(f"segment of {x.shape[-1]} samples shorter than sub-segment {n}")
    step = max(1, n - int(round(plan.welch_overlap * n)))
    win = signal.get_window(plan.taper, n)
    starts = range(0, x.shape[-1] - n + 1, step)
    segs = np.stack([x[..., s:s + n] for s in starts], axis=-2)
    segs = segs - segs.mean(axis=-1, keepdims=True)
    spec = np.abs(np.fft.rfft(segs * win, axis=-1)) ** 2
    density = spec.mean(axis=-2) / (sample_rate * np.sum(win**2))
    if n % 2 == 0:
        density[..., 1:-1] *= 2
    else:
        density[..., 1:] *= 2
    return PsdEstimate(np.fft.rfftfreq(n, 1.0 / sample_rate), density)


def _interp_edge(freqs, density, x):
    i = int(np.clip(np.searchsorted(freqs, x, side="right") - 1, 0, len(freqs) - 2))
    w = (x - freqs[i]) / (freqs[i + 1] - freqs[i])
    return density[..., i] * (1 - w) + density[..., i + 1] * w


def _segment_integral(freqs, density, low, high):
    # exact integral of the piecewise-linear density between low and high
    inner = (freqs > low) & (freqs < high)
    f = np.concatenate(([low], freqs[inner], [high]))
    d = np.concatenate([_interp_edge(freqs, density, low)[..., None], density[..., inner],
                        _interp_edge(freqs, density, high)[..., None]], axis=-1)
    return np.trapezoid(d, f, axis=-1)


def band_power(psd: PsdEstimate, band: FrequencyBand):
    """Trapezoidal integral of the density over ``[band.low, band.high)``."""
    f = psd.frequencies
    if band.low < f[0] or band.high > f[-1] or band.low >= band.high:
        raise BandOutOfRange(
            f"band {band.name} [{band.low}, {band.high}) outside [{f[0]}, {f[-1]}] Hz"
        )
    p = np.maximum(_segment_integral(f, psd.density, band.low, band.high), 0.0)
    return float(p) if p.ndim == 0 else p


def differential_entropy(variance, floor: float = DE_FLOOR):
    """Gaussian differential entropy in nats, ``0.5 * ln(2 pi e var)``."""
    return 0.5 * np.log(2 * math.pi * math.e * np.maximum(variance, floor))


def window_starts(n: int, plan: WindowPlan) -> list:
    """Starts ``k * hop`` while at least ``hop`` samples remain."""
    return list(range(0, n - plan.hop + 1, plan.hop))


def extract_features(rec: RawRecording, plan: WindowPlan | None = None,
                     bands=BANDS, floor: float = DE_FLOOR) -> np.ndarray:
    """Windowed (T, electrodes*bands*2) feature matrix of a filtered recording."""
    plan = plan or WindowPlan.for_rate(rec.sample_rate)
    plan.validate()
    n = rec.num_samples
    if n < plan.window_len:
        raise TooShort(f"recording has {n} samples, window needs {plan.window_len}")
    starts = window_starts(n, plan)
    n_ch = len(rec.channels)
    out = np.empty((len(starts), n_ch, len(bands), len(KINDS)))
    for t, s in enumerate(starts):
        psd = welch_psd(rec.samples[:, s:s + plan.window_len], rec.sample_rate, plan)
        for b, band in enumerate(bands):
            p = band_power(psd, band)
            out[t, :, b, 0] = p
            out[t, :, b, 1] = differential_entropy(p, floor)
    return out.reshape(len(starts), -1)
