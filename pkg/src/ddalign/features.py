"""Per-band differential-entropy features from raw multichannel windows.

Each channel of a window is cut into 1-second segments, Hann-windowed with no
overlap, and turned into an averaged one-sided power spectral density. The
variance attributed to a frequency band is the PSD integral over bins with
lo_hz <= f < hi_hz, and the feature is the Gaussian closed form of the
band-limited signal's differential entropy:

    de(sigma^2) = 0.5 * ln(2 * pi * e * sigma^2)

Segments are mean-removed before windowing, so a constant channel carries no
band power. All functions are pure; nothing here touches files.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# variance floor applied before the log on silent channel/band pairs
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class BandSpec:
    """A named frequency band with edges in Hz."""

    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not self.name:
            raise ValidationError("band name must be non-empty")
        if not (0 < self.lo_hz < self.hi_hz):
            raise ValidationError(
                f"band {self.name!r}: need 0 < lo_hz < hi_hz, got ({self.lo_hz}, {self.hi_hz})"
            )


@dataclass
class RawWindow:
    """One time segment of a multichannel recording, channels x samples."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValidationError("samples must be a [n_channels, n_samples] matrix")
        if self.fs <= 0:
            raise ValidationError("sampling rate must be positive")
        if self.samples.shape[1] < self.fs:
            raise ValidationError("window must span at least one second")
        if not np.isfinite(self.samples).all():
            raise ValidationError("samples contain non-finite values")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class FeatureVector:
    """Channel-major flat vector: all bands of channel 0, then channel 1, ...

    ``floored`` lists (channel, band name) pairs whose measured variance fell
    below VARIANCE_FLOOR and was clamped before the log.
    """

    values: np.ndarray
    n_channels: int
    band_names: tuple[str, ...]
    floored: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return self.values.shape[0]


DEFAULT_BANDS = (
    BandSpec("delta", 1.0, 4.0),
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha", 8.0, 14.0),
    BandSpec("beta", 14.0, 31.0),
    BandSpec("gamma", 31.0, 50.0),
)


def validate_bands(bands: tuple[BandSpec, ...] | list[BandSpec], fs: float) -> None:
    """Bands must be ordered, non-overlapping, and below Nyquist for this fs."""
    if not bands:
        raise ValidationError("need at least one band")
    for band in bands:
        if band.hi_hz > fs / 2:
            raise ValidationError(
                f"band {band.name!r} upper edge {band.hi_hz} Hz exceeds Nyquist {fs / 2} Hz"
            )
    for a, b in zip(bands, bands[1:]):
        if b.lo_hz < a.hi_hz:
            raise ValidationError(f"bands {a.name!r} and {b.name!r} overlap or are unordered")


def _segment_psd(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Averaged one-sided PSD over non-overlapping 1-second Hann segments.

    Returns (freqs, psd) with the PSD scaled so that sum(psd) * df equals the
    mean-removed signal variance.
    """
    nper = int(round(fs))
    if x.shape[0] < nper:
        raise ValidationError(
            f"window has {x.shape[0]} samples, shorter than one {nper}-sample segment"
        )
    n_seg = x.shape[0] // nper
    segs = x[: n_seg * nper].reshape(n_seg, nper)
    segs = segs - segs.mean(axis=1, keepdims=True)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(nper) / nper)
    spec = np.fft.rfft(segs * w, axis=1)
    psd = (spec.real**2 + spec.imag**2) / (fs * np.sum(w**2))
    psd[:, 1:] *= 2.0
    if nper % 2 == 0:
        psd[:, -1] /= 2.0  # Nyquist bin is not mirrored
    freqs = np.fft.rfftfreq(nper, d=1.0 / fs)
    return freqs, psd.mean(axis=0)


def band_variance(window: RawWindow, band: BandSpec, channel: int) -> float:
    """Band-limited signal variance from STFT power summed over in-band bins."""
    if not 0 <= channel < window.n_channels:
        raise ValidationError(f"channel {channel} outside [0, {window.n_channels})")
    if band.hi_hz > window.fs / 2:
        raise ValidationError(
            f"band {band.name!r} upper edge {band.hi_hz} Hz exceeds Nyquist {window.fs / 2} Hz"
        )
    freqs, psd = _segment_psd(window.samples[channel], window.fs)
    mask = (freqs >= band.lo_hz) & (freqs < band.hi_hz)
    df = window.fs / int(round(window.fs))
    return float(psd[mask].sum() * df)


def differential_entropy(variance: float) -> float:
    """0.5 * ln(2 pi e sigma^2), in nats."""
    if not np.isfinite(variance) or variance <= 0:
        raise ValidationError(f"variance must be positive and finite, got {variance}")
    return 0.5 * math.log(2.0 * math.pi * math.e * variance)


def build_feature_vector(
    window: RawWindow, bands: tuple[BandSpec, ...] | list[BandSpec] = DEFAULT_BANDS
) -> FeatureVector:
    """Differential entropy of every (channel, band) pair, channel-major.

    Variances below VARIANCE_FLOOR are clamped and the pair is recorded in the
    result's ``floored`` metadata; negative or non-finite power estimates
    propagate as errors naming the offending channel and band.
    """
    validate_bands(bands, window.fs)
    values = np.empty(window.n_channels * len(bands))
    floored: list[tuple[int, str]] = []
    df = window.fs / int(round(window.fs))
    for ch in range(window.n_channels):
        freqs, psd = _segment_psd(window.samples[ch], window.fs)
        for bi, band in enumerate(bands):
            mask = (freqs >= band.lo_hz) & (freqs < band.hi_hz)
            var = float(psd[mask].sum() * df)
            if not np.isfinite(var) or var < 0:
                raise ValidationError(
                    f"channel {ch}, band {band.name!r}: invalid band variance {var}"
                )
            if var < VARIANCE_FLOOR:
                var = VARIANCE_FLOOR
                floored.append((ch, band.name))
            values[ch * len(bands) + bi] = differential_entropy(var)
    return FeatureVector(
        values=values,
        n_channels=window.n_channels,
        band_names=tuple(b.name for b in bands),
        floored=floored,
    )
