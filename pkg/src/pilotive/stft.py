"""Short-time Fourier analysis and weighted overlap-add synthesis.

Spectrograms are stored as complex arrays of shape ``(K, L, d)``: one-sided
frequency bin, frame, channel.  The phase of every frame is referenced to the
first sample of that frame (no centering, no circular shift).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

WINDOWS = ("hamming", "hann", "rectangular")


@dataclass(frozen=True)
class FrameSpec:
    """Framing parameters of the STFT.

    Parameters
    ----------
    frame_len : int
        Window length in samples.
    hop : int
        Frame shift in samples.
    window : str
        One of ``"hamming"``, ``"hann"`` or ``"rectangular"``.
    fft_len : int, optional
        Transform length, at least ``frame_len``.  Defaults to ``frame_len``.
    """

    frame_len: int = 1024
    hop: int = 200
    window: str = "hamming"
    fft_len: int | None = None

    def __post_init__(self):
        if self.fft_len is None:
            object.__setattr__(self, "fft_len", self.frame_len)
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        if not 0 < self.hop <= self.frame_len <= self.fft_len:
            raise ValueError(
                "framing requires 0 < hop <= frame_len <= fft_len, got "
                f"hop={self.hop}, frame_len={self.frame_len}, fft_len={self.fft_len}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def window_coefficients(self) -> np.ndarray:
        if self.window == "rectangular":
            return np.ones(self.frame_len)
        # periodic windows: the DFT-even variants tile better under overlap-add
        return get_window(self.window, self.frame_len, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_len) // self.hop + 1


@dataclass
class Spectrogram:
    """Multichannel one-sided STFT, ``data[k, l, channel]``."""

    data: np.ndarray
    sample_rate: float
    spec: FrameSpec

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        data = np.asarray(data)
        if data.ndim == 2:
            data = data[:, :, None]
        return Spectrogram(data, self.sample_rate, self.spec)


def _as_channels(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("signal must be 1-D or (n_samples, n_channels)")
    return x


def padded_length(n_samples: int, spec: FrameSpec) -> int:
    """Length after zero-padding the tail so the last partial frame is kept."""
    if n_samples <= spec.frame_len:
        return spec.frame_len
    n_hops = -(-(n_samples - spec.frame_len) // spec.hop)
    return spec.frame_len + n_hops * spec.hop


def analyze(signal, spec: FrameSpec, sample_rate: float = 16000.0, pad: bool = True) -> Spectrogram:
    """Compute the STFT of a (multichannel) real signal.

    Parameters
    ----------
    signal : array_like
        Shape ``(n_samples,)`` or ``(n_samples, n_channels)``.
    spec : FrameSpec
    sample_rate : float
    pad : bool
        Zero-pad the tail so that a trailing partial frame is analyzed.  The
        frame count is then ``(n_padded - frame_len) // hop + 1``.

    Returns
    -------
    Spectrogram
        ``data`` has shape ``(fft_len // 2 + 1, L, n_channels)``.
    """
    x = _as_channels(signal)
    if x.shape[0] < spec.frame_len:
        raise ValueError(
            f"insufficient samples: {x.shape[0]} < frame_len {spec.frame_len}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("invalid input: signal contains non-finite samples")
    if pad:
        n = padded_length(x.shape[0], spec)
        if n > x.shape[0]:
            x = np.concatenate([x, np.zeros((n - x.shape[0], x.shape[1]))])
    L = spec.n_frames(x.shape[0])
    idx = np.arange(L)[:, None] * spec.hop + np.arange(spec.frame_len)[None, :]
    frames = x[idx] * spec.window_coefficients()[None, :, None]  # (L, N, d)
    X = np.fft.rfft(frames, n=spec.fft_len, axis=1)  # (L, K, d)
    return Spectrogram(np.ascontiguousarray(X.transpose(1, 0, 2)), sample_rate, spec)


def window_energy(spec: FrameSpec, n_frames: int) -> np.ndarray:
    """Per-sample sum of squared window over all overlapping frames."""
    win2 = spec.window_coefficients() ** 2
    n = (n_frames - 1) * spec.hop + spec.frame_len
    acc = np.zeros(n)
    for l in range(n_frames):
        acc[l * spec.hop : l * spec.hop + spec.frame_len] += win2
    return acc


def synthesize(spectrogram: Spectrogram) -> np.ndarray:
    """Inverse STFT by weighted overlap-add.

    Each frame is inverse transformed, multiplied by the analysis window and
    accumulated; the sum is divided by the per-sample window energy.  Samples
    at the very edges that no window touches are returned as zero.

    Returns
    -------
    numpy.ndarray
        Shape ``((L - 1) * hop + frame_len, n_channels)``.
    """
    spec = spectrogram.spec
    X = np.asarray(spectrogram.data)
    if X.ndim == 2:
        X = X[:, :, None]
    K, L, d = X.shape
    if K != spec.n_bins:
        raise ValueError(f"expected {spec.n_bins} bins, got {K}")
    win = spec.window_coefficients()
    frames = np.fft.irfft(X.transpose(1, 0, 2), n=spec.fft_len, axis=1)[:, : spec.frame_len]
    frames *= win[None, :, None]
    n = (L - 1) * spec.hop + spec.frame_len
    out = np.zeros((n, d))
    for l in range(L):
        out[l * spec.hop : l * spec.hop + spec.frame_len] += frames[l]
    energy = window_energy(spec, L)
    floor = 1e-10 * energy.max()
    good = energy > floor
    live = np.flatnonzero(good)
    if live.size == 0 or not np.all(good[live[0] : live[-1] + 1]):
        raise ValueError("non-invertible framing: zero window energy inside the signal")
    out[good] /= energy[good, None]
    out[~good] = 0.0
    return out


def bin_weights(n_bins: int, fft_len: int) -> np.ndarray:
    """Multiplicity of each one-sided bin in the full spectrum (1 or 2)."""
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    if fft_len % 2 == 0:
        w[-1] = 1.0
    return w


def frame_energy(X: np.ndarray, fft_len: int | None = None) -> np.ndarray:
    """Energy of each frame from a one-sided spectrum.

    Bins other than DC and Nyquist are counted twice, so the result equals the
    energy of the windowed time-domain frame (Parseval) once divided by
    ``fft_len``.  When ``fft_len`` is None the doubled sum is returned without
    the ``1 / fft_len`` factor.

    ``X`` has shape ``(K, L)`` or ``(K, L, d)``; channels are summed.
    """
    X = np.asarray(X)
    K = X.shape[0]
    n_fft = fft_len if fft_len is not None else 2 * (K - 1)
    w = bin_weights(K, n_fft)
    p = np.abs(X) ** 2
    if p.ndim == 3:
        p = p.sum(axis=2)
    e = np.tensordot(w, p, axes=(0, 0))
    if fft_len is not None:
        e = e / fft_len
    return e
