"""WAV input/output: 16-bit PCM and 32-bit float, mono or multichannel."""
from __future__ import annotations

import numpy as np
from scipy.io import wavfile


def read_wav(path: str) -> tuple[np.ndarray, int]:
    """Return ``(samples, rate)``; samples are float64 of shape ``(n, channels)``.

    PCM data is scaled to [-1, 1).
    """
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    if x.ndim == 1:
        x = x[:, None]
    return x, int(rate)


def write_wav(path: str, samples, rate: int, pcm16: bool = False) -> None:
    """Write float32 (default) or clipped 16-bit PCM samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    else:
        data = x.astype("<f4")
    wavfile.write(path, int(rate), data)
