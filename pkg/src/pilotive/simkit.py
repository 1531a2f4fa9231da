"""Synthetic multichannel mixtures with known stems.

Speech-like sources are Laplacian noise shaped by a speaker-specific spectral
envelope, a syllable-rate gain and an on/off activity pattern.  Mixing is
instantaneous, short FIR, or block-varying (a trajectory of instantaneous
matrices held constant over blocks) to emulate moving talkers.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np
from scipy import signal as sps

from .configio import write_kv
from .model import SourceRoles
from .wavio import write_wav

MIXINGS = ("instantaneous", "fir", "block_varying")


@dataclass
class Scenario:
    """Parameters of one synthetic mixture.

    ``sir_db`` is the energy ratio of the SOI image to all interferer images
    at the first microphone; ``snr_db`` the ratio of all speech to noise there.
    ``block_seconds`` is the hold time of each matrix of a block-varying
    trajectory; ``soi_motion`` and ``interferer_motion`` are the fractions of
    the way from a start column to an end column that the SOI and the other
    speakers travel over the whole signal.  Mixing columns have entries of
    comparable magnitude (between ``column_floor`` and 1 before normalization)
    so that every source reaches every microphone at a similar level.
    """

    n_channels: int = 4
    n_speakers: int = 2
    noise: bool = True
    duration: float = 6.0
    sample_rate: int = 16000
    mixing: str = "instantaneous"
    fir_taps: int = 16
    block_seconds: float = 0.25
    soi_motion: float = 1.0
    interferer_motion: float = 0.1
    column_floor: float = 0.4
    sir_db: float = 0.0
    snr_db: float = 10.0
    pause_density: float = 0.3
    level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mixing not in MIXINGS:
            raise ValueError(f"mixing must be one of {MIXINGS}")
        n_src = self.n_speakers + int(self.noise)
        if self.n_channels < n_src:
            raise ValueError("need at least as many channels as sources")
        if self.duration < 1.0:
            raise ValueError("duration must be at least 1 s")
        if not 0 <= self.pause_density < 1:
            raise ValueError("pause_density must lie in [0, 1)")
        if not (0 <= self.soi_motion <= 1 and 0 <= self.interferer_motion <= 1):
            raise ValueError("motion fractions must lie in [0, 1]")
        if not 0 < self.column_floor <= 1:
            raise ValueError("column_floor must lie in (0, 1]")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def n_sources(self) -> int:
        return self.n_speakers + int(self.noise)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if isinstance(v, str):
                if f.type in ("int", int):
                    v = int(v)
                elif f.type in ("float", float):
                    v = float(v)
                elif f.type in ("bool", bool):
                    v = v.strip().lower() in ("1", "true", "yes", "on")
            kw[f.name] = v
        return cls(**kw)


@dataclass
class Mixture:
    """A simulated recording and its ground truth.

    ``stems[j]`` is the image of source ``j`` at all microphones; the order is
    SOI, interferers, noise.  ``matrices`` holds one ``(d, n_src)`` matrix per
    hold block (a single one for static mixing) and ``block_samples`` its hold
    length.
    """

    signal: np.ndarray
    stems: list
    dry: np.ndarray
    scenario: Scenario
    matrices: np.ndarray
    block_samples: int
    gains: np.ndarray
    realized_sir_db: float
    realized_snr_db: float = float("nan")
    filters: np.ndarray | None = None

    def roles(self, soi: int = 0) -> SourceRoles:
        """Reference stems with speaker ``soi`` as the target."""
        n_spk = self.scenario.n_speakers
        if not 0 <= soi < n_spk:
            raise ValueError("SOI must be one of the speakers")
        background = [self.stems[j] for j in range(n_spk) if j != soi]
        noise = self.stems[n_spk] if self.scenario.noise else None
        return SourceRoles(self.stems[soi], background, noise)


def _rngs(seed: int):
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def activity_pattern(rng, n: int, fs: float, pause_density: float, mean_pause: float = 0.6) -> np.ndarray:
    """0/1 gate with exactly ``pause_density`` of the samples in pauses.

    Boundaries are smoothed by a 10 ms raised-cosine kernel.
    """
    gate = np.ones(n)
    n_silent = int(round(pause_density * n))
    if n_silent == 0:
        return gate
    n_pauses = max(1, int(round(n_silent / (mean_pause * fs))))
    pauses = np.diff(np.round(np.concatenate([[0], np.sort(rng.uniform(0, 1, n_pauses - 1)), [1]]) * n_silent)).astype(int)
    talk_total = n - n_silent
    cuts = np.sort(rng.uniform(0, 1, n_pauses))
    talks = np.diff(np.round(np.concatenate([[0], cuts, [1]]) * talk_total)).astype(int)
    pos = talks[0]
    for p, t in zip(pauses, talks[1:]):
        gate[pos : pos + p] = 0.0
        pos += p + t
    ramp_len = int(0.01 * fs)
    if ramp_len > 1:
        kernel = np.hanning(ramp_len + 2)[1:-1]
        gate = np.convolve(gate, kernel / kernel.sum(), mode="same")
    return gate


def _smooth_noise(rng, shape, width: float, axis: int) -> np.ndarray:
    z = rng.standard_normal(shape)
    z = _gauss_filter(z, width, axis)
    return z / max(z.std(), 1e-12)


def _gauss_filter(z, width, axis):
    from scipy.ndimage import gaussian_filter1d

    return gaussian_filter1d(z, width, axis=axis, mode="wrap")


def speech_like(rng, n: int, fs: float, pause_density: float = 0.3) -> np.ndarray:
    """One super-Gaussian, spectrally shaped, intermittent source."""
    nper, hop = 512, 128
    e = rng.laplace(size=n + nper)
    f, _, E = sps.stft(e, fs=fs, nperseg=nper, noverlap=nper - hop)
    n_bins, n_fr = E.shape
    freqs = f / (fs / 2)
    # speaker-specific envelope: tilt plus a few formant-like bumps
    log_env = -1.5 * freqs
    for _ in range(3):
        c, wdt, h = rng.uniform(0.05, 0.7), rng.uniform(0.03, 0.1), rng.uniform(0.5, 1.5)
        log_env = log_env + h * np.exp(-0.5 * ((freqs - c) / wdt) ** 2)
    # slowly varying spectral detail (~100 ms) and syllable-rate gain (~4 Hz)
    frames_per_s = fs / hop
    detail = 0.5 * _smooth_noise(rng, (n_bins, n_fr), 0.1 * frames_per_s, axis=1)
    detail = _gauss_filter(detail, 4.0, axis=0)
    syll = 0.6 * _smooth_noise(rng, (n_fr,), frames_per_s / 12, axis=0)
    E = E * np.exp(log_env[:, None] + detail + syll[None, :])
    _, s = sps.istft(E, fs=fs, nperseg=nper, noverlap=nper - hop)
    s = s[:n]
    if s.shape[0] < n:
        s = np.concatenate([s, np.zeros(n - s.shape[0])])
    s = s * activity_pattern(rng, n, fs, pause_density)
    return s / max(np.sqrt(np.mean(s**2)), 1e-12)


def gen_sources(scenario: Scenario) -> np.ndarray:
    """Dry sources, shape ``(n_samples, n_sources)``: speakers then noise."""
    src_rng = _rngs(scenario.seed)[0]
    n, fs = scenario.n_samples, scenario.sample_rate
    cols = []
    for _ in range(scenario.n_speakers):
        cols.append(speech_like(src_rng, n, fs, scenario.pause_density))
    if scenario.noise:
        cols.append(src_rng.standard_normal(n))
    return np.stack(cols, axis=1)


def _balanced_columns(rng, d: int, m: int, floor: float, signs=None) -> np.ndarray:
    if signs is None:
        signs = rng.choice([-1.0, 1.0], size=(d, m))
    A = signs * rng.uniform(floor, 1.0, size=(d, m))
    return A / np.linalg.norm(A, axis=0, keepdims=True)


def _random_matrix(rng, d: int, m: int, floor: float = 0.4, max_cond: float = 100.0) -> np.ndarray:
    while True:
        A = _balanced_columns(rng, d, m, floor)
        if np.linalg.cond(A) <= max_cond:
            return A


def _path(start: np.ndarray, end: np.ndarray, fraction: float, n_steps: int) -> np.ndarray:
    """Unit vectors on the great circle from ``start`` towards ``end``."""
    cos = np.clip(start @ end, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-12:
        return np.repeat(start[None], n_steps, axis=0)
    v = end - start * cos
    v /= np.linalg.norm(v)
    th = np.linspace(0.0, fraction * angle, n_steps)
    return np.cos(th)[:, None] * start[None, :] + np.sin(th)[:, None] * v[None, :]


def mixing_trajectory(scenario: Scenario, n_blocks: int, rng=None) -> np.ndarray:
    """Per-block mixing matrices, shape ``(n_blocks, d, n_src)``.

    Every speaker column moves towards an end column with the same sign
    pattern, so it stays magnitude-balanced along the way; noise is static.
    """
    rng = rng if rng is not None else _rngs(scenario.seed)[1]
    d, m = scenario.n_channels, scenario.n_sources
    floor = scenario.column_floor
    while True:
        A0 = _random_matrix(rng, d, m, floor)
        A1 = _balanced_columns(rng, d, m, floor, signs=np.sign(A0))
        traj = np.repeat(A0[None], n_blocks, axis=0)
        if n_blocks > 1:
            for j in range(scenario.n_speakers):
                frac = scenario.soi_motion if j == 0 else scenario.interferer_motion
                traj[:, :, j] = _path(A0[:, j], A1[:, j], frac, n_blocks)
        if all(np.linalg.cond(A) <= 100.0 for A in traj):
            return traj


def _fir_filters(rng, d: int, m: int, taps: int) -> np.ndarray:
    h = rng.standard_normal((d, m, taps)) * np.exp(-np.arange(taps) / (taps / 4))[None, None, :] * 0.3
    delays = rng.integers(0, 4, size=(d, m))
    for i in range(d):
        for j in range(m):
            h[i, j, min(delays[i, j], taps - 1)] += 1.0
    return h


def apply_mixing(sources: np.ndarray, matrices: np.ndarray, block_samples: int, filters=None) -> list:
    """Images of every source at every microphone.

    With a single matrix the mixing is static; otherwise matrix ``b`` is held
    on samples ``[b * block_samples, (b + 1) * block_samples)``.
    """
    n, m = sources.shape
    d = matrices.shape[1]
    block_of = np.minimum(np.arange(n) // block_samples, matrices.shape[0] - 1)
    stems = []
    for j in range(m):
        if filters is not None:
            img = np.stack([np.convolve(sources[:, j], filters[i, j])[:n] for i in range(d)], axis=1)
        else:
            img = sources[:, j, None] * matrices[block_of, :, j]
        stems.append(img)
    return stems


def mix(sources: np.ndarray, scenario: Scenario) -> Mixture:
    """Mix dry sources and set the SIR and SNR at the first microphone exactly."""
    _, mix_rng, _ = _rngs(scenario.seed)
    n, m = sources.shape
    if m != scenario.n_sources:
        raise ValueError("source count does not match scenario")
    d = scenario.n_channels
    filters = None
    if scenario.mixing == "block_varying":
        block_samples = max(int(round(scenario.block_seconds * scenario.sample_rate)), 1)
        n_blocks = -(-n // block_samples)
        matrices = mixing_trajectory(scenario, n_blocks, mix_rng)
    else:
        block_samples = n
        matrices = _random_matrix(mix_rng, d, m, scenario.column_floor)[None]
        if scenario.mixing == "fir":
            filters = _fir_filters(mix_rng, d, m, scenario.fir_taps)
    raw = apply_mixing(sources, matrices, block_samples, filters)
    return _set_levels(sources, raw, scenario, matrices, block_samples, filters)


def _set_levels(sources, raw, scenario, matrices, block_samples, filters) -> Mixture:
    n_spk = scenario.n_speakers
    energy = np.array([np.sum(img[:, 0] ** 2) for img in raw])
    if np.any(energy[:n_spk] <= 0) or (scenario.noise and energy[-1] <= 0):
        raise ValueError("cannot set SIR against silent source")
    gains = np.ones(len(raw))
    e_soi = energy[0]
    n_int = n_spk - 1
    for j in range(1, n_spk):
        gains[j] = np.sqrt(e_soi * 10 ** (-scenario.sir_db / 10) / n_int / energy[j])
    speech = e_soi + sum(gains[j] ** 2 * energy[j] for j in range(1, n_spk))
    if scenario.noise:
        gains[-1] = np.sqrt(speech * 10 ** (-scenario.snr_db / 10) / energy[-1])
    gains *= scenario.level / np.sqrt(e_soi / raw[0].shape[0])
    stems = [g * img for g, img in zip(gains, raw)]
    signal = np.sum(stems, axis=0)
    e = np.array([np.sum(s[:, 0] ** 2) for s in stems])
    sir = 10 * np.log10(e[0] / e[1:n_spk].sum()) if n_spk > 1 else float("inf")
    snr = 10 * np.log10(e[:n_spk].sum() / e[-1]) if scenario.noise else float("inf")
    return Mixture(signal, stems, sources, scenario, matrices, block_samples, gains, float(sir), float(snr), filters)


def simulate(scenario: Scenario) -> Mixture:
    return mix(gen_sources(scenario), scenario)


def near_silent_fraction(s: np.ndarray, fs: float, window: float = 0.1, rel_db: float = -40.0) -> float:
    """Fraction of non-overlapping windows whose RMS is below ``rel_db`` of the whole."""
    w = int(round(window * fs))
    nw = s.shape[0] // w
    seg = s[: nw * w].reshape(nw, w)
    rms = np.sqrt(np.mean(seg**2, axis=1))
    ref = np.sqrt(np.mean(s**2))
    return float(np.mean(rms < ref * 10 ** (rel_db / 20)))


def write_scenario(mixture: Mixture, out_dir: str) -> dict:
    """Write mixture, stems and a key=value manifest; return the manifest."""
    sc = mixture.scenario
    os.makedirs(out_dir, exist_ok=True)
    fs = sc.sample_rate
    write_wav(os.path.join(out_dir, "mixture.wav"), mixture.signal, fs)
    names = [f"speaker{j}" for j in range(sc.n_speakers)] + (["noise"] if sc.noise else [])
    for name, stem in zip(names, mixture.stems):
        write_wav(os.path.join(out_dir, f"stem_{name}.wav"), stem, fs)
    manifest = dict(sc.to_dict())
    manifest["realized_sir_db"] = f"{round(mixture.realized_sir_db, 6) + 0.0:.6f}"
    manifest["realized_snr_db"] = f"{round(mixture.realized_snr_db, 6) + 0.0:.6f}"
    manifest["stems"] = ",".join(f"stem_{n}.wav" for n in names)
    write_kv(os.path.join(out_dir, "manifest.txt"), manifest)
    return manifest
