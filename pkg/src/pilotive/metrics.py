"""Projection-based SIR/SDR and the SOI-attenuation dispersion.

The decomposition follows the BSS_EVAL convention: the estimate is projected
onto the span of delayed copies (``filter_len`` taps) of the target reference,
then of all references.  Signals are zero-extended by ``filter_len - 1``
samples so that the delayed copies are complete and the Gram matrix is
Toeplitz per reference pair.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .stft import frame_energy

logger = logging.getLogger(__name__)

CAP_DB = 100.0


def _nfft(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 2))))


def _xcorr(a_f: np.ndarray, b_f: np.ndarray, nfft: int, max_lag: int) -> np.ndarray:
    """``c[tau] = sum_m a[m] b[m + tau]`` for ``tau = 0..max_lag - 1`` from spectra."""
    return np.fft.irfft(np.conj(a_f) * b_f, nfft)[:max_lag]


@dataclass
class Decomposition:
    """``estimate = target + interference + artifact`` (zero-extended)."""

    target: np.ndarray
    interference: np.ndarray
    artifact: np.ndarray
    regularized: bool = False

    @property
    def estimate(self) -> np.ndarray:
        return self.target + self.interference + self.artifact


class Projector:
    """Least-squares projections onto delayed copies of fixed references.

    Parameters
    ----------
    references : ndarray (n_src, n_samples)
        Row 0 is the target; the others are the interfering references.
    filter_len : int
    """

    def __init__(self, references, filter_len: int = 512):
        refs = np.atleast_2d(np.asarray(references, dtype=float))
        if filter_len < 1:
            raise ValueError("filter_len must be >= 1")
        self.refs = refs
        self.n_src, self.n = refs.shape
        self.filter_len = int(filter_len)
        self.full_len = self.n + self.filter_len - 1
        self.nfft = _nfft(self.n + self.filter_len)
        self.ref_f = np.fft.rfft(refs, self.nfft, axis=1)
        self.regularized = False
        G = self._gram()
        Lf = self.filter_len
        self._target = self._factor(G[:Lf, :Lf])
        self._all = self._factor(G)

    def _gram(self) -> np.ndarray:
        Lf, m = self.filter_len, self.n_src
        G = np.empty((m * Lf, m * Lf))
        for i in range(m):
            for j in range(i, m):
                # <c_{i,a}, c_{j,b}> = xc_ij(a - b)
                pos = _xcorr(self.ref_f[i], self.ref_f[j], self.nfft, Lf)
                neg = _xcorr(self.ref_f[j], self.ref_f[i], self.nfft, Lf)
                col = pos  # a - b >= 0
                row = neg  # b - a >= 0
                block = sla.toeplitz(col, row)
                G[i * Lf : (i + 1) * Lf, j * Lf : (j + 1) * Lf] = block
                G[j * Lf : (j + 1) * Lf, i * Lf : (i + 1) * Lf] = block.T
        return G

    def _factor(self, G):
        try:
            return sla.cho_factor(G, lower=True, check_finite=False), G
        except np.linalg.LinAlgError:
            pass
        self.regularized = True
        logger.warning("rank-deficient projection basis; regularizing")
        lam = 1e-10 * max(np.trace(G) / G.shape[0], np.finfo(float).tiny)
        Gr = G + lam * np.eye(G.shape[0])
        try:
            return sla.cho_factor(Gr, lower=True, check_finite=False), Gr
        except np.linalg.LinAlgError:
            return None, Gr

    def _project(self, est_f: np.ndarray, n_src: int, factor) -> np.ndarray:
        Lf = self.filter_len
        D = np.concatenate([_xcorr(self.ref_f[i], est_f, self.nfft, Lf) for i in range(n_src)])
        cho, G = factor
        if cho is not None:
            coef = sla.cho_solve(cho, D, check_finite=False)
        else:
            coef = np.linalg.lstsq(G, D, rcond=None)[0]
        coef = coef.reshape(n_src, Lf)
        coef_f = np.fft.rfft(coef, self.nfft, axis=1)
        proj = np.fft.irfft(np.sum(coef_f * self.ref_f[:n_src], axis=0), self.nfft)
        return proj[: self.full_len]

    def decompose(self, estimate) -> Decomposition:
        est = np.asarray(estimate, dtype=float).ravel()
        if est.shape[0] != self.n:
            raise ValueError(f"estimate has {est.shape[0]} samples, references {self.n}")
        est_f = np.fft.rfft(est, self.nfft)
        s_target = self._project(est_f, 1, self._target)
        p_all = self._project(est_f, self.n_src, self._all)
        est_full = np.concatenate([est, np.zeros(self.filter_len - 1)])
        return Decomposition(s_target, p_all - s_target, est_full - p_all, self.regularized)


def decompose(estimate, references, filter_len: int = 512) -> Decomposition:
    """Split an estimate into target, interference and artifact components.

    ``references[0]`` is the target reference.
    """
    return Projector(references, filter_len).decompose(estimate)


def _ratio_db(num: float, den: float) -> float:
    if den <= 0:
        return CAP_DB if num > 0 else 0.0
    if num <= 0:
        return -CAP_DB
    return float(np.clip(10 * np.log10(num / den), -CAP_DB, CAP_DB))


def sir_sdr(dec: Decomposition) -> tuple[float, float]:
    """SIR and SDR in dB, clipped to +-100 dB."""
    t = np.sum(dec.target**2)
    i = np.sum(dec.interference**2)
    e = np.sum((dec.interference + dec.artifact) ** 2)
    return _ratio_db(t, i), _ratio_db(t, e)


def attenuation_ratios(estimate, reference, floor_db: float = -40.0) -> np.ndarray:
    """Per-frame energy ratio of estimate to reference on active frames.

    Both inputs are one-sided spectrograms ``(K, L)`` with identical framing.
    Frames whose reference energy is more than ``-floor_db`` dB below the
    loudest reference frame are skipped.
    """
    est = np.asarray(estimate)
    ref = np.asarray(reference)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference must share the framing")
    e_ref = frame_energy(ref)
    e_est = frame_energy(est)
    if e_ref.max() <= 0:
        raise ValueError("silent reference")
    active = e_ref >= e_ref.max() * 10 ** (floor_db / 10)
    return e_est[active] / e_ref[active]


def attenuation_std(estimate, reference, floor_db: float = -40.0) -> float:
    """Standard deviation of the SOI attenuation over active frames."""
    return float(np.std(attenuation_ratios(estimate, reference, floor_db)))


@dataclass
class EvalReport:
    sir_db: float
    sdr_db: float
    isir_db: float
    isdr_db: float
    input_sir_db: float
    input_sdr_db: float
    attenuation_std: float = float("nan")
    intervals: list = field(default_factory=list)
    regularized: bool = False

    def as_dict(self) -> dict:
        return {
            "sir_db": self.sir_db,
            "sdr_db": self.sdr_db,
            "isir_db": self.isir_db,
            "isdr_db": self.isdr_db,
            "input_sir_db": self.input_sir_db,
            "input_sdr_db": self.input_sdr_db,
            "attenuation_std": self.attenuation_std,
        }


def _evaluate_pair(estimate, mixture, references, filter_len):
    proj = Projector(references, filter_len)
    out = sir_sdr(proj.decompose(estimate))
    inp = sir_sdr(proj.decompose(mixture))
    return out, inp, proj.regularized


def evaluate(
    estimate,
    references,
    mixture,
    filter_len: int = 512,
    window: int | None = None,
    attenuation: float = float("nan"),
) -> EvalReport:
    """SIR/SDR of an estimate and their improvement over the mixture.

    Parameters
    ----------
    estimate, mixture : ndarray (n,)
        Estimate and first mixture channel, time domain.
    references : ndarray (n_src, n)
        Target reference first.
    window : int, optional
        Evaluate on non-overlapping windows of this many samples and average
        the dB values; the trailing partial window is ignored.
    """
    estimate = np.asarray(estimate, dtype=float).ravel()
    mixture = np.asarray(mixture, dtype=float).ravel()
    references = np.atleast_2d(np.asarray(references, dtype=float))
    n = references.shape[1]
    if estimate.shape[0] != n or mixture.shape[0] != n:
        raise ValueError(
            f"length mismatch: estimate {estimate.shape[0]}, mixture {mixture.shape[0]}, references {n}"
        )
    if window is None:
        (sir, sdr), (isir0, isdr0), reg = _evaluate_pair(estimate, mixture, references, filter_len)
        return EvalReport(sir, sdr, sir - isir0, sdr - isdr0, isir0, isdr0, attenuation, [], reg)
    rows = []
    reg = False
    for start in range(0, n - window + 1, window):
        sl = slice(start, start + window)
        refs = references[:, sl]
        if np.sum(refs[0] ** 2) <= 0:
            continue
        (sir, sdr), (s0, d0), r = _evaluate_pair(estimate[sl], mixture[sl], refs, min(filter_len, window))
        reg = reg or r
        rows.append((start, sir, sdr, s0, d0))
    if not rows:
        raise ValueError("silent reference")
    arr = np.array([r[1:] for r in rows])
    sir, sdr, s0, d0 = (float(v) for v in arr.mean(axis=0))
    intervals = [(r[0], r[1], r[2]) for r in rows]
    return EvalReport(sir, sdr, sir - s0, sdr - d0, s0, d0, attenuation, intervals, reg)
