"""Auxiliary-function independent vector extraction with a constant separating vector.

Three engines share the same update rules:

* ``csv`` -- one separating vector per frequency for the whole signal, mixing
  vectors and statistics per block of ``block_len`` frames;
* ``fs`` -- the static special case with a single block;
* ``bs`` -- static extraction on sliding blocks, warm-started from the previous
  block, with recursively averaged statistics.

All elementary operations broadcast over leading axes: ``C`` of shape
``(K, T, d, d)`` and ``w`` of shape ``(K, 1, d)`` work as well as single
matrices and vectors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import BlockPartition, NumericalError, DemixingState, ExtractionResult, block_averages, block_covariances, partition

logger = logging.getLogger(__name__)

MODES = ("fs", "csv", "bs")


def quad(M: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Real part of ``w^H M w`` over the trailing axes."""
    return np.einsum("...i,...ij,...j->...", w.conj(), M, w).real


def auxiliary_r(u: np.ndarray, pilot=0.0) -> np.ndarray:
    """Frame norm across frequency, optionally augmented by a pilot energy.

    Parameters
    ----------
    u : ndarray, shape (K,) or (K, L)
        SOI estimate.
    pilot : float or ndarray (L,)
        Nonnegative pilot energy added under the square root.
    """
    pilot = np.asarray(pilot, dtype=float)
    if np.any(pilot < 0):
        raise ValueError("pilot values must be nonnegative")
    return np.sqrt(np.sum(np.abs(u) ** 2, axis=0) + pilot)


def weighted_covariance(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``mean_l x_l x_l^H / r_l`` for ``x`` of shape ``(..., n, d)``."""
    r = np.asarray(r, dtype=float)
    xs = x / np.sqrt(r)[..., :, None]
    return np.swapaxes(xs, -1, -2) @ xs.conj() / x.shape[-2]


def ogc_mixing_vector(C: np.ndarray, w: np.ndarray, floor: float | None = None) -> np.ndarray:
    """Mixing vector ``C w / (w^H C w)`` implied by the orthogonal constraint.

    With ``floor`` given, quadratic forms below it are clamped instead of
    raising; this is what the solver loop uses on silent blocks.
    """
    Cw = C @ w[..., None]
    s2 = quad(C, w)
    if floor is None:
        if np.any(s2 <= np.finfo(float).tiny):
            raise NumericalError("degenerate SOI variance on block")
    else:
        s2 = np.maximum(s2, floor)
    return Cw[..., 0] / s2[..., None]


def soi_scale(C: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Standard deviation ``sqrt(w^H C w)`` of the SOI estimate on a block."""
    q = np.einsum("...i,...ij,...j->...", w.conj(), C, w)
    scale = np.maximum(np.abs(q), 1.0)
    if np.any(q.real < -1e-12 * scale):
        raise NumericalError("covariance not PSD")
    return np.sqrt(np.maximum(q.real, 0.0))


_MAX_COND = 1e12


def _solve(M: np.ndarray, b: np.ndarray, regularize: bool) -> np.ndarray:
    d = M.shape[-1]
    Mf = M.reshape(-1, d, d)
    bf = b.reshape(-1, d)
    if regularize:
        bad = np.linalg.cond(Mf) > _MAX_COND
    else:
        bad = np.zeros(Mf.shape[0], dtype=bool)
    out = np.empty_like(bf)
    ok = ~bad
    if np.any(ok):
        try:
            out[ok] = np.linalg.solve(Mf[ok], bf[ok][..., None])[..., 0]
        except np.linalg.LinAlgError:
            if not regularize:
                raise NumericalError("rank-deficient block statistics") from None
            bad[:] = True
    fail = ~np.all(np.isfinite(out), axis=-1) & ~bad
    if np.any(fail):
        if not regularize:
            raise NumericalError("rank-deficient block statistics")
        bad |= fail
    eye = np.eye(d)
    for i in np.flatnonzero(bad):
        lam = max(1e-9 * np.trace(Mf[i]).real / d, np.finfo(float).tiny)
        out[i] = np.linalg.solve(Mf[i] + lam * eye, bf[i])
    return out.reshape(b.shape)


def update_w(V: np.ndarray, a: np.ndarray, sigma: np.ndarray, w: np.ndarray, regularize: bool = False) -> np.ndarray:
    """New separating vector from the block statistics.

    Solves ``(sum_t V_t / sigma_t^2) w_new = sum_t (w^H V_t w / sigma_t^2) a_t``.

    Parameters
    ----------
    V : ndarray (..., T, d, d)
    a : ndarray (..., T, d)
    sigma : ndarray (..., T)
    w : ndarray (..., d)
    regularize : bool
        Fall back to a Tikhonov-loaded solve where the system is singular
        instead of raising.
    """
    s2 = np.asarray(sigma, dtype=float) ** 2
    M = np.sum(V / s2[..., None, None], axis=-3)
    q = quad(V, w[..., None, :]) / s2
    rhs = np.sum(q[..., None] * a, axis=-2)
    return _solve(M, rhs, regularize)


def normalize_w(w: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Scale ``w`` so that ``sum_t w^H V_t w = 1`` for every frequency."""
    total = quad(V, w[..., None, :]).sum(axis=-1)
    if np.any(total <= 0):
        raise NumericalError("null separating vector")
    return w / np.sqrt(total)[..., None]


def _fix_phase(w: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(w), axis=-1)
    lead = np.take_along_axis(w, idx[..., None], axis=-1)
    ph = np.where(np.abs(lead) > 0, lead / np.maximum(np.abs(lead), 1e-300), 1.0)
    return w * ph.conj()


@dataclass
class SolverConfig:
    """Parameters of one extraction run.

    Attributes
    ----------
    mode : {"csv", "fs", "bs"}
    iterations : int
        Whole-signal iterations (csv, fs) or iterations per block (bs).
        ``None`` picks 50 for csv/fs and 5 for bs.
    block_len : int
        Frames per block.  Ignored by ``fs``.
    block_shift : int or None
        Block shift for ``bs``; defaults to ``block_len // 4``.
    forgetting : float
        Weight of the newest block in the recursive statistics of ``bs``.
    init : str, int or ndarray
        ``"ones"``, a channel index (unit-vector start) or an array of shape
        ``(K, d)`` / ``(d,)``.
    pilot : ndarray (L,) or PilotTrack or None
    pilot_gain : float or None
        Fixed multiplier applied to the pilot.  ``None`` rescales the pilot at
        every iteration so that its mean over active frames is
        ``pilot_strength`` times the mean frame energy of the current SOI
        estimate, which keeps the piloted run invariant to the overall level
        of the recording.
    pilot_strength : float
        Relative weight of the pilot when ``pilot_gain`` is None.
    tol : float
        Stop once ``max_k ||w_new - w_old||`` falls below it.
    fix_phase : bool
        Rotate each ``w[k]`` so its largest entry is real positive.
    """

    mode: str = "csv"
    iterations: int | None = None
    block_len: int = 200
    block_shift: int | None = None
    forgetting: float = 0.3
    init: object = "ones"
    pilot: object = None
    pilot_gain: float | None = None
    pilot_strength: float = 100.0
    tol: float = 1e-6
    fix_phase: bool = False
    record_trajectory: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.iterations is None:
            self.iterations = 5 if self.mode == "bs" else 50
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.forgetting <= 1:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if self.block_len < 1:
            raise ValueError("block_len must be >= 1")
        if self.pilot_strength <= 0 or (self.pilot_gain is not None and self.pilot_gain < 0):
            raise ValueError("pilot weights must be positive")


def initial_w(init, K: int, d: int) -> np.ndarray:
    if isinstance(init, str):
        if init != "ones":
            raise ValueError(f"unknown init {init!r}")
        return np.ones((K, d), dtype=complex)
    if isinstance(init, (int, np.integer)):
        w = np.zeros((K, d), dtype=complex)
        w[:, int(init)] = 1.0
        return w
    w = np.asarray(init, dtype=complex)
    if w.shape == (d,):
        w = np.tile(w, (K, 1))
    if w.shape != (K, d):
        raise ValueError(f"init must have shape ({K}, {d})")
    return w.copy()


def _pilot_values(pilot, L: int) -> np.ndarray:
    if pilot is None:
        return np.zeros(L)
    values = getattr(pilot, "values", pilot)
    p = np.asarray(values, dtype=float)
    if p.shape != (L,):
        raise ValueError(f"pilot must have one value per frame ({L}), got {p.shape}")
    if np.any(p < 0):
        raise ValueError("pilot values must be nonnegative")
    return p


def _effective_pilot(p: np.ndarray, u2: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    if cfg.pilot_gain is not None:
        return cfg.pilot_gain * p
    active = p > 0
    if not np.any(active):
        return p
    return p * (cfg.pilot_strength * u2.mean() / p[active].mean())


def _phi_input(u: np.ndarray, p: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    u2 = np.sum(np.abs(u) ** 2, axis=0)
    r = np.sqrt(u2 + _effective_pilot(p, u2, cfg))
    eps = 1e-8 * np.sqrt(np.mean(r**2))
    return np.maximum(r, max(eps, np.finfo(float).tiny))


def _check_input(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x))
    if x.ndim != 3:
        raise ValueError("mixture must have shape (K, L, d)")
    if not np.all(np.isfinite(x)):
        raise ValueError("invalid input: non-finite mixture")
    return x.astype(complex, copy=False)


def run(x, cfg: SolverConfig | None = None, callback=None) -> ExtractionResult:
    """Extract one source from a multichannel spectrogram.

    Parameters
    ----------
    x : ndarray (K, L, d) or Spectrogram
    cfg : SolverConfig
    callback : callable, optional
        Called as ``callback(iteration, state)`` after every csv/fs
        iteration, with the state satisfying the post-iteration invariants.

    Returns
    -------
    ExtractionResult
    """
    cfg = cfg or SolverConfig()
    x = _check_input(x)
    if cfg.mode == "bs":
        return _run_bs(x, cfg)
    K, L, d = x.shape
    block_len = L if cfg.mode == "fs" else min(cfg.block_len, L)
    part = partition(L, block_len)
    p = _pilot_values(cfg.pilot, L)

    C = block_covariances(x, part)
    active = np.einsum("ktii->k", C).real > 0
    w = initial_w(cfg.init, K, d)
    floor = np.finfo(float).tiny
    trajectory = [w.copy()] if cfg.record_trajectory else None
    deltas = []
    converged = False
    it = 0
    V = np.zeros_like(C)
    for it in range(1, cfg.iterations + 1):
        u = np.einsum("kd,kld->kl", w.conj(), x)
        r = _phi_input(u, p, cfg)
        V = block_averages(x, part, 1.0 / r)
        wb = w[:, None, :]
        a = ogc_mixing_vector(C, wb, floor=floor)
        sigma = np.maximum(np.sqrt(np.maximum(quad(C, wb), 0.0)), np.sqrt(floor))
        w_new = w.copy()
        w_new[active] = update_w(V[active], a[active], sigma[active], w[active], regularize=True)
        w_new[active] = normalize_w(w_new[active], V[active])
        if cfg.fix_phase:
            w_new = _fix_phase(w_new)
        delta = float(np.max(np.linalg.norm(w_new - w, axis=-1)))
        deltas.append(delta)
        w = w_new
        if trajectory is not None:
            trajectory.append(w.copy())
        if callback is not None:
            callback(it, _state(w, C, V, part, floor))
        if delta < cfg.tol:
            converged = True
            break

    state = _state(w, C, V, part, floor)
    u = state.demix(x)
    image = u * state.frame_mixing()[:, :, 0]
    return ExtractionResult(u, image, state, it, converged, deltas, trajectory)


def _state(w, C, V, part: BlockPartition, floor) -> DemixingState:
    wb = w[:, None, :]
    a = ogc_mixing_vector(C, wb, floor=floor)
    sigma = np.sqrt(np.maximum(quad(C, wb), 0.0))
    return DemixingState(w.copy(), a, C, V, sigma, part)


def bs_blocks(L: int, block_len: int, shift: int) -> list[tuple[int, int]]:
    """Frame ranges of the sliding blocks, the last one flush with the end."""
    block_len = min(block_len, L)
    starts = list(range(0, L - block_len + 1, shift))
    if starts[-1] + block_len < L:
        starts.append(L - block_len)
    return [(s, s + block_len) for s in starts]


def _run_bs(x: np.ndarray, cfg: SolverConfig) -> ExtractionResult:
    K, L, d = x.shape
    shift = cfg.block_shift or max(cfg.block_len // 4, 1)
    alpha = cfg.forgetting
    p = _pilot_values(cfg.pilot, L)
    floor = np.finfo(float).tiny
    w = initial_w(cfg.init, K, d)
    u_out = np.zeros((K, L), dtype=complex)
    a_out = np.zeros((K, L), dtype=complex)
    C_rec = V_rec = None
    deltas = []
    trajectory = [w.copy()] if cfg.record_trajectory else None
    converged = True
    for start, stop in bs_blocks(L, cfg.block_len, shift):
        xb = x[:, start:stop]
        one = partition(stop - start, stop - start)
        C_hat = block_covariances(xb, one)
        C_blk = C_hat if C_rec is None else (1 - alpha) * C_rec + alpha * C_hat
        active = np.einsum("ktii->k", C_blk).real > 0
        block_converged = False
        for _ in range(cfg.iterations):
            u = np.einsum("kd,kld->kl", w.conj(), xb)
            r = _phi_input(u, p[start:stop], cfg)
            V_hat = block_averages(xb, one, 1.0 / r)
            V_blk = V_hat if V_rec is None else (1 - alpha) * V_rec + alpha * V_hat
            wb = w[:, None, :]
            a = ogc_mixing_vector(C_blk, wb, floor=floor)
            sigma = np.maximum(np.sqrt(np.maximum(quad(C_blk, wb), 0.0)), np.sqrt(floor))
            w_new = w.copy()
            w_new[active] = update_w(V_blk[active], a[active], sigma[active], w[active], regularize=True)
            w_new[active] = normalize_w(w_new[active], V_blk[active])
            if cfg.fix_phase:
                w_new = _fix_phase(w_new)
            delta = float(np.max(np.linalg.norm(w_new - w, axis=-1)))
            deltas.append(delta)
            w = w_new
            if delta < cfg.tol:
                block_converged = True
                break
        converged = converged and block_converged
        C_rec, V_rec = C_blk, V_blk
        if trajectory is not None:
            trajectory.append(w.copy())
        a_blk = ogc_mixing_vector(C_blk, w[:, None, :], floor=floor)[:, 0]
        u_out[:, start:stop] = np.einsum("kd,kld->kl", w.conj(), xb)
        a_out[:, start:stop] = a_blk[:, 0][:, None]

    # state of the last block; earlier blocks live only in the stitched output
    state = _state(w, C_rec, V_rec, partition(L, L), floor)
    return ExtractionResult(u_out, u_out * a_out, state, len(deltas), converged, deltas, trajectory)


def rescale_to_reference(u: np.ndarray, state: DemixingState) -> np.ndarray:
    """Project a demixed SOI back to the first microphone, block by block."""
    return u * state.frame_mixing()[:, :, 0]
