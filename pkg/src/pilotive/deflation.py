"""Extract, assess, subtract: iterated extraction with least-squares deflation.

Each step runs the piloted solver on the current mixture.  When the estimate
does not beat the mixture's first channel in the assessment, the estimated
source is removed block by block (``x - a w^H x``), one channel dimension is
dropped, and the reduced mixture replaces the current one if it scores higher.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ive
from .assess import AssessmentBackend, Candidate, compare
from .model import DemixingState
from .pilot import build_pilot
from .stft import Spectrogram, synthesize

REDUCTIONS = ("drop_channel", "pca")


def drop_channel_matrix(d: int, channel: int) -> np.ndarray:
    """Identity without row ``channel``, shape ``(d - 1, d)``."""
    if not 0 <= channel < d:
        raise ValueError(f"channel {channel} out of range for {d} channels")
    return np.delete(np.eye(d), channel, axis=0)


def leading_channel(w: np.ndarray) -> int:
    """Channel with the largest average relative weight in ``w``.

    Dropping channel ``j`` is injective on the residual subspace
    ``{v : w^H v = 0}`` only where ``w_j != 0``, so the channel the separating
    vector leans on most is the safe one to drop.
    """
    w = np.asarray(w)
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    rel = np.abs(w) / np.where(norm > 0, norm, 1.0)
    return int(np.argmax(rel.mean(axis=0)))


def pca_matrix(residual: np.ndarray) -> np.ndarray:
    """Per-frequency projection onto the ``d - 1`` leading principal axes.

    Returns ``(K, d - 1, d)`` with orthonormal rows.
    """
    K, L, d = residual.shape
    R = np.einsum("kli,klj->kij", residual, residual.conj()) / L
    _, vecs = np.linalg.eigh(R)
    # eigh sorts ascending; keep the d - 1 largest, strongest first
    return np.swapaxes(vecs[:, :, ::-1][:, :, : d - 1], 1, 2).conj()


def _check_reduction(D: np.ndarray, K: int, d: int) -> np.ndarray:
    D = np.asarray(D)
    if D.ndim == 2:
        D = np.broadcast_to(D, (K, *D.shape))
    if D.shape != (K, d - 1, d):
        raise ValueError(f"invalid reduction matrix: expected shape ({d - 1}, {d})")
    sv = np.linalg.svd(D, compute_uv=False)
    if np.any(sv[:, -1] <= 1e-12 * np.maximum(sv[:, 0], np.finfo(float).tiny)):
        raise ValueError("invalid reduction matrix: not full row rank")
    return D


def residual(x: np.ndarray, state: DemixingState) -> np.ndarray:
    """``x - a_t (w^H x)`` with the mixing vector of each frame's block."""
    x = np.asarray(getattr(x, "data", x))
    if x.shape[-1] != state.w.shape[-1]:
        raise ValueError("state does not match the mixture's channel count")
    u = state.demix(x)
    return x - state.frame_mixing() * u[:, :, None]


def subtract(x, state: DemixingState, reduction="drop_channel", channel: int | None = None):
    """Remove the extracted source and reduce the channel count by one.

    Parameters
    ----------
    x : ndarray (K, L, d) or Spectrogram
    state : DemixingState
        State of an extraction run on ``x``.
    reduction : {"drop_channel", "pca"} or ndarray
        Policy, or an explicit ``(d - 1, d)`` / ``(K, d - 1, d)`` matrix.
    channel : int, optional
        Channel dropped by ``"drop_channel"``; defaults to
        :func:`leading_channel` of ``state.w``.

    Returns
    -------
    reduced : same type as ``x``, with ``d - 1`` channels
    D : ndarray (K, d - 1, d)
    """
    data = np.asarray(getattr(x, "data", x))
    K, _, d = data.shape
    if d < 2:
        raise ValueError("cannot deflate a single-channel mixture")
    res = residual(data, state)
    if isinstance(reduction, str):
        if reduction == "drop_channel":
            ch = leading_channel(state.w) if channel is None else channel
            D = drop_channel_matrix(d, ch)
        elif reduction == "pca":
            D = pca_matrix(res)
        else:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")
    else:
        D = reduction
    D = _check_reduction(D, K, d)
    out = np.einsum("kij,klj->kli", D, res)
    if isinstance(x, Spectrogram):
        return x.with_data(out), D
    return out, D


@dataclass
class DeflationConfig:
    """Parameters of the extract-assess-subtract loop.

    ``max_steps`` bounds the number of solver runs and must not exceed
    ``d - 1``.  ``reduction`` is ``"drop_channel"`` (the channel given by
    ``drop_index``, or the one chosen by :func:`leading_channel`) or ``"pca"``.
    """

    max_steps: int = 3
    reduction: str = "drop_channel"
    drop_index: int | None = None
    solver: ive.SolverConfig = field(default_factory=ive.SolverConfig)
    assessment: AssessmentBackend | None = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


@dataclass
class AuditRecord:
    """One assessment made by the loop.

    ``kind`` is ``"estimate"`` (estimate vs current mixture) or ``"reduced"``
    (reduced mixture vs current mixture).  ``decision`` is the action taken.
    """

    step: int
    kind: str
    channels: int
    score_candidate: float
    score_incumbent: float
    decision: str
    dropped: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "AuditRecord":
        return cls(**json.loads(line))


@dataclass
class DeflationResult:
    """Final SOI estimate and the trail of decisions that produced it.

    ``origin`` is ``"estimate"`` when a solver output was accepted and
    ``"mixture"`` when the first channel of a (possibly reduced) mixture was
    returned.
    """

    estimate: Spectrogram
    signal: np.ndarray
    origin: str
    step: int
    solver_runs: int
    audit: list
    extraction: object = None

    def audit_lines(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.audit)


def candidate_name(prefix: str, step: int, kind: str) -> str:
    """Name under which a score table must list a candidate of the loop."""
    return f"{prefix}step{step}:{kind}"


def _first_channel(x: Spectrogram) -> Spectrogram:
    return x.with_data(x.data[:, :, :1])


def _candidate(spec: Spectrogram, name: str, n_samples: int | None) -> Candidate:
    y = synthesize(spec)[:, 0]
    if n_samples is not None:
        y = y[:n_samples]
    return Candidate(name=name, samples=y)


def extract_with_deflation(
    x: Spectrogram,
    soi_id,
    cfg: DeflationConfig,
    mask,
    n_samples: int | None = None,
    name_prefix: str = "",
) -> DeflationResult:
    """Run the extract-assess-subtract loop.

    Parameters
    ----------
    x : Spectrogram (K, L, d)
    soi_id : speaker identifier passed to the assessment backend
    cfg : DeflationConfig
    mask : ndarray of bool (L,)
        Dominance mask; it is kept fixed while the pilot energies are
        recomputed from the first channel of every reduced mixture.
    n_samples : int, optional
        Length of the time-domain candidates handed to the backend.
    name_prefix : str
        Prefix of the candidate names used for score-table lookups.
    """
    if cfg.assessment is None:
        raise ValueError("deflation needs an assessment backend")
    d = x.n_channels
    if d < 2:
        raise ValueError("deflation needs at least two channels")
    if cfg.max_steps > d - 1:
        raise ValueError(f"max_steps must not exceed d - 1 = {d - 1}")
    audit: list[AuditRecord] = []
    current = x
    runs = 0
    for i in range(cfg.max_steps):
        pilot = build_pilot(current, mask)
        solver = _with_pilot(cfg.solver, pilot)
        result = ive.run(current, solver)
        runs += 1
        est = x.with_data(result.image[:, :, None])
        mix1 = _first_channel(current)
        c_est = _candidate(est, candidate_name(name_prefix, i, "estimate"), n_samples)
        c_mix = _candidate(mix1, candidate_name(name_prefix, i, "mixture"), n_samples)
        choice, s_est, s_mix = compare(c_est, c_mix, soi_id, cfg.assessment)
        if choice == "a":
            audit.append(AuditRecord(i, "estimate", current.n_channels, s_est, s_mix, "return_estimate"))
            return DeflationResult(est, c_est.samples, "estimate", i, runs, audit, result)
        audit.append(AuditRecord(i, "estimate", current.n_channels, s_est, s_mix, "deflate"))
        channel = cfg.drop_index if cfg.reduction == "drop_channel" else None
        reduced, _ = subtract(current, result.state, cfg.reduction, channel)
        dropped = None
        if cfg.reduction == "drop_channel":
            dropped = leading_channel(result.state.w) if channel is None else channel
        c_red = _candidate(_first_channel(reduced), candidate_name(name_prefix, i + 1, "mixture"), n_samples)
        choice, s_red, _ = compare(c_red, c_mix, soi_id, cfg.assessment)
        if choice == "b":
            audit.append(AuditRecord(i, "reduced", reduced.n_channels, s_red, s_mix, "return_mixture", dropped))
            return DeflationResult(mix1, c_mix.samples, "mixture", i, runs, audit, result)
        audit.append(AuditRecord(i, "reduced", reduced.n_channels, s_red, s_mix, "continue", dropped))
        current = reduced
    final = _first_channel(current)
    c_fin = _candidate(final, candidate_name(name_prefix, cfg.max_steps, "mixture"), n_samples)
    return DeflationResult(final, c_fin.samples, "mixture", cfg.max_steps, runs, audit, None)


def _with_pilot(cfg: ive.SolverConfig, pilot) -> ive.SolverConfig:
    kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    kw["pilot"] = pilot
    return ive.SolverConfig(**kw)


def replay(records) -> list[str]:
    """Recompute every decision of an audit trail from its recorded scores."""
    out = []
    for r in records:
        if isinstance(r, str):
            r = AuditRecord.from_json(r)
        better = r.score_candidate > r.score_incumbent
        if r.kind == "estimate":
            out.append("return_estimate" if better else "deflate")
        else:
            out.append("continue" if better else "return_mixture")
    return out
