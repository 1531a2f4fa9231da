"""Pilot tracks: per-frame SOI energy on frames where the SOI dominates.

Dominance comes either from reference stems (oracle) or from a table of
per-frame speaker scores produced by an external speaker-identification
system.  Frame energies use the one-sided spectrum with doubled interior
bins (see :func:`pilotive.stft.frame_energy`), without the ``1 / fft_len``
factor.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import SourceRoles
from .stft import FrameSpec, analyze, frame_energy

PROVENANCES = ("oracle", "score_table", "zero")


@dataclass
class PilotTrack:
    values: np.ndarray
    mask: np.ndarray
    provenance: str = "oracle"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    @property
    def density(self) -> float:
        return float(np.mean(self.mask))


@dataclass
class ScoreTable:
    """Speaker scores for an enrollment roster.

    Attributes
    ----------
    roster : list of str
    frame_scores : ndarray (L, n_speakers)
    theta_min : dict
        Lowest score at which each speaker still counts as active; missing
        speakers default to ``-inf``.
    utterance_scores : dict
        ``{(signal_name, speaker_id): score}``.
    """

    roster: list
    frame_scores: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    theta_min: dict = field(default_factory=dict)
    utterance_scores: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame_scores = np.asarray(self.frame_scores, dtype=float)
        if self.frame_scores.size and self.frame_scores.shape[1] != len(self.roster):
            raise ValueError("every frame row must cover the full roster")
        if not np.all(np.isfinite(self.frame_scores)):
            raise ValueError("scores must be finite")

    @property
    def n_frames(self) -> int:
        return self.frame_scores.shape[0]

    def threshold(self, speaker) -> float:
        return float(self.theta_min.get(speaker, -np.inf))

    def aligned(self, n_frames: int, tolerance: int = 1) -> "ScoreTable":
        """Table with exactly ``n_frames`` rows (nearest-frame mapping).

        External scorers may be off by a frame at the edges; larger mismatches
        raise.
        """
        have = self.n_frames
        if abs(have - n_frames) > tolerance:
            raise ValueError(f"score table has {have} frames, mixture has {n_frames}")
        if have == n_frames:
            return self
        rows = np.minimum(np.arange(n_frames), have - 1)
        return ScoreTable(list(self.roster), self.frame_scores[rows], dict(self.theta_min), dict(self.utterance_scores))

    def utterance_score(self, signal_name: str, speaker) -> float:
        try:
            return float(self.utterance_scores[(signal_name, speaker)])
        except KeyError:
            raise KeyError(f"unscored signal: {signal_name!r} for speaker {speaker!r}") from None


def read_score_table(path: str, theta_path: str | None = None, utterance_path: str | None = None) -> ScoreTable:
    """Parse ``frame,<spk1>,...`` CSV plus optional threshold and utterance files."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0].strip() != "frame":
            raise ValueError(f"{path}: header must start with 'frame'")
        roster = [h.strip() for h in header[1:]]
        rows = []
        for n, row in enumerate(reader):
            if not row:
                continue
            if int(row[0]) != n:
                raise ValueError(f"{path}: frames must be consecutive from 0")
            rows.append([float(v) for v in row[1:]])
    table = ScoreTable(roster, np.array(rows).reshape(len(rows), len(roster)))
    if theta_path:
        with open(theta_path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if row and row[0] != "speaker_id":
                    table.theta_min[row[0].strip()] = float(row[1])
    if utterance_path:
        table.utterance_scores.update(read_utterance_scores(utterance_path))
    return table


def read_utterance_scores(path: str) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "signal_name":
                continue
            out[(row[0].strip(), row[1].strip())] = float(row[2])
    return out


def write_score_table(table: ScoreTable, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", *table.roster])
        for n, row in enumerate(table.frame_scores):
            w.writerow([n, *(repr(float(v)) for v in row)])


def theta_from_validation(table: ScoreTable) -> dict:
    """Per-speaker median score of an enrollment-validation table."""
    return {spk: float(np.median(table.frame_scores[:, i])) for i, spk in enumerate(table.roster)}


def _stem_energy(stem: np.ndarray, spec: FrameSpec) -> np.ndarray:
    s = np.asarray(stem, dtype=float)
    ch = s[:, 0] if s.ndim == 2 else s
    return frame_energy(analyze(ch, spec).data[:, :, 0])


def dominance_ratio(roles: SourceRoles, spec: FrameSpec) -> np.ndarray:
    """Per-frame SOI energy over the summed energy of every other stem."""
    if roles is None or roles.soi is None or not roles.others():
        raise ValueError("oracle pilot requires reference stems")
    s = _stem_energy(roles.soi, spec)
    z = sum(_stem_energy(o, spec) for o in roles.others())
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(z > 0, s / np.where(z > 0, z, 1.0), np.where(s > 0, np.inf, 0.0))
    return ratio


def oracle_mask(roles: SourceRoles, spec: FrameSpec, thro: float = 2.0) -> np.ndarray:
    """Frames where the SOI energy exceeds ``thro`` times all other energy."""
    if thro <= 0:
        raise ValueError("thro must be positive")
    if roles is None or roles.soi is None or not roles.others():
        raise ValueError("oracle pilot requires reference stems")
    s = _stem_energy(roles.soi, spec)
    z = sum(_stem_energy(o, spec) for o in roles.others())
    return s > thro * z


def score_mask(table: ScoreTable, soi_id) -> np.ndarray:
    """Frames where the SOI outscores every other enrolled speaker and its floor."""
    if soi_id not in table.roster:
        raise ValueError(f"SOI not in enrollment set: {soi_id!r}")
    i = table.roster.index(soi_id)
    scores = table.frame_scores
    soi = scores[:, i]
    others = np.delete(scores, i, axis=1)
    best_other = others.max(axis=1) if others.shape[1] else np.full(soi.shape, -np.inf)
    return (soi > best_other) & (soi > table.threshold(soi_id))


def build_pilot(x, mask, provenance: str = "oracle") -> PilotTrack:
    """First-channel frame energy on masked frames, zero elsewhere."""
    X = np.asarray(getattr(x, "data", x))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (X.shape[1],):
        raise ValueError(f"mask must have one entry per frame ({X.shape[1]})")
    energy = frame_energy(X[:, :, 0])
    if not mask.any():
        provenance = "zero"
    return PilotTrack(np.where(mask, energy, 0.0), mask, provenance)


def corrupt_mask(
    mask,
    swap_fraction: float,
    interferer_mask,
    soi_ratio=None,
    interferer_ratio=None,
    seed: int = 0,
) -> np.ndarray:
    """Swap a fraction of SOI-dominant frames for interferer-dominant ones.

    ``round(swap_fraction * n_soi)`` SOI frames are removed from the mask and
    as many interferer frames (or all of them, if fewer) are added.  With
    dominance ratios given, the least dominant frames of each kind go first;
    ties and missing ratios are ordered by a seeded permutation.
    """
    if not 0.0 <= swap_fraction <= 1.0:
        raise ValueError("swap_fraction must lie in [0, 1]")
    mask = np.asarray(mask, dtype=bool)
    imask = np.asarray(interferer_mask, dtype=bool) & ~mask
    rng = np.random.default_rng(seed)
    out = mask.copy()
    soi_idx = np.flatnonzero(mask)
    n_swap = int(round(swap_fraction * soi_idx.size))
    if n_swap == 0:
        return out

    def order(idx, ratio):
        perm = rng.permutation(idx.size)
        idx = idx[perm]
        if ratio is None:
            return idx
        key = np.asarray(ratio, dtype=float)[idx]
        return idx[np.argsort(key, kind="stable")]

    drop = order(soi_idx, soi_ratio)[:n_swap]
    add = order(np.flatnonzero(imask), interferer_ratio)[:n_swap]
    out[drop] = False
    out[add] = True
    return out
