"""Non-intrusive extraction assessment and outcome categories.

An assessment compares two candidate signals and keeps the one that scores
higher for the SOI.  Two score backends exist:

* ``utterance_score_table`` looks scores up by signal name, as produced by an
  external speaker-verification system;
* ``oracle_reference`` scores a signal by the log of its maximal normalized
  cross-correlation with a clean SOI reference over a short lag range.

Ties keep the second candidate, the incumbent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pilot import ScoreTable

BACKENDS = ("utterance_score_table", "oracle_reference")
CATEGORIES = ("unwanted_source", "no_source", "soi_extracted")


@dataclass
class Candidate:
    """A signal under assessment: a name for table lookups, samples for the oracle."""

    name: str | None = None
    samples: np.ndarray | None = None


def _as_candidate(c) -> Candidate:
    if isinstance(c, Candidate):
        return c
    if isinstance(c, str):
        return Candidate(name=c)
    return Candidate(samples=np.asarray(c, dtype=float))


def max_normalized_xcorr(y, reference, max_lag: int) -> float:
    """``max_|tau|<=max_lag |sum_n y[n] s[n + tau]| / (||y|| ||s||)``."""
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(reference, dtype=float).ravel()
    ny, ns = np.linalg.norm(y), np.linalg.norm(s)
    if ny == 0 or ns == 0:
        return 0.0
    n = y.size + s.size
    nfft = 1 << int(np.ceil(np.log2(n)))
    c = np.fft.irfft(np.conj(np.fft.rfft(y, nfft)) * np.fft.rfft(s, nfft), nfft)
    lags = np.r_[c[: max_lag + 1], c[nfft - max_lag :]] if max_lag > 0 else c[:1]
    return float(np.max(np.abs(lags)) / (ny * ns))


@dataclass
class AssessmentBackend:
    """Source of the scores ``M(soi, signal)``.

    Attributes
    ----------
    kind : {"utterance_score_table", "oracle_reference"}
    table : ScoreTable, optional
        Utterance scores keyed by ``(signal_name, speaker_id)``.
    reference : ndarray, optional
        Clean SOI signal for the oracle backend.
    sample_rate : float
    max_lag_s : float
        Lag range searched by the oracle, in seconds.
    """

    kind: str
    table: ScoreTable | None = None
    reference: np.ndarray | None = None
    sample_rate: float = 16000.0
    max_lag_s: float = 0.01

    def __post_init__(self):
        if self.kind not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.kind == "utterance_score_table" and self.table is None:
            raise ValueError("score-table backend needs a table")
        if self.kind == "oracle_reference":
            if self.reference is None:
                raise ValueError("oracle backend needs the SOI reference")
            self.reference = np.asarray(self.reference, dtype=float).ravel()

    @classmethod
    def oracle(cls, reference, sample_rate: float = 16000.0) -> "AssessmentBackend":
        return cls("oracle_reference", reference=reference, sample_rate=sample_rate)

    @classmethod
    def from_table(cls, table: ScoreTable) -> "AssessmentBackend":
        return cls("utterance_score_table", table=table)

    def score(self, candidate, soi_id) -> float:
        c = _as_candidate(candidate)
        if self.kind == "utterance_score_table":
            if c.name is None:
                raise KeyError("unscored signal: candidate has no name")
            return self.table.utterance_score(c.name, soi_id)
        if c.samples is None:
            raise ValueError("oracle backend needs candidate samples")
        ref = self.reference
        y = np.asarray(c.samples, dtype=float).ravel()
        if y.size < ref.size:
            y = np.concatenate([y, np.zeros(ref.size - y.size)])
        y = y[: ref.size]
        lag = int(round(self.max_lag_s * self.sample_rate))
        rho = max_normalized_xcorr(y, ref, lag)
        return float(np.log(rho)) if rho > 0 else -np.inf


def compare(candidate_a, candidate_b, soi_id, backend: AssessmentBackend) -> tuple[str, float, float]:
    """Choice and both scores; ``"a"`` only on a strictly higher score."""
    a = _as_candidate(candidate_a)
    b = _as_candidate(candidate_b)
    if a.samples is not None and b.samples is not None and a.samples.shape != b.samples.shape:
        raise ValueError("candidates must have the same length")
    sa = backend.score(a, soi_id)
    sb = backend.score(b, soi_id)
    return ("a" if sa > sb else "b"), sa, sb


def assess(candidate_a, candidate_b, soi_id, backend: AssessmentBackend) -> str:
    """Return ``"a"`` if ``candidate_a`` is the better SOI estimate, else ``"b"``."""
    return compare(candidate_a, candidate_b, soi_id, backend)[0]


def categorize(isdr_db: float) -> str:
    """Outcome class of an extraction from its SDR improvement.

    Below -2 dB an unwanted source was extracted, above +2 dB the SOI; the
    closed interval [-2, 2] counts as no source extracted.
    """
    if not np.isfinite(isdr_db):
        raise ValueError("iSDR must be finite")
    if isdr_db < -2.0:
        return "unwanted_source"
    if isdr_db > 2.0:
        return "soi_extracted"
    return "no_source"
