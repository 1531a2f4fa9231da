import json

import numpy as np
import pytest

from pilotive import assess, deflation, ive, metrics, pilot, simkit, sweeps
from pilotive.model import DemixingState, partition
from pilotive.pilot import ScoreTable
from pilotive.stft import FrameSpec, Spectrogram, analyze

from conftest import crandn


def _state(w, a, L, block_len=None):
    K, d = w.shape
    part = partition(L, block_len or L)
    T = part.n_blocks
    z = np.zeros((K, T, d, d), complex)
    return DemixingState(w, a.reshape(K, T, d), z, z, np.ones((K, T)), part)


def test_hand_example():
    x = np.array([1.0, 1.0], complex).reshape(1, 1, 2)
    st = _state(np.array([[1.0, 0.0]], complex), np.array([[1.0, 0.5]], complex), 1)
    res = deflation.residual(x, st)
    np.testing.assert_allclose(res[0, 0], [0.0, 0.5])
    assert np.vdot(st.w[0], res[0, 0]) == 0
    reduced, D = deflation.subtract(x, st, "drop_channel", channel=0)
    np.testing.assert_allclose(reduced[0, 0], [0.5])
    # the default picks the channel the separating vector leans on
    reduced_auto, _ = deflation.subtract(x, st)
    np.testing.assert_allclose(reduced_auto[0, 0], [0.5])


def test_rank_one_mixture_deflates_to_zero(rng):
    K, L, d = 5, 40, 3
    a = crandn(rng, K, d)
    s = crandn(rng, K, L)
    x = a[:, None, :] * s[:, :, None]
    w = crandn(rng, K, d)
    w /= np.einsum("kd,kd->k", w.conj(), a).conj()[:, None]
    res = deflation.residual(x, _state(w, a, L))
    assert np.max(np.abs(res)) < 1e-12 * np.max(np.abs(x))


def test_orthogonality_random(rng):
    K, L, d = 4, 30, 3
    x = crandn(rng, K, L, d)
    w = crandn(rng, K, d)
    a = crandn(rng, K, 3, d)
    a /= np.einsum("kd,ktd->kt", w.conj(), a)[:, :, None]
    st = _state(w, a, L, 10)
    res = deflation.residual(x, st)
    proj = np.abs(np.einsum("kd,kld->kl", w.conj(), res))
    assert np.all(proj <= 1e-10 * np.linalg.norm(x, axis=2))


def test_invalid_reduction(rng):
    x = crandn(rng, 2, 4, 3)
    w = crandn(rng, 2, 3)
    st = _state(w, crandn(rng, 2, 3), 4)
    with pytest.raises(ValueError, match="invalid reduction matrix"):
        deflation.subtract(x, st, np.zeros((2, 3)))
    with pytest.raises(ValueError, match="invalid reduction matrix"):
        deflation.subtract(x, st, np.eye(3))
    with pytest.raises(ValueError):
        deflation.subtract(x, st, "random")


def test_pca_reduction(rng):
    x = crandn(rng, 3, 50, 3)
    st = _state(crandn(rng, 3, 3), crandn(rng, 3, 3), 50)
    reduced, D = deflation.subtract(x, st, "pca")
    assert reduced.shape == (3, 50, 2)
    np.testing.assert_allclose(D @ D.conj().swapaxes(1, 2), np.broadcast_to(np.eye(2), (3, 2, 2)), atol=1e-12)


def test_subtract_keeps_spectrogram_type(rng):
    spec = FrameSpec(8, 4, "hann")
    S = Spectrogram(crandn(rng, 5, 6, 2), 16000.0, spec)
    st = _state(crandn(rng, 5, 2), crandn(rng, 5, 2), 6)
    out, _ = deflation.subtract(S, st)
    assert isinstance(out, Spectrogram) and out.n_channels == 1
    with pytest.raises(ValueError):
        deflation.subtract(S.with_data(S.data[:, :, :1]), _state(crandn(rng, 5, 1), crandn(rng, 5, 1), 6))


def test_leading_channel():
    w = np.array([[0.1, 1.0, 0.2], [0.0, 3.0, 1.0]])
    assert deflation.leading_channel(w) == 1
    np.testing.assert_array_equal(deflation.drop_channel_matrix(3, 1), [[1, 0, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        deflation.drop_channel_matrix(3, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        deflation.DeflationConfig(max_steps=0)
    with pytest.raises(ValueError):
        deflation.DeflationConfig(reduction="svd")


@pytest.fixture(scope="module")
def two_speaker(frames):
    sc = simkit.Scenario(n_channels=3, n_speakers=2, noise=False, duration=4, mixing="instantaneous", seed=5)
    m = simkit.simulate(sc)
    X = analyze(m.signal, frames)
    return m, X


def test_first_pass_wins_returns_estimate(frames):
    sc = simkit.Scenario(n_channels=2, n_speakers=1, noise=True, snr_db=0, duration=4, seed=2)
    m = simkit.simulate(sc)
    X = analyze(m.signal, frames)
    n = m.signal.shape[0]
    mask = pilot.oracle_mask(m.roles(0), frames, 2.0)
    cfg = deflation.DeflationConfig(max_steps=1, assessment=assess.AssessmentBackend.oracle(m.stems[0][:, 0]))
    res = deflation.extract_with_deflation(X, "soi", cfg, mask, n_samples=n)
    assert res.origin == "estimate" and res.step == 0 and res.solver_runs == 1
    assert [r.decision for r in res.audit] == ["return_estimate"]


def test_conservative_exit(two_speaker):
    m, X = two_speaker
    n = m.signal.shape[0]
    names = [deflation.candidate_name("", 0, "estimate"), deflation.candidate_name("", 0, "mixture"),
             deflation.candidate_name("", 1, "mixture")]
    table = ScoreTable(["S"], utterance_scores={(names[0], "S"): 0.0, (names[1], "S"): 1.0, (names[2], "S"): 0.5})
    cfg = deflation.DeflationConfig(max_steps=1, assessment=assess.AssessmentBackend.from_table(table))
    res = deflation.extract_with_deflation(X, "S", cfg, np.zeros(X.n_frames, bool), n_samples=n)
    assert res.origin == "mixture"
    np.testing.assert_allclose(res.estimate.data[:, :, 0], X.data[:, :, 0])
    assert [r.decision for r in res.audit] == ["deflate", "return_mixture"]


def test_corrupted_pilot_rescued(two_speaker, frames):
    m, X = two_speaker
    n = m.signal.shape[0]
    om = pilot.oracle_mask(m.roles(0), frames, 2.0)
    im = pilot.oracle_mask(m.roles(1), frames, 2.0)
    bad = pilot.corrupt_mask(om, 1.0, im, seed=0)
    cfg = deflation.DeflationConfig(
        max_steps=2, solver=ive.SolverConfig(block_len=100), assessment=assess.AssessmentBackend.oracle(m.stems[0][:, 0])
    )
    res = deflation.extract_with_deflation(X, "soi", cfg, bad, n_samples=n)
    # pass 0 picks the interferer, removing it leaves an SOI-only subspace
    assert [r.decision for r in res.audit][:2] == ["deflate", "continue"]
    rep = metrics.evaluate(res.signal, sweeps.mic1_references(m), m.signal[:, 0])
    assert assess.categorize(rep.isdr_db) == "soi_extracted"
    assert deflation.replay(res.audit_lines().splitlines()) == [r.decision for r in res.audit]
    for line in res.audit_lines().splitlines():
        json.loads(line)


def test_max_steps_bound(two_speaker):
    m, X = two_speaker
    cfg = deflation.DeflationConfig(max_steps=3, assessment=assess.AssessmentBackend.oracle(m.stems[0][:, 0]))
    with pytest.raises(ValueError, match="max_steps"):
        deflation.extract_with_deflation(X, "soi", cfg, np.zeros(X.n_frames, bool))
    with pytest.raises(ValueError, match="assessment"):
        deflation.extract_with_deflation(X, "soi", deflation.DeflationConfig(max_steps=1), np.zeros(X.n_frames, bool))


def test_audit_record_round_trip():
    r = deflation.AuditRecord(1, "reduced", 2, 0.5, -0.25, "continue", 0)
    assert deflation.AuditRecord.from_json(r.to_json()) == r
    assert deflation.replay([r, deflation.AuditRecord(0, "estimate", 3, 1.0, 1.0, "deflate")]) == ["continue", "deflate"]
