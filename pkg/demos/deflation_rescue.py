"""Recover the wanted speaker after the pilot pointed at the wrong one.

With a three-microphone mixture and a pilot that is entirely wrong the
first run extracts the interferer.  The assessment step notices this,
the extracted source is subtracted from the mixture, and the next run on
the reduced mixture gets another chance.

    python demos/deflation_rescue.py
"""
from pilotive import assess, deflation, ive, metrics, pilot, simkit, sweeps
from pilotive.stft import FrameSpec, analyze

frames = FrameSpec(1024, 200, "hamming")
sc = simkit.Scenario(n_channels=3, n_speakers=2, noise=False, mixing="block_varying", duration=5, seed=11)
m = simkit.simulate(sc)
X = analyze(m.signal, frames)
n = m.signal.shape[0]

om, im, rs, ri = sweeps.masks(m, frames, 0, 2.0)
bad = pilot.corrupt_mask(om, 1.0, im, rs, ri, seed=sc.seed)
solver = ive.SolverConfig(mode="csv", block_len=100)
refs = sweeps.mic1_references(m, 0)

plain = sweeps.to_time(ive.run(X, ive.SolverConfig(mode="csv", block_len=100, pilot=pilot.build_pilot(X, bad))).image, X, n)
rep = metrics.evaluate(plain, refs, m.signal[:, 0])
print(f"single run: iSDR {rep.isdr_db:.1f} dB -> {assess.categorize(rep.isdr_db)}")

backend = assess.AssessmentBackend.oracle(m.stems[0][:, 0], sc.sample_rate)
cfg = deflation.DeflationConfig(max_steps=2, solver=solver, assessment=backend)
out = deflation.extract_with_deflation(X, 0, cfg, bad, n_samples=n)
print("audit trail:")
print(out.audit_lines().rstrip())
rep = metrics.evaluate(out.signal, refs, m.signal[:, 0])
print(f"with deflation: returned the {out.origin}, iSDR {rep.isdr_db:.1f} dB -> {assess.categorize(rep.isdr_db)}")
