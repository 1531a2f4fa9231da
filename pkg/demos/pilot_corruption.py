"""How much pilot error can the extraction tolerate?

Dominant frames of the wanted speaker are swapped for frames where the
interferer dominates.  A small fraction of bad frames barely matters,
while a fully swapped pilot turns the solver to the interferer.

    python demos/pilot_corruption.py
"""
import numpy as np

from pilotive import ive, simkit, sweeps
from pilotive.stft import FrameSpec

frames = FrameSpec(1024, 200, "hamming")
solver = ive.SolverConfig(mode="csv", block_len=100)
levels = (0.0, 0.2, 0.5, 0.8, 1.0)
seeds = range(5)

sdr = {f: [] for f in levels}
for seed in seeds:
    sc = simkit.Scenario(n_channels=2, n_speakers=2, noise=False, mixing="block_varying", duration=5, seed=seed)
    for f in levels:
        sdr[f].append(sweeps.corruption_cell(sc, f, solver, frames)["sdr_db"])

print("corrupted fraction   median SDR")
for f in levels:
    print(f"{f:>18.1f}   {np.median(sdr[f]):6.1f} dB")
