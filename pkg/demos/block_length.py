"""Block length trade-off for a moving speaker.

Short blocks adapt fast but are noisy, long blocks average over movement.
The table shows iSIR and the spread of the frame-wise attenuation of the
wanted speaker for a few block lengths (in frames).

    python demos/block_length.py
"""
import numpy as np

from pilotive import ive, simkit, sweeps
from pilotive.stft import FrameSpec

frames = FrameSpec(1024, 200, "hamming")
solver = ive.SolverConfig(mode="csv")
lengths = (50, 100, 200, 400, 800)

rows = {b: [] for b in lengths}
for seed in range(4):
    sc = simkit.Scenario(n_channels=2, n_speakers=2, noise=False, mixing="block_varying", duration=10.1, seed=seed)
    for b in lengths:
        rows[b].append(sweeps.block_length_cell(sc, b, solver, frames))

print("block   iSIR dB   attenuation std")
for b in lengths:
    isir = np.median([r["isir_db"] for r in rows[b]])
    att = np.median([r["attenuation_std"] for r in rows[b]])
    print(f"{b:>5}   {isir:7.1f}   {att:15.2f}")
