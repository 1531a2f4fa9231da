"""Piloted constant-separating-vector extraction of a speaker of interest.

Modules
-------
stft       analysis and weighted overlap-add synthesis
model      block partitions and solver state
ive        CSV, fully static and block-wise static extraction engines
pilot      dominance masks and pilot tracks
assess     non-intrusive assessment and outcome categories
deflation  extract-assess-subtract loop
simkit     synthetic mixtures with known stems
metrics    projection-based SIR/SDR and attenuation dispersion
sweeps     seeded experiment cells and sweep runner
cli        command line entry point
"""
from .model import BlockPartition, DemixingState, ExtractionResult, NumericalError, SourceRoles, partition
from .stft import FrameSpec, Spectrogram, analyze, synthesize

__all__ = [
    "BlockPartition",
    "DemixingState",
    "ExtractionResult",
    "FrameSpec",
    "NumericalError",
    "SourceRoles",
    "Spectrogram",
    "analyze",
    "partition",
    "synthesize",
]
