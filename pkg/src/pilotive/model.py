"""State shared by the extraction engines, the pilot and the deflation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericalError(ValueError):
    """A numerical breakdown of the solver (singular or degenerate statistics)."""


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous split of ``n_frames`` frames into blocks of ``block_len``.

    The last block keeps its true (possibly shorter) length.
    """

    n_frames: int
    block_len: int

    def __post_init__(self):
        if self.n_frames < 1 or self.block_len < 1:
            raise ValueError("n_frames and block_len must be >= 1")

    @property
    def n_blocks(self) -> int:
        return -(-self.n_frames // self.block_len)

    @property
    def sizes(self) -> np.ndarray:
        s = np.full(self.n_blocks, self.block_len)
        s[-1] = self.n_frames - self.block_len * (self.n_blocks - 1)
        return s

    @property
    def frame_block(self) -> np.ndarray:
        """Block index of every frame (0-based)."""
        return np.arange(self.n_frames) // self.block_len

    def locate(self, frame: int) -> tuple[int, int]:
        """Map a 0-based frame to ``(block, index within block)``."""
        if not 0 <= frame < self.n_frames:
            raise IndexError(frame)
        return frame // self.block_len, frame % self.block_len

    def bounds(self, block: int) -> tuple[int, int]:
        start = block * self.block_len
        return start, min(start + self.block_len, self.n_frames)

    def slices(self):
        return [slice(*self.bounds(t)) for t in range(self.n_blocks)]


def partition(n_frames: int, block_len: int) -> BlockPartition:
    return BlockPartition(int(n_frames), int(block_len))


def _blocked(x: np.ndarray, part: BlockPartition) -> np.ndarray:
    """Zero-pad the frame axis to ``T * L_T`` and fold it to ``(K, T, L_T, d)``."""
    K, L, d = x.shape
    T, Lt = part.n_blocks, part.block_len
    if T * Lt != L:
        x = np.concatenate([x, np.zeros((K, T * Lt - L, d), dtype=x.dtype)], axis=1)
    return x.reshape(K, T, Lt, d)


def block_averages(x: np.ndarray, part: BlockPartition, weights: np.ndarray | None = None) -> np.ndarray:
    """Per-block weighted outer-product means.

    ``out[k, t] = mean_{l in block t} weights[l] * x[k, l] x[k, l]^H``.

    Parameters
    ----------
    x : ndarray, shape (K, L, d)
    part : BlockPartition
    weights : ndarray, shape (L,), optional
        Nonnegative per-frame weights; all ones when omitted.

    Returns
    -------
    ndarray, shape (K, T, d, d)
    """
    x = np.asarray(x)
    if x.shape[1] != part.n_frames:
        raise ValueError("frame count does not match partition")
    if weights is not None:
        x = x * np.sqrt(weights)[None, :, None]
    xb = _blocked(x, part)
    out = np.swapaxes(xb, 2, 3) @ xb.conj()
    return out / part.sizes[None, :, None, None]


def block_covariances(x: np.ndarray, part: BlockPartition) -> np.ndarray:
    """Sample covariance of every block, shape ``(K, T, d, d)``."""
    return block_averages(x, part)


@dataclass
class DemixingState:
    """Separating vectors and per-block statistics of one extraction.

    Attributes
    ----------
    w : ndarray (K, d)
        Separating vector per frequency, shared by all blocks.
    a : ndarray (K, T, d)
        Mixing vectors from the orthogonal constraint.
    C : ndarray (K, T, d, d)
        Block covariances of the mixture.
    V : ndarray (K, T, d, d)
        Weighted covariances of the last iteration.
    sigma : ndarray (K, T)
        SOI standard deviation per block.
    part : BlockPartition
    """

    w: np.ndarray
    a: np.ndarray
    C: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    part: BlockPartition

    def copy(self) -> "DemixingState":
        return DemixingState(
            self.w.copy(), self.a.copy(), self.C.copy(), self.V.copy(), self.sigma.copy(), self.part
        )

    def demix(self, x: np.ndarray) -> np.ndarray:
        """SOI estimate ``u[k, l] = w[k]^H x[k, l]``."""
        return np.einsum("kd,kld->kl", self.w.conj(), x)

    def frame_mixing(self) -> np.ndarray:
        """Mixing vector of the block owning each frame, shape ``(K, L, d)``."""
        return self.a[:, self.part.frame_block, :]


@dataclass
class ExtractionResult:
    """Output of one run of an extraction engine.

    ``u`` is the raw demixed SOI ``(K, L)``; ``image`` is ``u`` rescaled per
    block by the first component of the mixing vector, i.e. the estimated SOI
    image at the first microphone.
    """

    u: np.ndarray
    image: np.ndarray
    state: DemixingState
    iterations_run: int
    converged: bool
    delta_w: list = field(default_factory=list)
    trajectory: list | None = None


@dataclass
class SourceRoles:
    """Reference stems of a mixture, each ``(n_samples, d)`` time signals.

    ``soi`` is the image of the speaker of interest, ``background`` a list of
    images of the other speakers, ``noise`` an optional noise image.
    """

    soi: np.ndarray
    background: list
    noise: np.ndarray | None = None

    def others(self) -> list:
        rest = list(self.background)
        if self.noise is not None:
            rest.append(self.noise)
        return rest

    def check(self, n_samples: int | None = None):
        n = self.soi.shape[0] if n_samples is None else n_samples
        for s in [self.soi, *self.others()]:
            if s.shape[0] != n:
                raise ValueError("reference stems must share the mixture length")
