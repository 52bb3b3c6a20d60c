# src/ppisp/isp/precondition.py
"""ZCA preconditioning of the chromaticity offsets.

Each control point k in (R, G, B, W) gets a symmetric 2x2 block P_k so
that Δc_k = P_k @ theta_k. The blocks whiten a proxy Jacobian of the
color correction measured on a fixed reference palette at identity, so
every control point moves the output by a comparable amount per unit of
theta.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ppisp.errors import ShapeMismatchError
from ppisp.isp.color import apply_color_correction, build_homography

logger = logging.getLogger(__name__)

FD_STEP = 1e-4
GRAM_RIDGE = 1e-8


def reference_palette() -> np.ndarray:
    """24 colors: the 8 RGB-cube corners, 12 edge midpoints and 4 grays."""
    corners = [np.array(c, dtype=np.float64) for c in itertools.product((0.0, 1.0), repeat=3)]
    midpoints = []
    for a, b in itertools.combinations(corners, 2):
        # Cube edges join corners differing in exactly one coordinate.
        if np.sum(a != b) == 1:
            midpoints.append((a + b) / 2.0)
    grays = [np.full(3, g) for g in (0.2, 0.4, 0.6, 0.8)]
    return np.stack(corners + midpoints + grays)


@dataclass(frozen=True, eq=False)
class PreconditionBlocks:
    """Four symmetric positive-definite 2x2 blocks, order R, G, B, W."""

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=np.float64, copy=True)
        if blocks.shape != (4, 2, 2):
            raise ShapeMismatchError(f"expected 4 x 2 x 2 blocks, got {blocks.shape}")
        if not np.allclose(blocks, blocks.transpose(0, 2, 1), atol=1e-10, rtol=0.0):
            raise ValueError("preconditioning blocks must be symmetric")
        if np.any(np.linalg.eigvalsh(blocks) <= 0):
            raise ValueError("preconditioning blocks must be positive definite")
        blocks.setflags(write=False)
        object.__setattr__(self, 'blocks', blocks)

    def materialize(self, theta) -> np.ndarray:
        """Δc_k = P_k theta_k."""
        return np.einsum('kij,kj->ki', self.blocks, np.asarray(theta, dtype=np.float64))

    def to_theta(self, offsets) -> np.ndarray:
        """Inverse of materialize."""
        offsets = np.asarray(offsets, dtype=np.float64)
        return np.stack([np.linalg.solve(P, c) for P, c in zip(self.blocks, offsets)])

    def pullback(self, grad_offsets) -> np.ndarray:
        """Map a gradient w.r.t. Δc to one w.r.t. theta: P_k^T g_k."""
        return np.einsum('kji,kj->ki', self.blocks, np.asarray(grad_offsets, dtype=np.float64))

    @classmethod
    def identity(cls) -> 'PreconditionBlocks':
        return cls(np.tile(np.eye(2), (4, 1, 1)))


def proxy_gram(step: float = FD_STEP) -> np.ndarray:
    """
    Palette-averaged Gram matrices of the color-correction Jacobian.

    Returns:
        4 x 2 x 2 array, mean over palette colors p of J_kp^T J_kp where
        J_kp is the 3x2 central-difference Jacobian of color p's output
        w.r.t. Δc_k at identity.
    """
    palette = reference_palette()[None, :, :]
    grams = np.zeros((4, 2, 2))
    for k in range(4):
        jac = np.zeros((palette.shape[1], 3, 2))
        for d in range(2):
            delta = np.zeros((4, 2))
            delta[k, d] = step
            plus = apply_color_correction(palette, build_homography(delta))[0]
            minus = apply_color_correction(palette, build_homography(-delta))[0]
            jac[:, :, d] = (plus - minus) / (2.0 * step)
        grams[k] = np.einsum('pcd,pce->de', jac, jac) / jac.shape[0]
    return grams


def compute_precondition_blocks(step: float = FD_STEP) -> PreconditionBlocks:
    """
    Whitening blocks P_k = (G_k + ridge I)^(-1/2), rescaled together so the
    white-point block has unit mean eigenvalue.
    """
    grams = proxy_gram(step)
    blocks = np.zeros((4, 2, 2))
    for k in range(4):
        w, v = np.linalg.eigh(grams[k] + GRAM_RIDGE * np.eye(2))
        P = (v * (1.0 / np.sqrt(w))) @ v.T
        blocks[k] = 0.5 * (P + P.T)
    blocks *= 2.0 / np.trace(blocks[3])
    logger.debug(f"Preconditioning block traces: {np.trace(blocks, axis1=1, axis2=2)}")
    return PreconditionBlocks(blocks)


@lru_cache(maxsize=1)
def default_blocks() -> PreconditionBlocks:
    """Blocks used whenever a caller does not supply its own."""
    return compute_precondition_blocks()
