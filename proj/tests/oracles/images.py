"""Deterministic test images shared with the C++ tests (tests/unit/fixtures.hpp)."""

import numpy as np


def textured(h, w):
    """Smooth, natural-looking texture in [0.1, 0.95], rounded to float32."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    v = (0.5 + 0.2 * np.sin(0.37 * x + 0.11 * y) + 0.15 * np.cos(0.23 * y - 0.05 * x * x / 64.0)
         + 0.1 * ((x * 7 + y * 13) % 17) / 17.0 - 0.05)
    return v.astype(np.float32).astype(np.float64)


def lcg_noise(h, w, seed):
    """Uniform [0,1) values from a 64-bit LCG, 24-bit resolution (exact in float32)."""
    s = seed & 0xFFFFFFFFFFFFFFFF
    out = np.empty(h * w)
    for i in range(h * w):
        s = (s * 6364136223846793005 + 1442695040888963407) & 0xFFFFFFFFFFFFFFFF
        out[i] = (s >> 40) / float(1 << 24)
    return out.reshape(h, w)


def two_edge_scene():
    """8x8 triple: vertical edge in vis, horizontal edge in ir, fused is their mean."""
    vis = np.full((8, 8), 0.2)
    vis[:, 4:] = 0.8
    ir = np.full((8, 8), 0.1)
    ir[3:, :] = 0.9
    vis = vis.astype(np.float32).astype(np.float64)
    ir = ir.astype(np.float32).astype(np.float64)
    fused = (0.5 * (vis + ir)).astype(np.float32).astype(np.float64)
    return vis, ir, fused
