"""Reference values for the metric tests.

Written from the published definitions, deliberately without sharing code with
the library: VIF follows the vectorised MATLAB vifp_mscale formulation, Q^AB/F
is evaluated pixel by pixel, and EN/MI/SF use dictionaries and plain loops.
Run:  python3 tests/oracles/metrics_oracle.py
"""

import math
from collections import Counter

import numpy as np
from scipy.signal import correlate2d

from images import lcg_noise, textured, two_edge_scene


def fspecial_gaussian(n, sigma):
    c = (n - 1) / 2.0
    y, x = np.mgrid[0:n, 0:n] - c
    g = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return g / g.sum()


def vifp(ref, dist):
    ref = ref * 255.0
    dist = dist * 255.0
    sigma_nsq = 2.0
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = fspecial_gaussian(n, n / 5.0)
        if scale > 1:
            ref = correlate2d(ref, win, mode="valid")[::2, ::2]
            dist = correlate2d(dist, win, mode="valid")[::2, ::2]
        mu1 = correlate2d(ref, win, mode="valid")
        mu2 = correlate2d(dist, win, mode="valid")
        s1 = correlate2d(ref * ref, win, mode="valid") - mu1 * mu1
        s2 = correlate2d(dist * dist, win, mode="valid") - mu2 * mu2
        s12 = correlate2d(ref * dist, win, mode="valid") - mu1 * mu2
        s1[s1 < 0] = 0
        s2[s2 < 0] = 0
        g = s12 / (s1 + 1e-10)
        sv = s2 - g * s12
        m = s1 < 1e-10
        g[m] = 0
        sv[m] = s2[m]
        s1[m] = 0
        m = s2 < 1e-10
        g[m] = 0
        sv[m] = 0
        m = g < 0
        sv[m] = s2[m]
        g[m] = 0
        sv[sv <= 1e-10] = 1e-10
        num += np.sum(np.log10(1 + g * g * s1 / (sv + sigma_nsq)))
        den += np.sum(np.log10(1 + s1 / sigma_nsq))
    return num / den


def reflect(i, n):
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def sobel_at(img, y, x):
    h, w = img.shape
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    gx = gy = 0.0
    for i in range(3):
        for j in range(3):
            v = img[reflect(y + i - 1, h), reflect(x + j - 1, w)]
            gx += kx[i][j] * v
            gy += kx[j][i] * v
    return gx, gy


def qabf(a, b, f):
    h, w = f.shape
    num = den = 0.0
    for y in range(h):
        for x in range(w):
            def edge(img):
                gx, gy = sobel_at(img, y, x)
                strength = math.sqrt(gx * gx + gy * gy)
                angle = math.pi / 2 if gx == 0 else math.atan(gy / gx)
                return strength, angle

            gf, af = edge(f)
            for src in (a, b):
                gs, as_ = edge(src)
                if gs > gf:
                    grel = gf / gs
                elif gs == gf:
                    grel = 1.0
                else:
                    grel = gs / gf
                arel = abs(abs(as_ - af) - math.pi / 2) / (math.pi / 2)
                qg = 0.9994 / (1 + math.exp(-15 * (grel - 0.5)))
                qa = 0.9879 / (1 + math.exp(-22 * (arel - 0.8)))
                num += qg * qa * gs
                den += gs
    return num / den


def bin256(v):
    return min(255, max(0, int(math.floor(v * 256))))


def entropy(img):
    c = Counter(bin256(v) for v in img.flat)
    n = img.size
    return -sum(k / n * math.log2(k / n) for k in c.values())


def mutual_information(a, b):
    n = a.size
    ja = Counter(bin256(v) for v in a.flat)
    jb = Counter(bin256(v) for v in b.flat)
    jab = Counter((bin256(u), bin256(v)) for u, v in zip(a.flat, b.flat))
    return sum(k / n * math.log2((k / n) / ((ja[p] / n) * (jb[q] / n))) for (p, q), k in jab.items())


def spatial_frequency(img):
    h, w = img.shape
    rf = sum((img[y][x] - img[y][x - 1]) ** 2 for y in range(h) for x in range(1, w)) / (h * (w - 1))
    cf = sum((img[y][x] - img[y - 1][x]) ** 2 for y in range(1, h) for x in range(w)) / ((h - 1) * w)
    return math.sqrt(rf + cf)


SMALL_A = np.array([[0.00, 0.10, 0.20, 0.30],
                    [0.40, 0.50, 0.60, 0.70],
                    [0.80, 0.90, 1.00, 0.10],
                    [0.25, 0.50, 0.75, 0.00]], dtype=np.float32).astype(np.float64)
SMALL_B = np.array([[0.00, 0.00, 0.50, 0.50],
                    [0.00, 0.50, 0.50, 1.00],
                    [0.25, 0.25, 0.75, 0.75],
                    [1.00, 1.00, 0.00, 0.00]], dtype=np.float32).astype(np.float64)


def main():
    a = textured(64, 64)
    half = (0.5 * a).astype(np.float32).astype(np.float64)
    noise = lcg_noise(64, 64, 7)
    print(f"vif_identity        {vifp(a, a):.15g}")
    print(f"vif_half            {vifp(a, half):.15g}")
    print(f"vif_noise           {vifp(a, noise):.15g}")
    vis, ir, fused = two_edge_scene()
    print(f"qabf_two_edge       {qabf(vis, ir, fused):.15g}")
    print(f"qabf_identity_tex   {qabf(a[:16, :16], a[:16, :16], a[:16, :16]):.15g}")
    print(f"entropy_small_a     {entropy(SMALL_A):.15g}")
    print(f"entropy_small_b     {entropy(SMALL_B):.15g}")
    print(f"mi_small_ab         {mutual_information(SMALL_A, SMALL_B):.15g}")
    print(f"sf_small_a          {spatial_frequency(SMALL_A):.15g}")
    print(f"sf_small_b          {spatial_frequency(SMALL_B):.15g}")


if __name__ == "__main__":
    main()
