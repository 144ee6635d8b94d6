"""Slow, obviously-correct reference implementations used to check the fast code."""

import math

import numpy as np


def levenshtein(a, b):
    """Full-table dynamic programme."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def haversine_east_north(lat0, lon0, lat, lon, radius=6_371_000.0):
    """Signed great-circle distances along the meridian and parallel through the origin."""
    y = radius * math.radians(lat - lat0)
    x = radius * math.cos(math.radians(lat0)) * math.radians(lon - lon0)
    return x, y


def binary_map_bruteforce(points, centers, radius_xy, radius_z):
    """Loop over every cell and point: 1 where any point lies within the scaled unit ball."""
    shape = tuple(len(c) for c in centers)
    out = np.zeros(shape)
    scale = (radius_xy, radius_xy, radius_z)
    for idx in np.ndindex(*shape):
        cell = [centers[a][i] for a, i in enumerate(idx)]
        for p in points:
            d2 = sum(((cell[a] - p[a]) / scale[a]) ** 2 for a in range(len(shape)))
            if d2 <= 1.0:
                out[idx] = 1.0
                break
    return out


def numeric_grad(f, x, h=1e-6):
    """Plain central differences over a flat array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g
