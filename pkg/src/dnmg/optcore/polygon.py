"""Polygonal outer approximation of a disk constraint."""

import math


def polygonize_magnitude(p_var, q_var, s_max, K=12):
    """Half-planes ``p cos(2 pi k/K) + q sin(2 pi k/K) <= s_max``.

    Returns ``K`` pairs ``(coeffs, rhs)``. The polygon circumscribes the
    disk of radius ``s_max``, so it accepts points up to ``s_max / cos(pi/K)``.
    """
    if K < 4 or K % 2:
        raise ValueError("K must be an even integer >= 4")
    rows = []
    for k in range(K):
        ang = 2.0 * math.pi * k / K
        c, s = math.cos(ang), math.sin(ang)
        # exact zeros keep K=4 rows clean
        c = 0.0 if abs(c) < 1e-15 else c
        s = 0.0 if abs(s) < 1e-15 else s
        coeffs = {}
        if c:
            coeffs[p_var] = c
        if s:
            coeffs[q_var] = coeffs.get(q_var, 0.0) + s
        rows.append((coeffs, float(s_max)))
    return rows


def polygon_radius(s_max, K=12):
    return s_max / math.cos(math.pi / K)
