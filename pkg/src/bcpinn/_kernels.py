"""Fused, compiled elementwise kernels for the tanh jet and its pullback.

These mirror ``autodiff._tanh_jet`` / ``autodiff._tanh_jet_vjp`` one point at
a time, avoiding the temporaries of the array formulation.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def tanh_jet(z, y_arr, order, has_dt):
    """Jet of tanh given the input jet ``z`` and ``y_arr = tanh(z[0])``."""
    c, n, w = z.shape
    out = np.empty_like(z)
    dt = order + 1
    for i in range(n):
        for k in range(w):
            y = y_arr[i, k]
            out[0, i, k] = y
            if c == 1:
                continue
            y2 = y * y
            t1 = 1.0 - y2
            if has_dt:
                out[dt, i, k] = t1 * z[dt, i, k]
            if order == 0:
                continue
            z1 = z[1, i, k]
            out[1, i, k] = t1 * z1
            if order == 1:
                continue
            t2 = -2.0 * y * t1
            z2 = z[2, i, k]
            out[2, i, k] = t2 * z1 * z1 + t1 * z2
            if order == 2:
                continue
            t3 = -2.0 + y2 * (8.0 - 6.0 * y2)
            z3 = z[3, i, k]
            out[3, i, k] = t3 * z1 * z1 * z1 + 3.0 * t2 * z1 * z2 + t1 * z3
            if order == 3:
                continue
            t4 = y * (16.0 + y2 * (-40.0 + 24.0 * y2))
            out[4, i, k] = (t4 * z1 * z1 * z1 * z1 + 6.0 * t3 * z1 * z1 * z2
                            + t2 * (3.0 * z2 * z2 + 4.0 * z1 * z3) + t1 * z[4, i, k])
    return out


@njit(cache=True)
def tanh_jet_vjp(g, z, y_arr, order, has_dt):
    c, n, w = g.shape
    gz = np.empty_like(g)
    dt = order + 1
    for i in range(n):
        for k in range(w):
            y = y_arr[i, k]
            y2 = y * y
            t1 = 1.0 - y2
            gy = g[0, i, k]
            if c == 1:
                gz[0, i, k] = gy * t1
                continue
            gt1 = 0.0
            for j in range(1, c):
                gt1 += g[j, i, k] * z[j, i, k]
            gy -= 2.0 * y * gt1
            if has_dt:
                gz[dt, i, k] = g[dt, i, k] * t1
            if order == 0:
                gz[0, i, k] = gy * t1
                continue
            z1 = z[1, i, k]
            g1 = g[1, i, k]
            if order == 1:
                gz[0, i, k] = gy * t1
                gz[1, i, k] = g1 * t1
                continue
            t2 = -2.0 * y * t1
            z2 = z[2, i, k]
            g2 = g[2, i, k]
            gt2 = g2 * z1 * z1
            acc1 = g1 * t1 + 2.0 * g2 * t2 * z1
            acc2 = g2 * t1
            if order >= 3:
                t3 = -2.0 + y2 * (8.0 - 6.0 * y2)
                z3 = z[3, i, k]
                g3 = g[3, i, k]
                gt2 += 3.0 * g3 * z1 * z2
                gt3 = g3 * z1 * z1 * z1
                acc1 += g3 * (3.0 * t3 * z1 * z1 + 3.0 * t2 * z2)
                acc2 += 3.0 * g3 * t2 * z1
                acc3 = g3 * t1
                if order >= 4:
                    t4 = y * (16.0 + y2 * (-40.0 + 24.0 * y2))
                    g4 = g[4, i, k]
                    gt2 += g4 * (3.0 * z2 * z2 + 4.0 * z1 * z3)
                    gt3 += 6.0 * g4 * z1 * z1 * z2
                    z1sq = z1 * z1
                    gy += g4 * z1sq * z1sq * (16.0 + y2 * (-120.0 + 120.0 * y2))
                    acc1 += g4 * (4.0 * t4 * z1sq * z1 + 12.0 * t3 * z1 * z2 + 4.0 * t2 * z3)
                    acc2 += g4 * (6.0 * t3 * z1sq + 6.0 * t2 * z2)
                    acc3 += 4.0 * g4 * t2 * z1
                    gz[4, i, k] = g4 * t1
                gy += gt3 * y * (16.0 - 24.0 * y2)
                gz[3, i, k] = acc3
            gy += gt2 * (6.0 * y2 - 2.0)
            gz[0, i, k] = gy * t1
            gz[1, i, k] = acc1
            gz[2, i, k] = acc2
    return gz
