"""Adaptive Dormand-Prince 5(4) integrator for array-valued linear ODEs.

Works on any ndarray state (complex matrices included).  The error norm is
global: ``||err||_F / (atol + rtol * ||y||_F)``, so ``rtol`` is a tolerance
relative to the size of the whole state rather than to each entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import blas

log = logging.getLogger(__name__)

# Butcher tableau
C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# fifth-order weights minus embedded fourth-order weights
E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


@dataclass
class IntegrationStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    h_min: float = np.inf
    h_max: float = 0.0


def _axpy_for(y):
    if y.dtype == np.complex128 and y.flags.c_contiguous:
        return blas.zaxpy
    if y.dtype == np.float64 and y.flags.c_contiguous:
        return blas.daxpy
    return None


def _combine(y, h, coeffs, ks):
    """y + h * sum_j coeffs[j] * ks[j], accumulated in place."""
    out = y.copy()
    axpy = _axpy_for(out)
    flat = out.reshape(-1)
    for a, k in zip(coeffs, ks):
        if a != 0.0:
            if axpy is not None and k.flags.c_contiguous and k.dtype == out.dtype:
                axpy(k.reshape(-1), flat, a=h * a)
            else:
                out += (h * a) * k
    return out


def _initial_step(f, y, f0, t_span, rtol, atol):
    # Hairer & Wanner, Solving ODEs I, II.4
    scale = atol + rtol * np.linalg.norm(y)
    d0 = np.linalg.norm(y) / scale
    d1 = np.linalg.norm(f0) / scale
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    y1 = y + h0 * f0
    d2 = np.linalg.norm(f(y1) - f0) / scale / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, t_span)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    sample_times,
    *,
    t0: float = 0.0,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    h0: float | None = None,
    max_steps: int = 200_000,
    on_sample: Callable[[float, np.ndarray], np.ndarray | None] | None = None,
) -> IntegrationStats:
    """Integrate the autonomous system ``y' = f(y)`` from ``t0``.

    Steps are clipped so that every entry of ``sample_times`` (non-decreasing,
    all ``>= t0``) is hit exactly.  ``on_sample(t, y)`` is called at each one and
    may return a replacement state to continue from (for renormalisation);
    ``f`` must then be linear, because the cached first stage is rescaled
    rather than recomputed.
    """
    ts = np.asarray(sample_times, dtype=float)
    if ts.size and (np.any(np.diff(ts) < 0) or ts[0] < t0):
        raise ValueError("sample_times must be non-decreasing and >= t0")
    stats = IntegrationStats()
    y = np.array(y0, copy=True)
    t = t0
    k1 = f(y)
    stats.n_rhs += 1
    t_end = float(ts[-1]) if ts.size else t0
    span = t_end - t0
    h = h0 if h0 is not None else (_initial_step(f, y, k1, span, rtol, atol) if span > 0 else 0.0)
    if h0 is None and span > 0:
        stats.n_rhs += 1

    for ts_i in ts:
        while t < ts_i:
            if stats.n_steps + stats.n_rejected >= max_steps:
                raise IntegrationError(f"exceeded {max_steps} steps at t={t:.6g}")
            remaining = ts_i - t
            last = h >= remaining * (1 - 1e-12)
            h_try = remaining if last else h
            if h_try < 1e-14 * max(abs(t), span):
                raise StepSizeUnderflow(f"step size {h_try:.3g} underflow at t={t:.6g}")
            ks = [k1]
            for s in range(1, 7):
                ys = _combine(y, h_try, A[s], ks)
                ks.append(f(ys))
            stats.n_rhs += 6
            y_new = ys  # stage 7 state equals the 5th-order solution
            err = _combine(np.zeros_like(y), 1.0, E, ks)
            scale = atol + rtol * max(np.linalg.norm(y), np.linalg.norm(y_new))
            err_norm = h_try * np.linalg.norm(err) / scale
            if err_norm <= 1.0:
                t = ts_i if last else t + h_try
                y = y_new
                k1 = ks[6]
                stats.n_steps += 1
                stats.h_min = min(stats.h_min, h_try)
                stats.h_max = max(stats.h_max, h_try)
                factor = MAX_FACTOR if err_norm == 0 else min(MAX_FACTOR, SAFETY * err_norm ** -0.2)
                # a step shortened to land on a sample says nothing about h
                if not (last and h_try < h):
                    h = h_try * factor
            else:
                stats.n_rejected += 1
                h = h_try * max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
        if on_sample is not None:
            replaced = on_sample(t, y)
            if replaced is not None:
                ratio = _scale_ratio(replaced, y)
                y = replaced
                k1 = k1 * ratio if ratio is not None else f(y)
    log.debug("integration finished: %s", stats)
    return stats


def _scale_ratio(new, old):
    """Scalar c with new == c*old, or None if new is not a rescaling of old."""
    num = np.vdot(old, new)
    den = np.vdot(old, old)
    if den == 0:
        return None
    c = num / den
    if np.allclose(new, c * old, rtol=1e-13, atol=0):
        return c
    return None
