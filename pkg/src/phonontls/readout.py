"""Dispersive Ramsey readout of phonon-number distributions and the downstream fits.

Fit models
----------
Ramsey signal       S(t) = sum_n A_n exp(-kappa t) cos((omega0 + 2 chi n) t + phi_n)
Ringdown            nbar(tau) = a1 exp(-kappa1 tau) + a2 exp(-kappa2 tau)
Interference        nbar(phi) = C cos(phi + phi0) + nbar_off
Fringe envelope     C(tau) = C0 exp(-tau / T2m)

All nonlinear fits use Levenberg-Marquardt (MINPACK, through scipy) with
analytic Jacobians on internally rescaled, dimensionless variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import gammaln

log = logging.getLogger(__name__)

MAX_ITERATIONS = 200
FTOL = 1e-10


class FitError(RuntimeError):
    """A fit failed to converge or its input violates the model's preconditions."""


@dataclass
class PhononDistribution:
    probs: np.ndarray
    sigmas: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-D array")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        s = p.sum()
        if s <= 0:
            raise ValueError("probabilities sum to zero")
        self.probs = p / s
        if self.sigmas is None:
            self.sigmas = np.zeros_like(self.probs)
        else:
            self.sigmas = np.asarray(self.sigmas, dtype=float)
            if self.sigmas.shape != self.probs.shape:
                raise ValueError("sigmas must match probs")

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return mean_phonon(self)


@dataclass
class RamseySignal:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if self.times.size > 2:
            t = self.times
            grid = np.linspace(t[0], t[-1], t.size)
            if np.max(np.abs(t - grid)) > 1e-12 * abs(t[-1] - t[0]):
                raise ValueError("Ramsey times must be uniformly spaced")


@dataclass
class FitResult:
    params: dict[str, float]
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    n_iterations: int
    flags: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.params)

    @property
    def stderr(self) -> dict[str, float]:
        d = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        return dict(zip(self.params, d))

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        se = self.stderr
        return {
            "parameters": [
                {"name": k, "value": float(v), "stderr": float(se[k])} for k, v in self.params.items()
            ],
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "n_iterations": int(self.n_iterations),
            "flags": _jsonable(self.flags),
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def _covariance(jac, resid, n_params):
    """s^2 (J^T J)^-1 by SVD; returns (cov, rank_deficient)."""
    m = jac.shape[0]
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    tol = np.finfo(float).eps * max(jac.shape) * (s[0] if s.size else 0.0)
    keep = s > tol
    rank_deficient = bool(np.count_nonzero(keep) < n_params)
    s_inv2 = np.where(keep, 1.0 / np.where(keep, s, 1.0) ** 2, 0.0)
    dof = max(m - n_params, 1)
    s2 = float(resid @ resid) / dof
    cov = (vt.T * s_inv2) @ vt * s2
    return 0.5 * (cov + cov.T), rank_deficient


def _lm(fun, jac, x0, args=()):
    res = least_squares(
        fun, x0, jac=jac, args=args, method="lm", ftol=FTOL, xtol=1e-12, gtol=1e-14,
        max_nfev=4 * MAX_ITERATIONS,
    )
    n_iter = int(res.njev) if res.njev is not None else int(res.nfev)
    converged = res.status > 0 and n_iter <= MAX_ITERATIONS
    return res, converged, n_iter


# ---------------------------------------------------------------------------
# Ramsey signal


def synthesize_ramsey(
    pn: PhononDistribution | np.ndarray,
    omega0: float,
    chi: float,
    kappa: float,
    phases=0.0,
    times=None,
    amplitude: float = 1.0,
) -> RamseySignal:
    """Forward model with A_n = amplitude * P(n); ``phases`` is a scalar or per-level array."""
    probs = pn.probs if isinstance(pn, PhononDistribution) else np.asarray(pn, dtype=float)
    if times is None:
        times = np.linspace(0.0, 700e-9, 141)
    t = np.asarray(times, dtype=float)
    ph = np.broadcast_to(np.asarray(phases, dtype=float), probs.shape)
    n = np.arange(probs.size)
    w = omega0 + 2 * chi * n
    vals = np.exp(-kappa * t) * (amplitude * probs * np.cos(np.outer(t, w) + ph)).sum(axis=1)
    return RamseySignal(t, vals)


def _ramsey_model_quad(x, tau, n_levels):
    """Dimensionless quadrature model; x = [w0, c, k, c_0..c_N, s_0..s_N] with c = chi scale."""
    w0, chi, k = x[:3]
    cq = x[3 : 3 + n_levels]
    sq = x[3 + n_levels :]
    n = np.arange(n_levels)
    ph = np.outer(tau, w0 + 2 * chi * n)
    cos, sin = np.cos(ph), np.sin(ph)
    env = np.exp(-k * tau)
    return env * (cos @ cq - sin @ sq), cos, sin, env


def ramsey_residual_quad(x, tau, y, n_levels):
    return _ramsey_model_quad(x, tau, n_levels)[0] - y


def ramsey_jacobian_quad(x, tau, y, n_levels):
    model, cos, sin, env = _ramsey_model_quad(x, tau, n_levels)
    cq = x[3 : 3 + n_levels]
    sq = x[3 + n_levels :]
    n = np.arange(n_levels)
    dphase = -(sin * cq + cos * sq)  # d/d(phase) of each tone, per unit env
    jac = np.empty((tau.size, x.size))
    jac[:, 0] = env * tau * dphase.sum(axis=1)
    jac[:, 1] = env * tau * (dphase @ (2 * n))
    jac[:, 2] = -tau * model
    jac[:, 3 : 3 + n_levels] = env[:, None] * cos
    jac[:, 3 + n_levels :] = -env[:, None] * sin
    return jac


def _ramsey_model_shared(x, tau, n_levels):
    w0, chi, k, phi = x[:4]
    amps = x[4:]
    n = np.arange(n_levels)
    ph = np.outer(tau, w0 + 2 * chi * n) + phi
    cos, sin = np.cos(ph), np.sin(ph)
    env = np.exp(-k * tau)
    return env * (cos @ amps), cos, sin, env


def ramsey_residual_shared(x, tau, y, n_levels):
    return _ramsey_model_shared(x, tau, n_levels)[0] - y


def ramsey_jacobian_shared(x, tau, y, n_levels):
    model, cos, sin, env = _ramsey_model_shared(x, tau, n_levels)
    amps = x[4:]
    n = np.arange(n_levels)
    ds = -(sin * amps)
    jac = np.empty((tau.size, x.size))
    jac[:, 0] = env * tau * ds.sum(axis=1)
    jac[:, 1] = env * tau * (ds @ (2 * n))
    jac[:, 2] = -tau * model
    jac[:, 3] = env * ds.sum(axis=1)
    jac[:, 4:] = env[:, None] * cos
    return jac


def _linear_amplitudes(tau, y, w0, chi, k, n_levels):
    n = np.arange(n_levels)
    ph = np.outer(tau, w0 + 2 * chi * n)
    env = np.exp(-k * tau)[:, None]
    basis = np.hstack([env * np.cos(ph), -env * np.sin(ph)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    r = basis @ coef - y
    return coef, float(r @ r)


def _batch_costs(tau, y, w0s, chi, k, n_levels):
    """Residual cost of the linear amplitude solve for each omega0 in ``w0s``."""
    n = np.arange(n_levels)
    ph = (np.asarray(w0s)[:, None, None] + 2 * chi * n) * tau[None, :, None]
    env = np.exp(-k * tau)[None, :, None]
    basis = np.concatenate([env * np.cos(ph), -env * np.sin(ph)], axis=2)
    gram = np.einsum("bti,btj->bij", basis, basis)
    rhs = np.einsum("bti,t->bi", basis, y)
    ridge = 1e-12 * np.trace(gram, axis1=1, axis2=2)[:, None, None] * np.eye(gram.shape[1])
    coef = np.linalg.solve(gram + ridge, rhs[..., None])[..., 0]
    r = np.einsum("bti,bi->bt", basis, coef) - y
    return np.einsum("bt,bt->b", r, r)


def _spectral_band(tau, y, threshold=0.2):
    """Lowest and highest frequency (dimensionless) carrying significant spectral weight."""
    n_fft = 16 * int(2 ** np.ceil(np.log2(tau.size)))
    dt = tau[1] - tau[0]
    spectrum = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(tau.size), n_fft))
    freqs = 2 * np.pi * np.fft.rfftfreq(n_fft, dt)
    significant = freqs[spectrum > threshold * spectrum.max()]
    return significant.min(), significant.max()


def _pencil_tones(tau, y, n_tones, rel_amp=0.005):
    """Damped tones of ``y`` by the matrix-pencil method: (omega, kappa, amplitude) rows.

    Only positive frequencies whose amplitude exceeds ``rel_amp`` of the largest
    are returned, sorted by frequency.
    """
    dt = tau[1] - tau[0]
    m = y.size
    lp = m // 2
    hank = np.lib.stride_tricks.sliding_window_view(y, lp + 1)
    _, sv, vt = np.linalg.svd(hank, full_matrices=False)
    order = min(2 * n_tones, int(np.count_nonzero(sv > 1e-10 * sv[0])))
    if order == 0:
        return np.empty((0, 3))
    v = vt[:order].T
    z = np.linalg.eigvals(np.linalg.pinv(v[:-1]) @ v[1:])
    vander = z[None, :] ** np.arange(m)[:, None]
    amp, *_ = np.linalg.lstsq(vander, y.astype(complex), rcond=None)
    omega = np.angle(z) / dt
    kappa = -np.log(np.abs(z)) / dt
    keep = omega > 0
    rows = np.column_stack([omega[keep], kappa[keep], 2 * np.abs(amp[keep])])
    if rows.size == 0:
        return rows
    rows = rows[rows[:, 2] > rel_amp * rows[:, 2].max()]
    return rows[np.argsort(rows[:, 0])]


def _pencil_seed(tau, y, n_levels, chi_hint):
    """(omega0, chi, kappa) from the detected tones; chi < 0 unless hinted otherwise."""
    tones = _pencil_tones(tau, y, n_levels)
    if tones.shape[0] == 0:
        return None
    kappa = float(np.average(np.clip(tones[:, 1], 0, None), weights=tones[:, 2]))
    if chi_hint is not None:
        chi = chi_hint
    elif tones.shape[0] > 1:
        chi = -0.5 * float(np.min(np.diff(tones[:, 0])))
    else:
        chi = -0.5 * 2 * np.pi
    w0 = tones[-1, 0] if chi < 0 else tones[0, 0]
    return w0, chi, kappa


def _scan_seeds(tau, y, n_levels, w0_hint, chi_hint, k_hint, n_seeds=3):
    """Starting points from a scan of linear amplitude solves (dimensionless units).

    The comb spacing is generally too close to the spectral resolution of a
    short record to be read off the spectrum, so unknown spacings are scanned
    on a log grid and the best few distinct spacings are returned.  Without a
    hint chi is taken negative and omega0 near the top of the occupied band:
    for a real signal the mirrored assignment (chi > 0, levels reversed) fits
    equally well and cannot be told apart.
    """
    lo, hi = _spectral_band(tau, y)
    if chi_hint is not None:
        chis = [chi_hint]
    else:
        chis = -0.5 * np.geomspace(2 * np.pi * 0.3, 2 * np.pi * 25.0, 160)
    ks = [k_hint] if k_hint is not None else [0.3, 1.0, 3.0]
    found = []
    for c in chis:
        if w0_hint is not None:
            w0s = np.array([w0_hint])
        elif c < 0:
            # the windowed band edge sits up to a main-lobe half width beyond the outer tone
            w0s = hi + np.arange(-16, 5) * (np.pi / 4)
        else:
            w0s = lo + np.arange(-4, 17) * (np.pi / 4)
        for k in ks:
            costs = _batch_costs(tau, y, w0s, c, k, n_levels)
            i = int(np.argmin(costs))
            found.append((float(costs[i]), float(w0s[i]), float(c), float(k)))
    found.sort()
    seeds = []
    for cand in found:
        if all(abs(cand[2] - s[2]) > 0.05 * abs(s[2]) for s in seeds):
            seeds.append(cand)
        if len(seeds) == n_seeds:
            break
    return [sd[1:] for sd in seeds]


def _refine_seed(tau, y, n_levels, w0, chi, k, chi_known, k_grid):
    """Local grid of linear solves around one seed; returns (w0, chi, k, coef)."""
    w_grid = w0 + np.linspace(-0.5, 0.5, 11) * abs(chi)
    c_grid = chi * (np.linspace(0.94, 1.06, 13) if chi_known else np.linspace(0.9, 1.1, 21))
    best = None
    for kk in k_grid:
        for c in c_grid:
            costs = _batch_costs(tau, y, w_grid, c, kk, n_levels)
            i = int(np.argmin(costs))
            if best is None or costs[i] < best[0]:
                best = (costs[i], w_grid[i], c, kk)
    _, w, c, kk = best
    coef, _ = _linear_amplitudes(tau, y, w, c, kk, n_levels)
    return w, c, kk, coef


def fit_ramsey(
    signal: RamseySignal,
    n_max: int,
    init_hints: dict | None = None,
    phase_mode: str = "per_level",
) -> tuple[PhononDistribution, FitResult]:
    """Fit the multi-tone Ramsey model and return the normalised P(n).

    ``init_hints`` may contain ``omega0``, ``chi`` and ``kappa`` (rad/s); values
    not supplied are estimated from the tones found by a matrix-pencil
    decomposition, plus a coarse scan of linear amplitude solves (chi is then
    assumed negative).  Each starting point is polished on a local grid of
    linear solves before the full nonlinear fit; the lowest-cost fit wins.

    ``phase_mode`` is ``"per_level"`` (one phase per Fock
    level) or ``"shared"`` (one common phase, signed amplitudes).
    """
    hints = dict(init_hints or {})
    n_levels = n_max + 1
    t = signal.times
    if t.size < 4 * (n_max + 3):
        raise FitError(f"need at least {4 * (n_max + 3)} samples for n_max={n_max}, got {t.size}")
    if phase_mode not in ("per_level", "shared"):
        raise ValueError(f"unknown phase_mode {phase_mode!r}")
    if t[0] < 0:
        raise FitError("Ramsey times must start at t >= 0")
    span = t[-1] - t[0]
    tau = t / span
    scale = np.max(np.abs(signal.values)) or 1.0
    y = signal.values / scale

    chi_h = hints.get("chi")
    w0_h = hints.get("omega0")
    k_h = hints.get("kappa")
    seeds = []
    if w0_h is None:
        ps = _pencil_seed(tau, y, n_levels, None if chi_h is None else chi_h * span)
        if ps is not None:
            seeds.append((ps[0], ps[1], k_h * span if k_h is not None else ps[2]))

    def scan():
        return _scan_seeds(
            tau, y, n_levels,
            None if w0_h is None else w0_h * span,
            None if chi_h is None else chi_h * span,
            None if k_h is None else k_h * span,
        )

    if not seeds:
        seeds = scan()
    best = None
    failure = None
    energy = float(y @ y)
    scanned = w0_h is not None or not seeds
    i = 0
    while i < len(seeds):
        w0_s, chi_s, k_s = seeds[i]
        i += 1
        k_grid = [k_h * span] if k_h is not None else sorted({0.0, 0.5, k_s, 1.0, 2.0, 4.0})
        w0_0, chi_0, k_0, coef = _refine_seed(tau, y, n_levels, w0_s, chi_s, k_s, chi_h is not None, k_grid)
        if phase_mode == "per_level":
            x0 = np.concatenate([[w0_0, chi_0, k_0], coef])
            fun, jac = ramsey_residual_quad, ramsey_jacobian_quad
        else:
            amp0 = np.hypot(coef[:n_levels], coef[n_levels:])
            big = np.argmax(amp0)
            phi0 = np.arctan2(coef[n_levels + big], coef[big])
            signed = coef[:n_levels] * np.cos(phi0) + coef[n_levels:] * np.sin(phi0)
            x0 = np.concatenate([[w0_0, chi_0, k_0, phi0], signed])
            fun, jac = ramsey_residual_shared, ramsey_jacobian_shared
        res, converged, n_iter = _lm(fun, jac, x0, args=(tau, y, n_levels))
        if not converged:
            failure = res.message
            continue
        if best is None or res.cost < best[0].cost:
            best = (res, converged, n_iter)
        if i == len(seeds) and not scanned:
            # an essentially exact pencil fit needs no further starting points
            scanned = True
            if best is None or 2 * best[0].cost > 1e-8 * energy:
                seeds += scan()
    if best is None:
        raise FitError(f"Ramsey fit did not converge: {failure}")
    res, converged, n_iter = best
    x = res.x
    cov_x, rank_def = _covariance(res.jac, res.fun, x.size)
    if rank_def:
        log.warning("Ramsey fit Jacobian is rank deficient")

    # map dimensionless fit vector to physical parameters
    names = ["omega0", "chi", "kappa"]
    p = x.size
    if phase_mode == "per_level":
        cq, sq = x[3 : 3 + n_levels], x[3 + n_levels :]
        amps = np.hypot(cq, sq)
        phases = np.arctan2(sq, cq)
        T = np.zeros((3 + 2 * n_levels, p))
        T[:3, :3] = np.eye(3) / span
        safe = np.where(amps > 0, amps, 1.0)
        for i in range(n_levels):
            if amps[i] > 0:
                T[3 + i, 3 + i] = cq[i] / safe[i] * scale
                T[3 + i, 3 + n_levels + i] = sq[i] / safe[i] * scale
                T[3 + n_levels + i, 3 + i] = -sq[i] / safe[i] ** 2
                T[3 + n_levels + i, 3 + n_levels + i] = cq[i] / safe[i] ** 2
        values = list(x[:3] / span) + list(amps * scale) + list(phases)
        clamped = []
    else:
        amps_signed = x[4:]
        T = np.zeros((4 + n_levels, p))
        T[:3, :3] = np.eye(3) / span
        T[3, 3] = 1.0
        T[4:, 4:] = np.eye(n_levels) * scale
        values = list(x[:3] / span) + [x[3]] + list(amps_signed * scale)
        names.append("phi")
        clamped = [int(i) for i in np.flatnonzero(amps_signed < 0)]
        amps = np.clip(amps_signed, 0, None)
    names += [f"A_{n}" for n in range(n_levels)]
    if phase_mode == "per_level":
        names += [f"phi_{n}" for n in range(n_levels)]
    cov = T @ cov_x @ T.T
    cov = 0.5 * (cov + cov.T)

    total = amps.sum()
    if total <= 0:
        raise FitError("all fitted amplitudes are non-positive")
    probs = amps / total
    a0 = 3 if phase_mode == "per_level" else 4
    cov_a = cov[a0 : a0 + n_levels, a0 : a0 + n_levels].copy()
    for i in clamped:
        cov_a[i, :] = 0
        cov_a[:, i] = 0
    G = (np.eye(n_levels) - probs[:, None]) / (total * scale)
    cov_p = G @ cov_a @ G.T
    sig_p = np.sqrt(np.clip(np.diag(cov_p), 0, None))

    fit = FitResult(
        params=dict(zip(names, (float(v) for v in values))),
        covariance=cov,
        residual_norm=float(np.linalg.norm(res.fun) * scale),
        converged=converged,
        n_iterations=n_iter,
        flags={
            "rank_deficient": rank_def,
            "clamped_levels": clamped,
            "phase_mode": phase_mode,
            "gradient_norm": float(np.linalg.norm(res.jac.T @ res.fun)),
        },
    )
    return PhononDistribution(probs, sig_p), fit


def mean_phonon(pn: PhononDistribution | np.ndarray) -> float:
    p = pn.probs if isinstance(pn, PhononDistribution) else np.asarray(pn, dtype=float)
    return float(np.arange(p.size) @ p)


def poisson_reference(nbar: float, n_max: int) -> PhononDistribution:
    """Truncated, renormalised Poisson distribution with mean ``nbar``."""
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    n = np.arange(n_max + 1)
    if nbar == 0:
        p = (n == 0).astype(float)
    else:
        p = np.exp(n * np.log(nbar) - nbar - gammaln(n + 1))
    return PhononDistribution(p)


def total_variation(p, q) -> float:
    a = p.probs if isinstance(p, PhononDistribution) else np.asarray(p, dtype=float)
    b = q.probs if isinstance(q, PhononDistribution) else np.asarray(q, dtype=float)
    m = max(a.size, b.size)
    a = np.pad(a, (0, m - a.size))
    b = np.pad(b, (0, m - b.size))
    return 0.5 * float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# Ringdown


def double_exp(taus, a1, k1, a2, k2):
    taus = np.asarray(taus, dtype=float)
    return a1 * np.exp(-k1 * taus) + a2 * np.exp(-k2 * taus)


def double_exp_residual(x, tau, y, k1_fixed=None):
    if k1_fixed is None:
        a1, k1, a2, k2 = x
    else:
        a1, a2, k2 = x
        k1 = k1_fixed
    return a1 * np.exp(-k1 * tau) + a2 * np.exp(-k2 * tau) - y


def double_exp_jacobian(x, tau, y, k1_fixed=None):
    if k1_fixed is None:
        a1, k1, a2, k2 = x
    else:
        a1, a2, k2 = x
        k1 = k1_fixed
    e1, e2 = np.exp(-k1 * tau), np.exp(-k2 * tau)
    if k1_fixed is None:
        return np.column_stack([e1, -a1 * tau * e1, e2, -a2 * tau * e2])
    return np.column_stack([e1, e2, -a2 * tau * e2])


def _loglin(tau, y):
    y = np.clip(y, 1e-300, None)
    slope, icpt = np.polyfit(tau, np.log(y), 1)
    return np.exp(icpt), -slope


def fit_double_exp(taus, nbar, fixed_kappa1: float | None = None) -> FitResult:
    """Fit nbar(tau) = a1 exp(-kappa1 tau) + a2 exp(-kappa2 tau), kappa1 > kappa2.

    With ``fixed_kappa1`` the fast rate is held constant (rad/s) and only
    a1, a2, kappa2 vary.
    """
    taus = np.asarray(taus, dtype=float)
    y_raw = np.asarray(nbar, dtype=float)
    if taus.size < 6 or taus.shape != y_raw.shape:
        raise FitError("double-exponential fit needs at least 6 matching points")
    if np.any(y_raw <= 0):
        raise FitError("nbar must be positive")
    span = taus.max() - taus.min()
    tau = taus / span
    ysc = y_raw.max()
    y = y_raw / ysc

    half = tau.size // 2
    a2_0, k2_0 = _loglin(tau[half:], y[half:])
    k2_0 = max(k2_0, 1e-3)
    starts = []
    if fixed_kappa1 is None:
        for ratio in (3.0, 10.0, 30.0, 100.0):
            starts.append(np.array([max(y[0] - a2_0, 1e-3), ratio * k2_0, a2_0, k2_0]))
        a_all, k_all = _loglin(tau, y)
        starts.append(np.array([a_all, max(k_all, 1e-3), 1e-4 * a_all, 0.1 * max(k_all, 1e-3)]))
        k1f = None
    else:
        k1f = fixed_kappa1 * span
        starts.append(np.array([max(y[0] - a2_0, 1e-3), a2_0, k2_0]))
        starts.append(np.array([0.5 * y[0], 0.5 * y[0], min(k2_0, 0.5 * k1f)]))

    best = None
    for x0 in starts:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res, conv, n_iter = _lm(double_exp_residual, double_exp_jacobian, x0, args=(tau, y, k1f))
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.cost < best[0].cost:
            best = (res, conv, n_iter)
    if best is None or not best[1]:
        raise FitError("double-exponential fit did not converge")
    res, conv, n_iter = best
    cov_x, rank_def = _covariance(res.jac, res.fun, res.x.size)

    if k1f is None:
        a1, k1, a2, k2 = res.x
        scale = np.array([ysc, 1 / span, ysc, 1 / span])
        order = [0, 1, 2, 3]
        single = min(abs(a1), abs(a2)) < 1e-6 * max(abs(a1), abs(a2))
        # dominant term is reported as component 1 for single-exponential data
        swap = (abs(a1) < abs(a2)) if single else (k1 < k2)
        if swap:
            order = [2, 3, 0, 1]
        x = res.x[order] * scale
        cov = cov_x[np.ix_(order, order)] * np.outer(scale, scale)
        names = ["a1", "kappa1", "a2", "kappa2"]
        params = dict(zip(names, x))
    else:
        a1, a2, k2 = res.x
        single = min(abs(a1), abs(a2)) < 1e-6 * max(abs(a1), abs(a2))
        s3 = np.array([ysc, ysc, 1 / span])
        c3 = cov_x * np.outer(s3, s3)
        params = {"a1": a1 * ysc, "kappa1": float(fixed_kappa1), "a2": a2 * ysc, "kappa2": k2 / span}
        idx = [0, None, 1, 2]
        cov = np.zeros((4, 4))
        for i, ii in enumerate(idx):
            for j, jj in enumerate(idx):
                if ii is not None and jj is not None:
                    cov[i, j] = c3[ii, jj]
    k1v, k2v = params["kappa1"], params["kappa2"]
    gap = abs(k1v - k2v) / max(abs(k1v), abs(k2v), 1e-300)
    resid = res.fun * ysc
    return FitResult(
        params={k: float(v) for k, v in params.items()},
        covariance=cov,
        residual_norm=float(np.linalg.norm(resid)),
        converged=True,
        n_iterations=n_iter,
        flags={
            "degenerate": bool(gap < 0.1),
            "single_exponential": bool(single),
            "rank_deficient": rank_def,
            "kappa1_fixed": fixed_kappa1 is not None,
            "relative_residual": float(np.linalg.norm(resid) / np.linalg.norm(y_raw)),
            "order_violated": bool(fixed_kappa1 is not None and k2v >= k1v),
        },
    )


# ---------------------------------------------------------------------------
# Interference fringes


def interference(phis, C, phi0, offset):
    return C * np.cos(np.asarray(phis, dtype=float) + phi0) + offset


def interference_jacobian(x, phis):
    C, phi0, _ = x
    ph = np.asarray(phis, dtype=float) + phi0
    return np.column_stack([np.cos(ph), -C * np.sin(ph), np.ones_like(ph)])


def fit_interference(phis, nbar) -> FitResult:
    """Fit C cos(phi + phi0) + nbar_off with C >= 0.

    The model is linear in (C cos phi0, -C sin phi0, nbar_off), so the
    least-squares optimum is obtained in closed form; the covariance is mapped
    to (C, phi0, nbar_off).
    """
    phis = np.asarray(phis, dtype=float)
    y = np.asarray(nbar, dtype=float)
    if phis.size < 5 or phis.shape != y.shape:
        raise FitError("interference fit needs at least 5 matching phase points")
    if np.ptp(phis) < np.pi - 1e-12:
        raise FitError("phase points must span at least pi")
    basis = np.column_stack([np.cos(phis), np.sin(phis), np.ones_like(phis)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise FitError("interference fit failed")
    A, B, off = coef
    C = float(np.hypot(A, B))
    phi0 = float(np.arctan2(-B, A)) if C > 0 else 0.0
    resid = basis @ coef - y
    cov_lin, rank_def = _covariance(basis, resid, 3)
    T = np.zeros((3, 3))
    if C > 0:
        T[0, :2] = [A / C, B / C]
        T[1, :2] = [B / C**2, -A / C**2]
    T[2, 2] = 1.0
    cov = T @ cov_lin @ T.T
    return FitResult(
        params={"C": C, "phi0": phi0, "nbar_off": float(off)},
        covariance=0.5 * (cov + cov.T),
        residual_norm=float(np.linalg.norm(resid)),
        converged=True,
        n_iterations=0,
        flags={"rank_deficient": rank_def,
               "relative_residual": float(np.linalg.norm(resid) / max(C * np.sqrt(phis.size / 2), 1e-300))},
    )


# ---------------------------------------------------------------------------
# Dephasing envelope


def exp_decay_residual(x, tau, y):
    c0, g = x
    return c0 * np.exp(-g * tau) - y


def exp_decay_jacobian(x, tau, y):
    c0, g = x
    e = np.exp(-g * tau)
    return np.column_stack([e, -c0 * tau * e])


def fit_t2m(taus, amplitudes) -> FitResult:
    """Fit C0 exp(-tau / T2m); reports C0, T2m and gamma_2m = 1/T2m."""
    taus = np.asarray(taus, dtype=float)
    y_raw = np.asarray(amplitudes, dtype=float)
    if taus.size < 4 or taus.shape != y_raw.shape:
        raise FitError("T2m fit needs at least 4 matching points")
    if np.any(y_raw <= 0):
        raise FitError("amplitudes must be positive")
    span = taus.max() - taus.min()
    t0 = taus.min()
    tau = (taus - t0) / span
    ysc = y_raw.max()
    y = y_raw / ysc
    c0, g0 = _loglin(tau, y)
    res, conv, n_iter = _lm(exp_decay_residual, exp_decay_jacobian, np.array([c0, g0]), args=(tau, y))
    if not conv:
        raise FitError(f"T2m fit did not converge: {res.message}")
    c0, g = res.x
    if g * 1.0 < -1e-6:
        raise FitError(f"amplitudes grow with delay (fitted rate {g / span:.3g} 1/s)")
    cov_x, rank_def = _covariance(res.jac, res.fun, 2)
    gamma = g / span
    # shift the amplitude reference back to tau = 0
    c0_phys = c0 * ysc * np.exp(gamma * t0)
    J = np.array([[ysc * np.exp(gamma * t0), c0 * ysc * np.exp(gamma * t0) * t0 / span],
                  [0.0, 1 / span]])
    cov2 = J @ cov_x @ J.T
    t2 = 1 / gamma if gamma > 0 else np.inf
    dt2 = -1 / gamma**2 if gamma > 0 else 0.0
    T = np.array([[1, 0], [0, dt2], [0, 1]])
    cov = T @ cov2 @ T.T
    return FitResult(
        params={"C0": float(c0_phys), "T2m": float(t2), "gamma_2m": float(gamma)},
        covariance=0.5 * (cov + cov.T),
        residual_norm=float(np.linalg.norm(res.fun) * ysc),
        converged=True,
        n_iterations=n_iter,
        flags={"rank_deficient": rank_def},
    )


# ---------------------------------------------------------------------------
# Dispersive shift


def dispersive_shift(g: float, delta: float, alpha_q: float) -> float:
    """chi = -(g^2/delta) * alpha_q / (delta - alpha_q); any consistent frequency unit."""
    if delta == 0 or delta == alpha_q:
        raise ValueError("dispersive shift is singular for delta == 0 or delta == alpha_q")
    return -(g**2 / delta) * alpha_q / (delta - alpha_q)


def anharmonicity_for_shift(g: float, delta: float, chi: float) -> float:
    """Invert :func:`dispersive_shift` for the qubit anharmonicity."""
    den = g**2 - chi * delta
    if delta == 0 or den == 0:
        raise ValueError("no anharmonicity produces this shift")
    return -chi * delta**2 / den
