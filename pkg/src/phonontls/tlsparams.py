"""TLS and device parameter estimates from material constants and mode fields."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import hbar as HBAR

TWO_PI = 2.0 * np.pi
STRAIN_COLUMNS = ("exx", "exy", "exz", "eyy", "eyz", "ezz")
FIELD_COLUMNS = ("dV_m3", "u_abs_m") + STRAIN_COLUMNS

# lithium niobate and device values
LN_DENSITY = 4700.0  # kg/m^3
LN_SOUND_SPEED = 4000.0  # m/s
BVD_C0 = 213.5e-18  # F
BVD_CM = 51.4e-18  # F
BVD_LM = 90.9e-6  # H
MODE_FREQUENCY_HZ = 2.339e9
REFERENCE_MASS = 440e-18  # kg (440 fg)
REFERENCE_STRAIN_ZPF = 1.6e-9

P0_EXPONENT_RANGE = (44.0, 46.0)
LOSS_TANGENT_EXPONENT_RANGE = (-4.5, -4.0)


@dataclass(frozen=True)
class MaterialConstants:
    rho: float = LN_DENSITY
    v: float = LN_SOUND_SPEED
    p0: float = 1e45  # 1/(J m^3)
    delta0: float = 10**-4.25
    hbar: float = HBAR
    filling_factor: float = 1.0

    def __post_init__(self):
        for name in ("rho", "v", "p0", "hbar", "filling_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.delta0 < 0:
            raise ValueError(f"delta0 must be >= 0, got {self.delta0!r}")

    def replace(self, **changes) -> MaterialConstants:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ModeField:
    """Sampled eigenmode: cell volumes, |u| and the six independent strain components."""

    volumes: np.ndarray
    displacement: np.ndarray
    strain: np.ndarray  # (n_points, 6) in STRAIN_COLUMNS order
    omega_m: float = TWO_PI * MODE_FREQUENCY_HZ

    def __post_init__(self):
        vol = np.asarray(self.volumes, dtype=float).reshape(-1)
        u = np.abs(np.asarray(self.displacement, dtype=float).reshape(-1))
        s = np.asarray(self.strain, dtype=float)
        if vol.size == 0:
            raise ValueError("mode field has no grid points")
        if s.ndim == 1 and s.size == 0:
            s = np.zeros((vol.size, 6))
        if u.shape != vol.shape or s.shape != (vol.size, 6):
            raise ValueError(
                f"inconsistent field shapes: volumes {vol.shape}, displacement {u.shape}, strain {s.shape}"
            )
        if np.any(vol <= 0):
            raise ValueError("grid volumes must be > 0")
        if not self.omega_m > 0:
            raise ValueError("omega_m must be > 0")
        object.__setattr__(self, "volumes", vol)
        object.__setattr__(self, "displacement", u)
        object.__setattr__(self, "strain", s)

    @property
    def n_points(self) -> int:
        return self.volumes.size

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @classmethod
    def from_csv(cls, path, omega_m: float = TWO_PI * MODE_FREQUENCY_HZ) -> ModeField:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            missing = [c for c in FIELD_COLUMNS if c not in header]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            idx = [header.index(c) for c in FIELD_COLUMNS]
            rows = [[float(r[i]) for i in idx] for r in reader if r and any(x.strip() for x in r)]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        a = np.array(rows)
        return cls(a[:, 0], a[:, 1], a[:, 2:], omega_m)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FIELD_COLUMNS)
            for v, u, s in zip(self.volumes, self.displacement, self.strain):
                w.writerow([repr(float(v)), repr(float(u))] + [repr(float(x)) for x in s])


def uniform_field(volume: float, n_points: int = 10, u: float = 1.0, strain=None, omega_m=TWO_PI * MODE_FREQUENCY_HZ) -> ModeField:
    """Constant |u| and strain over ``n_points`` equal cells."""
    s = np.zeros(6) if strain is None else np.asarray(strain, dtype=float)
    return ModeField(
        np.full(n_points, volume / n_points),
        np.full(n_points, u),
        np.tile(s, (n_points, 1)),
        omega_m,
    )


def gaussian_slab_field(
    sigma: float,
    area: float,
    n_points: int = 401,
    half_width: float = 6.0,
    omega_m: float = TWO_PI * MODE_FREQUENCY_HZ,
) -> ModeField:
    """|u(x)| = exp(-x^2 / 2 sigma^2) extruded over a cross-section ``area``.

    Cells are midpoints of a uniform grid on [-half_width*sigma, half_width*sigma].
    The only strain component is exx = du/dx.
    """
    edges = np.linspace(-half_width * sigma, half_width * sigma, n_points + 1)
    x = 0.5 * (edges[1:] + edges[:-1])
    dx = np.diff(edges)
    u = np.exp(-(x**2) / (2 * sigma**2))
    strain = np.zeros((n_points, 6))
    strain[:, 0] = -x / sigma**2 * u
    return ModeField(dx * area, u, strain, omega_m)


def effective_mass(mode: ModeField, rho: float) -> float:
    """Mass of a point oscillator with the mode's kinetic energy at max |u|."""
    umax = mode.displacement.max()
    if umax <= 0:
        raise ValueError("mode field has zero displacement everywhere")
    return float(rho * np.sum(mode.volumes * mode.displacement**2) / umax**2)


def zero_point_displacement(m_eff: float, omega_m: float, hbar: float = HBAR) -> float:
    if m_eff <= 0 or omega_m <= 0:
        raise ValueError("m_eff and omega_m must be > 0")
    return float(np.sqrt(hbar / (2 * m_eff * omega_m)))


def rms_strain(mode: ModeField) -> float:
    """Volume-averaged RMS over the six strain components of the field as sampled."""
    return float(np.sqrt(np.sum(mode.volumes[:, None] * mode.strain**2) / (6 * mode.total_volume)))


def zero_point_strain(mode: ModeField, x_zpf: float) -> float:
    umax = mode.displacement.max()
    if umax <= 0:
        raise ValueError("mode field has zero displacement everywhere")
    return x_zpf / umax * rms_strain(mode)


def elastic_dipole(mat: MaterialConstants) -> float:
    """TLS deformation potential in joules, from the loss tangent and P0."""
    return float(np.sqrt(mat.filling_factor * mat.delta0 * mat.rho * mat.v**2 / (np.pi * mat.p0)))


def tls_coupling_rate(gamma_dipole: float, xi_zpf: float, hbar: float = HBAR) -> float:
    """Angular coupling rate between one TLS and the zero-point strain."""
    return gamma_dipole * xi_zpf / hbar


def estimate_tls_count(p0: float, volume: float, delta_omega: float, hbar: float = HBAR, thermal_factor: float = 10.0) -> float:
    """Number of TLS in ``volume`` within ``delta_omega`` of the mode (not rounded).

    ``thermal_factor`` converts P0 to the density at the operating temperature.
    """
    return thermal_factor * p0 * volume * hbar * delta_omega


@dataclass
class TlsSamples:
    p0: np.ndarray
    delta0: np.ndarray
    gamma: np.ndarray  # J
    g_tls: np.ndarray  # rad/s
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def histogram(self, quantity: str = "g_tls", bins: int = 50, log: bool = True):
        x = getattr(self, quantity)
        if quantity == "g_tls":
            x = x / TWO_PI
        if log:
            edges = np.logspace(np.log10(x.min()), np.log10(x.max()), bins + 1)
        else:
            edges = np.linspace(x.min(), x.max(), bins + 1)
        # logspace rounding can leave the extremes just outside the range
        edges[0], edges[-1] = x.min(), x.max()
        if edges[0] == edges[-1]:
            edges = np.array([x.min() * (1 - 1e-12), x.max() * (1 + 1e-12)])
        counts, edges = np.histogram(x, bins=edges)
        return counts, edges


def coupling_bounds(
    xi_zpf: float = REFERENCE_STRAIN_ZPF,
    mat: MaterialConstants | None = None,
    p0_exponents=P0_EXPONENT_RANGE,
    delta_exponents=LOSS_TANGENT_EXPONENT_RANGE,
) -> tuple[float, float]:
    """Smallest and largest g_TLS (rad/s) at the corners of the sampling box."""
    mat = mat or MaterialConstants()
    lo = mat.replace(p0=10 ** max(p0_exponents), delta0=10 ** min(delta_exponents))
    hi = mat.replace(p0=10 ** min(p0_exponents), delta0=10 ** max(delta_exponents))
    return (
        tls_coupling_rate(elastic_dipole(lo), xi_zpf, mat.hbar),
        tls_coupling_rate(elastic_dipole(hi), xi_zpf, mat.hbar),
    )


def sample_tls_distributions(
    n_samples: int = 10_000,
    seed: int | None = 0,
    *,
    xi_zpf: float = REFERENCE_STRAIN_ZPF,
    mat: MaterialConstants | None = None,
    p0_exponents=P0_EXPONENT_RANGE,
    delta_exponents=LOSS_TANGENT_EXPONENT_RANGE,
) -> TlsSamples:
    """Log-uniform draws of P0 and the loss tangent, mapped to dipole and coupling."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mat = mat or MaterialConstants()
    rng = np.random.default_rng(seed)
    lam1 = rng.uniform(*p0_exponents, size=n_samples)
    lam2 = rng.uniform(*delta_exponents, size=n_samples)
    p0, d0 = 10.0**lam1, 10.0**lam2
    gamma = np.sqrt(mat.filling_factor * d0 * mat.rho * mat.v**2 / (np.pi * p0))
    g = gamma * xi_zpf / mat.hbar
    return TlsSamples(p0, d0, gamma, g, seed, {"xi_zpf": xi_zpf, "n_samples": n_samples})


@dataclass
class Admittance:
    omega: np.ndarray
    y: np.ndarray
    at_pole: np.ndarray  # True where the lossless motional branch diverges

    def rows(self):
        for w, y in zip(self.omega, self.y):
            yield float(w / TWO_PI), float(y.real), float(y.imag)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["freq_hz", "re_Y", "im_Y"])
            for row in self.rows():
                wr.writerow([repr(x) for x in row])


def series_resonance(cm: float = BVD_CM, lm: float = BVD_LM) -> float:
    """Angular series resonance of the motional branch."""
    return 1.0 / np.sqrt(lm * cm)


def bvd_admittance(omega, c0: float = BVD_C0, cm: float = BVD_CM, lm: float = BVD_LM, r: float = 0.0) -> Admittance:
    """Shunt capacitor in parallel with a series R-L-C motional branch."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(w <= 0):
        raise ValueError("omega must be > 0")
    z_branch = r + 1j * w * lm + 1.0 / (1j * w * cm)
    at_pole = np.abs(z_branch) <= 1e-12 * w * lm
    y = 1j * w * c0 + 0j
    ok = ~at_pole
    y[ok] += 1.0 / z_branch[ok]
    y[at_pole] = complex(np.inf, np.inf)
    return Admittance(w, y, at_pole)
