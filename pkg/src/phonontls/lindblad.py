"""Master-equation model of a mechanical mode coupled to N two-level defects.

In the TLS frame the Hamiltonian is

    H = delta_tls b^dag b + sum_k g_k (a_k^dag b + b^dag a_k)

and each TLS carries emission, absorption and pure-dephasing collapse operators.
The mechanical mode has no collapse operators of its own unless
``mech_dephasing`` is set (used for the pure-dephasing reference model).

Two right-hand sides are provided.  :func:`lindblad_rhs` is the textbook dense
form for arbitrary H and collapse operators.  :class:`LindbladModel` exploits the
tensor structure of this particular model and is what :func:`evolve` uses.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import rk
from .hilbert import (
    SIGMA_MINUS,
    DensityMatrix,
    HilbertLayout,
    Operator,
    annihilation_op,
    fock_lowering,
    number_op,
    tls_lowering_op,
    tls_excited_population,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SystemConfig:
    """Model parameters.  Frequencies and rates are angular (rad/s).

    ``g_tls``, ``gamma1`` and ``gamma2`` accept either one value shared by all
    TLS or one value per TLS.  ``mech_dephasing`` is the rate at which the
    mechanical coherence <b> decays under an added collapse operator
    sqrt(2*mech_dephasing) b^dag b; it is zero in the TLS model.
    """

    n_tls: int = 5
    g_tls: float | tuple[float, ...] = 0.0
    delta_tls: float = 0.0
    gamma1: float | tuple[float, ...] = 0.0
    gamma2: float | tuple[float, ...] = 0.0
    n_th: float = 0.0
    n_max: int = 10
    tls_thermal: str = "boltzmann"
    mech_dephasing: float = 0.0

    def __post_init__(self):
        for name in ("g_tls", "gamma1", "gamma2"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple, np.ndarray)):
                v = tuple(float(x) for x in v)
                if len(v) != self.n_tls:
                    raise ValueError(f"{name} has {len(v)} entries for {self.n_tls} TLS")
                object.__setattr__(self, name, v)
        for name in ("gamma1", "gamma2", "mech_dephasing", "n_th"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be >= 0")
        if self.n_tls < 0:
            raise ValueError("n_tls must be >= 0")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        tls_excited_population(self.n_th, self.tls_thermal)
        HilbertLayout(self.n_max, self.n_tls)

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout(self.n_max, self.n_tls)

    def per_tls(self, name: str) -> np.ndarray:
        v = getattr(self, name)
        if isinstance(v, tuple):
            return np.array(v, dtype=float)
        return np.full(self.n_tls, float(v))

    def replace(self, **changes) -> SystemConfig:
        d = asdict(self)
        d.update(changes)
        return SystemConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def weak_coupling_preset(n_max: int = 10, **overrides) -> SystemConfig:
    """Parameter set that reproduces the double-exponential energy decay."""
    cfg = SystemConfig(
        n_tls=5,
        g_tls=TWO_PI * 33e3,
        delta_tls=TWO_PI * 100e3,
        gamma1=TWO_PI * 4.0e3,
        gamma2=TWO_PI * 660e3,
        n_th=0.05,
        n_max=n_max,
    )
    return cfg.replace(**overrides) if overrides else cfg


def strong_coupling_preset(n_max: int = 10, **overrides) -> SystemConfig:
    """Stronger-coupling set used for the dephasing study (delta = 3g, gamma2 = 20g)."""
    g = TWO_PI * 0.33e6
    cfg = SystemConfig(
        n_tls=5,
        g_tls=g,
        delta_tls=3 * g,
        gamma1=TWO_PI * 4.0e3,
        gamma2=20 * g,
        n_th=0.05,
        n_max=n_max,
    )
    return cfg.replace(**overrides) if overrides else cfg


def build_hamiltonian(cfg: SystemConfig) -> Operator:
    layout = cfg.layout
    b = annihilation_op(layout).matrix
    h = cfg.delta_tls * number_op(layout).matrix
    for k, g in enumerate(cfg.per_tls("g_tls"), start=1):
        a = tls_lowering_op(layout, k).matrix
        h = h + g * (a.conj().T @ b + b.conj().T @ a)
    return Operator(layout, h, hermitian=True)


def build_collapse_ops(cfg: SystemConfig) -> list[Operator]:
    """Collapse operators, three per TLS; zero-coefficient ones are omitted."""
    layout = cfg.layout
    ops = []
    g1, g2 = cfg.per_tls("gamma1"), cfg.per_tls("gamma2")
    for k in range(1, cfg.n_tls + 1):
        a = tls_lowering_op(layout, k).matrix
        for coeff, m in (
            (g1[k - 1] * (cfg.n_th + 1), a),
            (g1[k - 1] * cfg.n_th, a.conj().T),
            (g2[k - 1] / 2, a.conj().T @ a),
        ):
            if coeff > 0:
                ops.append(Operator(layout, np.sqrt(coeff) * m))
    if cfg.mech_dephasing > 0:
        ops.append(Operator(layout, np.sqrt(2 * cfg.mech_dephasing) * number_op(layout).matrix))
    return ops


def _matrix(x):
    return x.matrix if isinstance(x, (Operator, DensityMatrix)) else np.asarray(x)


def lindblad_rhs(rho, H, collapse_ops: Sequence = ()) -> np.ndarray:
    """-i[H, rho] + sum_j (L rho L^dag - {L^dag L, rho}/2), by plain matrix products."""
    r = _matrix(rho)
    h = _matrix(H)
    if r.shape != h.shape or r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"shape mismatch: rho {r.shape}, H {h.shape}")
    out = -1j * (h @ r - r @ h)
    for op in collapse_ops:
        L = _matrix(op)
        if L.shape != r.shape:
            raise ValueError(f"collapse operator shape {L.shape} does not match rho {r.shape}")
        Ld = L.conj().T
        LdL = Ld @ L
        out += L @ r @ Ld - 0.5 * (LdL @ r + r @ LdL)
    return out


class LindbladModel:
    """Structured right-hand side for the mechanics-TLS model.

    Integrates in the frame rotating at ``delta_tls * (b^dag b + sum_k a_k^dag a_k)``
    when ``frame="mechanics"``; the excitation number commutes with H and every
    collapse operator only shifts it uniformly, so the transformed equation is
    autonomous and free of the fast ``delta_tls * n`` rotation.  States handed
    in and out of :meth:`to_lab` / :meth:`from_lab` are in the TLS frame.

    Per evaluation: one sparse product for the exchange coupling, one
    elementwise product for every diagonal term (detunings, anticommutators,
    dephasing jumps), and strided slice updates for emission and absorption.
    The state must be Hermitian.
    """

    def __init__(self, cfg: SystemConfig, frame: str = "mechanics"):
        if frame not in ("mechanics", "tls"):
            raise ValueError(f"unknown frame {frame!r}")
        self.cfg = cfg
        self.frame = frame
        self.layout = L = cfg.layout
        n = L.fock_index.astype(float)
        bits = L.tls_bits.astype(float)
        g = cfg.per_tls("g_tls")
        g1, g2 = cfg.per_tls("gamma1"), cfg.per_tls("gamma2")

        if frame == "mechanics":
            h_diag = -cfg.delta_tls * bits.sum(axis=1)
        else:
            h_diag = cfg.delta_tls * n
        self.exc = L.excitation_number.astype(float)

        # sum_k L^dag L, diagonal in the product basis
        k_diag = bits @ (g1 * (cfg.n_th + 1) + g2 / 2) + (1 - bits) @ (g1 * cfg.n_th)
        k_diag = k_diag + 2 * cfg.mech_dephasing * n**2
        jump_w = (bits * (g2 / 2)) @ bits.T + 2 * cfg.mech_dephasing * np.outer(n, n)
        self.diag_mult = (
            jump_w
            - 0.5 * (k_diag[:, None] + k_diag[None, :])
            - 1j * (h_diag[:, None] - h_diag[None, :])
        )

        b = sp.csr_matrix(fock_lowering(L.n_fock))
        v = sp.csr_matrix((L.total_dim, L.total_dim), dtype=complex)
        for k in range(1, cfg.n_tls + 1):
            sm = sp.kron(
                sp.kron(sp.identity(2 ** (k - 1)), sp.csr_matrix(SIGMA_MINUS)),
                sp.identity(2 ** (cfg.n_tls - k)),
            )
            v = v + g[k - 1] * (sp.kron(b, sm.T) + sp.kron(b.T, sm))
        self.coupling = (-1j * v).tocsr()

        self.decay_w = g1 * (cfg.n_th + 1)
        self.absorb_w = g1 * cfg.n_th

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        y = self.coupling @ rho
        out = y + y.conj().T
        out += self.diag_mult * rho
        L = self.layout
        n_tls = L.n_tls
        for k in range(1, n_tls + 1):
            cd, ca = self.decay_w[k - 1], self.absorb_w[k - 1]
            if cd == 0 and ca == 0:
                continue
            a = L.n_fock * 2 ** (k - 1)
            r = 2 ** (n_tls - k)
            rv = rho.reshape(a, 2, r, a, 2, r)
            ov = out.reshape(a, 2, r, a, 2, r)
            if cd:
                ov[:, 0, :, :, 0, :] += cd * rv[:, 1, :, :, 1, :]
            if ca:
                ov[:, 1, :, :, 1, :] += ca * rv[:, 0, :, :, 0, :]
        return out

    def _phases(self, t: float) -> np.ndarray:
        q = self.exc
        return np.exp(-1j * self.cfg.delta_tls * t * (q[:, None] - q[None, :]))

    def to_lab(self, rho: np.ndarray, t: float) -> np.ndarray:
        if self.frame == "tls" or t == 0 or self.cfg.delta_tls == 0:
            return rho
        return rho * self._phases(t)

    def from_lab(self, rho: np.ndarray, t: float) -> np.ndarray:
        if self.frame == "tls" or t == 0 or self.cfg.delta_tls == 0:
            return rho
        return rho * self._phases(t).conj()

    def lab_phase_mechanics(self, t: float) -> np.ndarray:
        """Phase factors taking a reduced mechanical state to the TLS frame."""
        n = np.arange(self.layout.n_fock)
        if self.frame == "tls":
            return np.ones((n.size, n.size), dtype=complex)
        return np.exp(-1j * self.cfg.delta_tls * t * (n[:, None] - n[None, :]))


@dataclass
class Trajectory:
    times: np.ndarray
    nbar: np.ndarray
    pn: np.ndarray  # (len(times), n_max+1)
    tls_bloch: np.ndarray  # (len(times), n_tls, 3): <sx>, <sy>, <sz>
    states: list[DensityMatrix] | None = None
    mech_states: np.ndarray | None = None  # reduced mechanical states, TLS frame
    trace_corrections: list[float] = field(default_factory=list)
    stats: rk.IntegrationStats | None = None

    def __len__(self):
        return len(self.times)

    def csv_header(self) -> list[str]:
        n_tls = self.tls_bloch.shape[1]
        cols = ["time_s", "nbar"] + [f"p{n}" for n in range(self.pn.shape[1])]
        for k in range(1, n_tls + 1):
            cols += [f"sx_{k}", f"sy_{k}", f"sz_{k}"]
        return cols

    def csv_rows(self) -> list[list[float]]:
        rows = []
        for i, t in enumerate(self.times):
            row = [float(t), float(self.nbar[i])] + [float(p) for p in self.pn[i]]
            row += [float(x) for x in self.tls_bloch[i].ravel()]
            rows.append(row)
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header())
            for row in self.csv_rows():
                w.writerow([repr(x) for x in row])


def tls_bloch_vectors(rho: np.ndarray, layout: HilbertLayout) -> np.ndarray:
    """(n_tls, 3) array of <sigma_x>, <sigma_y>, <sigma_z> (sigma_z = +1 excited)."""
    out = np.zeros((layout.n_tls, 3))
    for k in range(1, layout.n_tls + 1):
        left = layout.n_fock * 2 ** (k - 1)
        right = 2 ** (layout.n_tls - k)
        r = np.einsum("asbatb->st", rho.reshape(left, 2, right, left, 2, right))
        out[k - 1] = (2 * r[1, 0].real, 2 * r[1, 0].imag, (r[1, 1] - r[0, 0]).real)
    return out


def evolve(
    rho0: DensityMatrix | np.ndarray,
    cfg: SystemConfig,
    t_final: float,
    sample_times=None,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-14,
    store: str = "none",
    trace_tol: float = 1e-7,
    renorm_tol: float = 1e-9,
    frame: str = "mechanics",
    model: LindbladModel | None = None,
) -> Trajectory:
    """Integrate the master equation and record observables at ``sample_times``.

    ``store`` selects what is kept per sample besides the observables:
    ``"none"``, ``"mechanics"`` (reduced mechanical state) or ``"full"``
    (composite DensityMatrix, TLS frame).  Trace drift above ``renorm_tol`` at a
    sample is corrected and logged; drift above ``trace_tol`` raises.
    """
    if store not in ("none", "mechanics", "full"):
        raise ValueError(f"unknown store mode {store!r}")
    layout = cfg.layout
    r0 = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0)
    if r0.shape != (layout.total_dim, layout.total_dim):
        raise ValueError(f"initial state shape {r0.shape} does not match config dimension {layout.total_dim}")
    if sample_times is None:
        sample_times = np.linspace(0.0, t_final, 101)
    ts = np.asarray(sample_times, dtype=float)
    if ts.size == 0:
        raise ValueError("no sample times")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    if ts[0] < 0 or ts[-1] > t_final * (1 + 1e-12):
        raise ValueError("sample_times must lie in [0, t_final]")

    model = model or LindbladModel(cfg, frame=frame)
    f, t_n = layout.n_fock, layout.tls_dim
    nbar, pn, bloch, states, mech, corrections = [], [], [], [], [], []

    def record(t, y):
        tr = np.trace(y).real
        drift = abs(tr - 1.0)
        if drift > trace_tol:
            raise rk.IntegrationError(f"trace drift {drift:.3g} at t={t:.6g} exceeds {trace_tol:g}")
        replaced = None
        if drift > renorm_tol:
            log.info("renormalising trace at t=%.6g (drift %.3g)", t, drift)
            y = y / tr
            replaced = y
        corrections.append(tr - 1.0)
        p = np.real(np.diag(y)).reshape(f, t_n).sum(axis=1)
        pn.append(p)
        nbar.append(float(np.arange(f) @ p))
        b = tls_bloch_vectors(y, layout)
        if model.frame == "mechanics" and cfg.delta_tls:
            # TLS coherences carry excitation difference +1
            c = (b[:, 0] + 1j * b[:, 1]) * np.exp(-1j * cfg.delta_tls * t)
            b[:, 0], b[:, 1] = c.real, c.imag
        bloch.append(b)
        if store != "none":
            rm = np.einsum("iaja->ij", y.reshape(f, t_n, f, t_n)) * model.lab_phase_mechanics(t)
            mech.append(rm)
        if store == "full":
            states.append(DensityMatrix(layout, model.to_lab(y, t)))
        return replaced

    y0 = model.from_lab(np.array(r0, dtype=complex), 0.0)
    stats = rk.integrate(model.rhs, y0, ts, rtol=rtol, atol=atol, on_sample=record)
    return Trajectory(
        times=ts,
        nbar=np.array(nbar),
        pn=np.array(pn),
        tls_bloch=np.array(bloch).reshape(len(ts), cfg.n_tls, 3),
        states=states if store == "full" else None,
        mech_states=np.array(mech) if store != "none" else None,
        trace_corrections=corrections,
        stats=stats,
    )
