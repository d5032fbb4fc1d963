"""Virtual ringdown and displacement-interferometry experiments."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hilbert import (
    check_truncation,
    displacement_operator,
    fock_lowering,
    mechanics_displacement,
    required_n_max,
    thermal_state,
)
from .lindblad import LindbladModel, SystemConfig, Trajectory, evolve
from .readout import PhononDistribution

log = logging.getLogger(__name__)

DEFAULT_N_PHIS = 24


def default_phis(n: int = DEFAULT_N_PHIS) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


def _complex_json(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def _sample_grid(taus) -> tuple[np.ndarray, np.ndarray, bool]:
    """Sorted, de-duplicated sample times plus the map back to the caller's order."""
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or taus.size == 0:
        raise ValueError("taus must be a non-empty 1-d sequence")
    if np.any(taus < 0) or not np.all(np.isfinite(taus)):
        raise ValueError("taus must be finite and >= 0")
    grid, inverse = np.unique(taus, return_inverse=True)
    return grid, inverse, bool(grid[0] == 0.0)


@dataclass
class RingdownDataset:
    alpha0: complex
    taus: np.ndarray
    nbar: np.ndarray
    pn: list[PhononDistribution]
    config: SystemConfig | None = None
    trajectory: Trajectory | None = field(default=None, repr=False)

    def __post_init__(self):
        for i, p in enumerate(self.pn):
            mean = float(np.arange(len(p.probs)) @ p.probs)
            if abs(mean - self.nbar[i]) > 1e-10 * max(1.0, abs(mean)):
                raise ValueError(f"nbar[{i}]={self.nbar[i]} inconsistent with P(n) mean {mean}")

    @property
    def pn_matrix(self) -> np.ndarray:
        return np.array([p.probs for p in self.pn])

    def to_csv(self, path) -> None:
        n_levels = self.pn_matrix.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_s", "nbar"] + [f"p{n}" for n in range(n_levels)])
            for t, nb, p in zip(self.taus, self.nbar, self.pn_matrix):
                w.writerow([repr(float(t)), repr(float(nb))] + [repr(float(x)) for x in p])

    def to_dict(self) -> dict:
        return {
            "kind": "ringdown",
            "alpha0": _complex_json(self.alpha0),
            "taus_s": self.taus.tolist(),
            "nbar": self.nbar.tolist(),
            "pn": self.pn_matrix.tolist(),
            "config": self.config.to_dict() if self.config else None,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class InterferometryDataset:
    alpha: complex
    taus: np.ndarray
    phis: np.ndarray
    nbar_grid: np.ndarray  # (len(taus), len(phis))
    nbar_first: np.ndarray | None = None  # ringdown after the first pulse only
    config: SystemConfig | None = None

    def __post_init__(self):
        self.phis = np.asarray(self.phis, dtype=float)
        if np.any(np.diff(self.phis) <= 0):
            raise ValueError("phis must be strictly increasing")
        if self.nbar_grid.shape != (len(self.taus), len(self.phis)):
            raise ValueError(
                f"grid shape {self.nbar_grid.shape} != ({len(self.taus)}, {len(self.phis)})"
            )

    def rows(self):
        for i, t in enumerate(self.taus):
            for j, p in enumerate(self.phis):
                yield float(t), float(p), float(self.nbar_grid[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_s", "phi_rad", "nbar"])
            for row in self.rows():
                w.writerow([repr(x) for x in row])

    def to_dict(self) -> dict:
        return {
            "kind": "interferometry",
            "alpha": _complex_json(self.alpha),
            "taus_s": self.taus.tolist(),
            "phis_rad": self.phis.tolist(),
            "nbar_grid": self.nbar_grid.tolist(),
            "nbar_first": None if self.nbar_first is None else self.nbar_first.tolist(),
            "config": self.config.to_dict() if self.config else None,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def displaced_thermal_state(cfg: SystemConfig, alpha: complex) -> np.ndarray:
    """D(alpha) rho_th D(alpha)^dag for the full mechanics-TLS system."""
    layout = cfg.layout
    rho = thermal_state(layout, cfg.n_th, cfg.tls_thermal).matrix
    if alpha == 0:
        return rho
    d = displacement_operator(layout, alpha).matrix
    return d @ rho @ d.conj().T


def run_ringdown(cfg: SystemConfig, alpha0: complex, taus, **evolve_kw) -> RingdownDataset:
    """Displace the thermal state, evolve once to max(taus), sample n-bar and P(n)."""
    check_truncation(alpha0, cfg.n_max)
    grid, inverse, _ = _sample_grid(taus)
    rho0 = displaced_thermal_state(cfg, alpha0)
    t_final = float(grid[-1])
    traj = evolve(rho0, cfg, t_final, grid, **evolve_kw)
    pn = traj.pn[inverse]
    dists = [PhononDistribution(p) for p in pn]
    # recompute the mean from the normalised distribution so the invariant is exact
    nbar = np.array([float(np.arange(len(d.probs)) @ d.probs) for d in dists])
    return RingdownDataset(
        alpha0=complex(alpha0),
        taus=np.asarray(taus, dtype=float),
        nbar=nbar,
        pn=dists,
        config=cfg,
        trajectory=traj,
    )


def second_pulse_nbar(rho_mech: np.ndarray, alpha: complex, phis, n_fock_pad: int | None = None) -> np.ndarray:
    """Mean phonon number after displacing ``rho_mech`` by alpha*exp(i*phi), per phi.

    The reduced state is zero-padded to ``n_fock_pad`` levels (default: safe for a
    displacement of 2|alpha| on top of the state's own support) before the pulse.
    """
    n0 = rho_mech.shape[0]
    if n_fock_pad is None:
        n_fock_pad = max(n0, required_n_max(2 * abs(alpha)) + 1)
    pad = np.zeros((n_fock_pad, n_fock_pad), dtype=complex)
    pad[:n0, :n0] = rho_mech
    n = np.arange(n_fock_pad, dtype=float)
    out = np.empty(len(phis))
    for j, phi in enumerate(phis):
        d = mechanics_displacement(n_fock_pad, alpha * np.exp(1j * phi))
        out[j] = float(np.real(np.einsum("ij,jk,ik->i", d, pad, d.conj()) @ n))
    return out


def run_interferometry(
    cfg: SystemConfig,
    alpha: complex,
    taus,
    phis=None,
    *,
    threads: int = 1,
    **evolve_kw,
) -> InterferometryDataset:
    """Two-pulse interferometry: D(alpha), free evolution for tau, D(alpha e^{i phi}).

    One integration covers all delays; the reduced mechanical state is stored
    at each delay and the second pulse is applied to that snapshot.  Pulses are
    defined in the frame rotating with the mechanical mode, so phi = 0 is the
    constructive setting at tau = 0.  The final n-bar is taken right after the
    second pulse.
    """
    check_truncation(alpha, cfg.n_max)
    phis = default_phis() if phis is None else np.asarray(phis, dtype=float)
    if np.any(np.diff(phis) <= 0):
        raise ValueError("phis must be strictly increasing")
    grid, inverse, _ = _sample_grid(taus)
    model = LindbladModel(cfg, frame="mechanics")
    rho0 = displaced_thermal_state(cfg, alpha)
    traj = evolve(rho0, cfg, float(grid[-1]), grid, store="mechanics", model=model, **evolve_kw)
    # undo the TLS-frame phase: the pulses are referenced to the mechanical mode
    snaps = [traj.mech_states[i] * model.lab_phase_mechanics(t).conj() for i, t in enumerate(grid)]
    n_pad = max(cfg.n_max + 1, required_n_max(2 * abs(alpha)) + 1)

    def one(i):
        return second_pulse_nbar(snaps[i], alpha, phis, n_pad)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, range(len(grid))))
    else:
        rows = [one(i) for i in range(len(grid))]
    grid_nbar = np.array(rows)[inverse]
    return InterferometryDataset(
        alpha=complex(alpha),
        taus=np.asarray(taus, dtype=float),
        phis=phis,
        nbar_grid=grid_nbar,
        nbar_first=traj.nbar[inverse],
        config=cfg,
    )


def pure_dephasing_config(
    t2m: float,
    n_max: int,
    n_th: float = 0.0,
    convention: str = "envelope",
) -> SystemConfig:
    """Mechanics-only model with a single b^dag b dephasing channel.

    ``envelope``: the fringe amplitude decays as exp(-tau/t2m).  ``literal``:
    collapse operator sqrt(1/t2m) b^dag b, for which the coherence <b> and
    therefore the fringe amplitude decay at 1/(2 t2m).
    """
    if t2m <= 0:
        raise ValueError("t2m must be > 0")
    if convention == "envelope":
        rate = 1.0 / t2m
    elif convention == "literal":
        rate = 0.5 / t2m
    else:
        raise ValueError(f"unknown dephasing convention {convention!r}")
    return SystemConfig(n_tls=0, n_th=n_th, n_max=n_max, mech_dephasing=rate)


def coherent_fringe(alpha: complex, phis, n_th: float = 0.0) -> np.ndarray:
    """Closed-form n-bar after two coherent pulses with no evolution in between."""
    phis = np.asarray(phis, dtype=float)
    return 2 * abs(alpha) ** 2 * (1 + np.cos(phis)) + n_th


def mechanical_coherence(rho_mech: np.ndarray) -> complex:
    """<b> of a reduced mechanical state."""
    b = fock_lowering(rho_mech.shape[0])
    return complex(np.trace(b @ rho_mech))
