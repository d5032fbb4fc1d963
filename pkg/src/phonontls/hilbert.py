"""Operators and states on the truncated space of one bosonic mode and N two-level systems.

Subsystem order is fixed: mechanics first, then TLS 1..N.  Fock index 0 is the
vacuum and TLS index 0 is the ground state, so every lowering operator has the
upper-diagonal form ``[[0, 1], [0, 0]]`` on its own factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

#: Desk-scale guard on the composite dimension (dense storage only).
MAX_TOTAL_DIM = 2048

HERMITIAN_TOL = 1e-12


class TruncationError(ValueError):
    """Fock truncation too small for the requested displacement."""


class DimensionError(ValueError):
    """Composite dimension above the dense-storage guard."""


def required_n_max(alpha: complex) -> int:
    """Smallest Fock cutoff that keeps a displacement by ``alpha`` well resolved.

    Mean plus five standard deviations of Poisson(|alpha|^2), plus a margin of four.
    """
    a = abs(alpha)
    return max(1, int(np.ceil(a * a + 5.0 * a + 4.0 - 1e-12)))


def check_truncation(alpha: complex, n_max: int) -> None:
    need = required_n_max(alpha)
    if n_max < need:
        raise TruncationError(
            f"displacement |alpha|={abs(alpha):.4g} needs n_max >= {need} "
            f"(rule n_max >= |alpha|^2 + 5|alpha| + 4), got n_max={n_max}"
        )


@dataclass(frozen=True)
class HilbertLayout:
    n_max: int
    n_tls: int = 0

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")
        if int(self.n_tls) != self.n_tls or self.n_tls < 0:
            raise ValueError(f"n_tls must be an integer >= 0, got {self.n_tls!r}")
        if self.total_dim > MAX_TOTAL_DIM:
            raise DimensionError(
                f"total dimension (n_max+1)*2^n_tls = {self.total_dim} exceeds the "
                f"dense-storage guard {MAX_TOTAL_DIM}"
            )

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    @property
    def tls_dim(self) -> int:
        return 2**self.n_tls

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.n_fock,) + (2,) * self.n_tls

    @property
    def total_dim(self) -> int:
        return self.n_fock * self.tls_dim

    @cached_property
    def fock_index(self) -> np.ndarray:
        """Phonon number of every composite basis state."""
        return np.repeat(np.arange(self.n_fock), self.tls_dim)

    @cached_property
    def tls_bits(self) -> np.ndarray:
        """(total_dim, n_tls) array of TLS excitations (0 ground, 1 excited)."""
        idx = np.arange(self.tls_dim)
        shifts = np.arange(self.n_tls - 1, -1, -1)
        bits = (idx[:, None] >> shifts[None, :]) & 1
        return np.tile(bits, (self.n_fock, 1))

    @cached_property
    def excitation_number(self) -> np.ndarray:
        """Phonons plus excited TLS, per basis state."""
        return self.fock_index + self.tls_bits.sum(axis=1)


@dataclass(frozen=True, eq=False)
class Operator:
    layout: HilbertLayout
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix)
        d = self.layout.total_dim
        if m.shape != (d, d):
            raise ValueError(f"operator shape {m.shape} does not match layout dimension {d}")
        if self.hermitian:
            dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
            if dev > HERMITIAN_TOL:
                raise ValueError(f"operator flagged Hermitian but max|A - A^dag| = {dev:.3g}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def dag(self) -> Operator:
        return Operator(self.layout, self.matrix.conj().T.copy(), self.hermitian)

    def __matmul__(self, other: Operator) -> Operator:
        _same_layout(self, other)
        return Operator(self.layout, self.matrix @ other.matrix)

    def __add__(self, other: Operator) -> Operator:
        _same_layout(self, other)
        return Operator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other: Operator) -> Operator:
        _same_layout(self, other)
        return Operator(self.layout, self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> Operator:
        return Operator(self.layout, self.matrix * scalar)

    __rmul__ = __mul__


def _same_layout(a, b):
    if a.layout != b.layout:
        raise ValueError(f"layout mismatch: {a.layout} vs {b.layout}")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    layout: HilbertLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = self.layout.total_dim
        if m.shape != (d, d):
            raise ValueError(f"density matrix shape {m.shape} does not match layout dimension {d}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def validate(self, trace_tol=1e-9, herm_tol=1e-10, psd_tol=1e-8) -> None:
        """Raise ``ValueError`` unless the matrix is a physical state."""
        m = self.matrix
        if abs(np.trace(m) - 1.0) > trace_tol:
            raise ValueError(f"trace {np.trace(m):.12g} differs from 1 by more than {trace_tol}")
        dev = np.max(np.abs(m - m.conj().T))
        if dev > herm_tol:
            raise ValueError(f"non-Hermitian state: max|rho - rho^dag| = {dev:.3g}")
        lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()
        if lam < -psd_tol:
            raise ValueError(f"state not positive semidefinite: min eigenvalue {lam:.3g}")

    def expect(self, op: Operator | np.ndarray) -> complex:
        a = op.matrix if isinstance(op, Operator) else op
        # Tr(A rho) without forming the product
        return complex(np.sum(a.T * self.matrix))

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()


def _embed_mechanics(layout: HilbertLayout, m: np.ndarray) -> np.ndarray:
    return np.kron(m, np.eye(layout.tls_dim))


def _embed_tls(layout: HilbertLayout, k: int, s: np.ndarray) -> np.ndarray:
    if not 1 <= k <= layout.n_tls:
        raise IndexError(f"TLS index {k} out of range 1..{layout.n_tls}")
    left = np.eye(layout.n_fock * 2 ** (k - 1))
    right = np.eye(2 ** (layout.n_tls - k))
    return np.kron(np.kron(left, s), right)


def fock_lowering(n_fock: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_fock, dtype=float)), 1)


SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]])
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]])
# +1 on the excited state
PAULI_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)


def annihilation_op(layout: HilbertLayout) -> Operator:
    return Operator(layout, _embed_mechanics(layout, fock_lowering(layout.n_fock)).astype(complex))


def number_op(layout: HilbertLayout) -> Operator:
    return Operator(layout, np.diag(layout.fock_index.astype(complex)), hermitian=True)


def tls_lowering_op(layout: HilbertLayout, k: int) -> Operator:
    """Lowering operator of TLS ``k`` (1-based)."""
    return Operator(layout, _embed_tls(layout, k, SIGMA_MINUS).astype(complex))


def tls_pauli_ops(layout: HilbertLayout, k: int) -> tuple[Operator, Operator, Operator]:
    return tuple(
        Operator(layout, _embed_tls(layout, k, p), hermitian=True)
        for p in (PAULI_X, PAULI_Y, PAULI_Z)
    )


def mechanics_displacement(n_fock: int, alpha: complex) -> np.ndarray:
    """exp(alpha b^dag - alpha* b) on the bare truncated Fock space.

    The generator is anti-Hermitian, so ``i*G`` is diagonalised with ``eigh``
    and the exponential is exactly unitary up to rounding.
    """
    b = fock_lowering(n_fock)
    gen = alpha * b.T - np.conj(alpha) * b
    w, v = np.linalg.eigh(1j * gen)
    return (v * np.exp(-1j * w)) @ v.conj().T


def displacement_operator(layout: HilbertLayout, alpha: complex, check: bool = True) -> Operator:
    if check:
        check_truncation(alpha, layout.n_max)
    return Operator(layout, _embed_mechanics(layout, mechanics_displacement(layout.n_fock, alpha)))


def thermal_occupations(n_fock: int, n_th: float) -> np.ndarray:
    """Geometric distribution n_th^n / (1+n_th)^(n+1), truncated and renormalised."""
    if n_th < 0:
        raise ValueError(f"n_th must be >= 0, got {n_th}")
    n = np.arange(n_fock)
    p = (n_th / (1.0 + n_th)) ** n / (1.0 + n_th)
    return p / p.sum()


def tls_excited_population(n_th: float, convention: str = "boltzmann") -> float:
    """Excited-state population of a TLS 'populated to a level n_th'.

    ``boltzmann``: n_th/(1+n_th), the two-level Boltzmann factor at the bosonic
    temperature.  ``steady``: n_th/(1+2 n_th), the fixed point of the emission and
    absorption collapse operators.
    """
    if n_th < 0:
        raise ValueError(f"n_th must be >= 0, got {n_th}")
    if convention == "boltzmann":
        return n_th / (1.0 + n_th)
    if convention == "steady":
        return n_th / (1.0 + 2.0 * n_th)
    raise ValueError(f"unknown TLS thermal convention {convention!r}")


def thermal_state(layout: HilbertLayout, n_th: float, tls_convention: str = "boltzmann") -> DensityMatrix:
    p_mech = thermal_occupations(layout.n_fock, n_th)
    p_e = tls_excited_population(n_th, tls_convention)
    diag = p_mech
    for _ in range(layout.n_tls):
        diag = np.kron(diag, np.array([1.0 - p_e, p_e]))
    return DensityMatrix(layout, np.diag(diag.astype(complex)))


def pure_state(layout: HilbertLayout, ket: np.ndarray) -> DensityMatrix:
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    return DensityMatrix(layout, np.outer(ket, ket.conj()))


def basis_ket(layout: HilbertLayout, n: int, tls: tuple[int, ...] = ()) -> np.ndarray:
    """Product basis ket |n, s_1, ..., s_N>; missing TLS entries default to ground."""
    tls = tuple(tls) + (0,) * (layout.n_tls - len(tls))
    idx = n
    for s in tls:
        idx = idx * 2 + s
    ket = np.zeros(layout.total_dim, dtype=complex)
    ket[idx] = 1.0
    return ket


def partial_trace_mechanics(rho: DensityMatrix | np.ndarray, layout: HilbertLayout | None = None) -> np.ndarray:
    """Reduced (n_max+1)x(n_max+1) state of the mechanical mode."""
    if isinstance(rho, DensityMatrix):
        layout, m = rho.layout, rho.matrix
    else:
        m = rho
    f, t = layout.n_fock, layout.tls_dim
    return np.einsum("iaja->ij", m.reshape(f, t, f, t))


def reduced_tls_state(rho: DensityMatrix | np.ndarray, k: int, layout: HilbertLayout | None = None) -> np.ndarray:
    """2x2 reduced state of TLS ``k`` (1-based)."""
    if isinstance(rho, DensityMatrix):
        layout, m = rho.layout, rho.matrix
    else:
        m = rho
    if not 1 <= k <= layout.n_tls:
        raise IndexError(f"TLS index {k} out of range 1..{layout.n_tls}")
    left = layout.n_fock * 2 ** (k - 1)
    right = 2 ** (layout.n_tls - k)
    return np.einsum("asbatb->st", m.reshape(left, 2, right, left, 2, right))
