"""Small-dimension complex linear algebra and polarization states.

Matrices and states are plain ``numpy`` complex arrays. Two-qubit objects use
the basis ordering (HH, HV, VH, VV): the first (ancilla) factor is the most
significant index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError

# Structural checks (hermiticity, unitarity, trace) and roundtrip tolerance.
ATOL = 1e-10
ROUNDTRIP_ATOL = 1e-9
# Below this magnitude a matrix element of U is treated as exactly zero
# when deciding whether (psi, lam) are separately identifiable.
DEGENERATE_ATOL = 1e-12

TWO_PI = 2.0 * np.pi
SQ2 = 1.0 / np.sqrt(2.0)

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([SX, SY, SZ])

_KETS = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([SQ2, SQ2], dtype=complex),
    "A": np.array([SQ2, -SQ2], dtype=complex),
    "R": np.array([SQ2, 1j * SQ2], dtype=complex),
    "L": np.array([SQ2, -1j * SQ2], dtype=complex),
}


@dataclass(frozen=True)
class UnitaryParams:
    """Angles of the generic single-qubit unitary.

    ``theta`` lies in [0, pi]; ``psi`` and ``lam`` in [0, 2 pi).
    """

    theta: float
    psi: float
    lam: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise DomainError(f"theta={self.theta} outside [0, pi]")
        for name in ("psi", "lam"):
            v = getattr(self, name)
            if not (0.0 <= v < TWO_PI):
                raise DomainError(f"{name}={v} outside [0, 2pi)")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.theta, self.psi, self.lam)


def wrap_angle(x: float) -> float:
    """Map an angle into [0, 2 pi)."""
    y = float(np.mod(x, TWO_PI))
    # np.mod can return exactly 2pi for tiny negative inputs
    return 0.0 if y >= TWO_PI else y


def unitary_from_params(p: UnitaryParams) -> np.ndarray:
    c = np.cos(p.theta / 2)
    s = np.sin(p.theta / 2)
    return np.array(
        [
            [c, -np.exp(1j * p.lam) * s],
            [np.exp(1j * p.psi) * s, np.exp(1j * (p.psi + p.lam)) * c],
        ],
        dtype=complex,
    )


def params_from_unitary(U) -> tuple[UnitaryParams, float]:
    """Invert :func:`unitary_from_params` up to a global phase.

    Returns ``(params, phase)`` with ``exp(1j*phase) * unitary_from_params(params)``
    equal to ``U``. When ``theta`` is 0 or pi only one combination of
    ``psi`` and ``lam`` is identifiable; ``psi`` is then reported as 0.
    """
    U = np.asarray(U, dtype=complex)
    if U.shape != (2, 2) or not is_unitary(U):
        raise DomainError("params_from_unitary needs a 2x2 unitary")
    a00, a10 = abs(U[0, 0]), abs(U[1, 0])
    theta = 2.0 * np.arctan2(a10, a00)
    if a10 < DEGENERATE_ATOL:
        # theta = 0: U = e^{i phase} diag(1, e^{i(psi+lam)})
        phase = np.angle(U[0, 0])
        psi, lam = 0.0, np.angle(U[1, 1]) - phase
        theta = 0.0
    elif a00 < DEGENERATE_ATOL:
        # theta = pi: phase absorbs psi, only psi - lam survives
        phase = np.angle(U[1, 0])
        psi, lam = 0.0, np.angle(-U[0, 1]) - phase
        theta = np.pi
    else:
        phase = np.angle(U[0, 0])
        psi = np.angle(U[1, 0]) - phase
        lam = np.angle(-U[0, 1]) - phase
    return UnitaryParams(float(theta), wrap_angle(psi), wrap_angle(lam)), wrap_angle(phase)


def basis_ket(label: str) -> np.ndarray:
    try:
        return _KETS[label].copy()
    except KeyError:
        raise DomainError(f"unknown polarization label {label!r}") from None


def product_ket(labels: str) -> np.ndarray:
    """Ket for a string of single-qubit labels, e.g. ``"HV"`` -> |H>|V>."""
    out = np.ones(1, dtype=complex)
    for ch in labels:
        out = np.kron(out, basis_ket(ch))
    return out


def tensor(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise DomainError("tensor needs two vectors or two matrices")
    return np.kron(a, b)


def projector(ket) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def bell_state(name: str) -> np.ndarray:
    """Bell kets ``phi+``, ``phi-``, ``psi+``, ``psi-`` in (HH, HV, VH, VV) order."""
    vecs = {
        "phi+": [1, 0, 0, 1],
        "phi-": [1, 0, 0, -1],
        "psi+": [0, 1, 1, 0],
        "psi-": [0, 1, -1, 0],
    }
    if name not in vecs:
        raise DomainError(f"unknown Bell state {name!r}")
    return SQ2 * np.array(vecs[name], dtype=complex)


def dagger(M) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def is_hermitian(M, atol: float = ATOL) -> bool:
    M = np.asarray(M)
    return M.ndim == 2 and M.shape[0] == M.shape[1] and np.allclose(M, M.conj().T, atol=atol, rtol=0)


def is_unitary(M, atol: float = ATOL) -> bool:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    return np.allclose(M.conj().T @ M, np.eye(M.shape[0]), atol=atol, rtol=0)


def is_positive_semidefinite(M, atol: float = ATOL) -> bool:
    if not is_hermitian(M, atol):
        return False
    return bool(np.linalg.eigvalsh(np.asarray(M)).min() >= -atol)


def is_density_matrix(rho, atol: float = ATOL) -> bool:
    rho = np.asarray(rho)
    return is_positive_semidefinite(rho, atol) and abs(np.trace(rho) - 1.0) <= atol


def check_density_matrix(rho, atol: float = ATOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if not is_density_matrix(rho, atol):
        raise DomainError("not a valid density matrix")
    return rho


def herm_inv_sqrt(M, min_eig: float = 1e-12) -> np.ndarray:
    """Inverse square root ``M^{-1/2}`` of a Hermitian positive-definite matrix."""
    M = np.asarray(M, dtype=complex)
    if not is_hermitian(M):
        raise DomainError("herm_inv_sqrt needs a Hermitian matrix")
    w, v = np.linalg.eigh(M)
    if w.min() <= min_eig:
        raise SingularityError(f"smallest eigenvalue {w.min():.3e} too close to zero")
    return (v / np.sqrt(w)) @ v.conj().T


def state_fidelity(psi, rho) -> float:
    """Overlap ``<psi|rho|psi>`` clamped to [0, 1]."""
    psi = np.asarray(psi, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (psi.size, psi.size):
        raise DomainError("state and density matrix dimensions differ")
    f = np.real(psi.conj() @ rho @ psi)
    return float(min(1.0, max(0.0, f)))


def rotation(axis, angle: float) -> np.ndarray:
    """``exp(-i angle n.sigma / 2)`` for a unit 3-vector ``axis``."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * np.tensordot(n, PAULIS, axes=1)


def rotation_vector(vec) -> np.ndarray:
    """``exp(-i v.sigma / 2)``; the rotation angle is ``|v|``."""
    v = np.asarray(vec, dtype=float)
    angle = np.linalg.norm(v)
    if angle == 0.0:
        return I2.copy()
    return rotation(v / angle, angle)


def reunitarize(U) -> np.ndarray:
    """Closest unitary via the polar decomposition (kills round-off drift)."""
    u, _, vh = np.linalg.svd(U)
    return u @ vh


def random_unitary(rng: np.random.Generator, d: int = 2) -> np.ndarray:
    """Haar-random unitary by QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph
