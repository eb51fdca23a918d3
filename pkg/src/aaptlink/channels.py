"""CPTP qubit channels in Kraus and Choi form.

The Choi matrix of a channel ``E`` on a ``d``-level system is

    Phi = (1/d) sum_{m,n} |m><n| (x) E(|m><n|),

so it has unit trace and its partial trace over the output factor is I/d.
Kraus sets are not unique; compare channels through their Choi matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .qubit import (
    ATOL,
    I2,
    PAULIS,
    SQ2,
    UnitaryParams,
    bell_state,
    is_unitary,
    unitary_from_params,
    wrap_angle,
)

# Negative probabilities / eigenvalues down to this size are round-off.
CLAMP_ATOL = 1e-12
# Choi eigenvalues below this are dropped when re-extracting Kraus operators.
KRAUS_EIG_CUTOFF = 1e-12

PHI_PLUS = bell_state("phi+")


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """A CPTP map given by Kraus operators ``ops`` of shape (k, d, d)."""

    ops: np.ndarray

    def __post_init__(self):
        ops = np.asarray(self.ops, dtype=complex)
        if ops.ndim == 2:
            ops = ops[None]
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
            raise DomainError("Kraus operators must be square matrices of one size")
        d = ops.shape[1]
        if not 1 <= ops.shape[0] <= d * d:
            raise DomainError(f"need between 1 and {d * d} Kraus operators, got {ops.shape[0]}")
        object.__setattr__(self, "ops", ops)
        if not self.is_cptp():
            raise DomainError(f"Kraus set is not trace preserving (error {self.completeness_error():.2e})")

    @property
    def dim(self) -> int:
        return self.ops.shape[1]

    def completeness_error(self) -> float:
        """Max-norm deviation of sum_k A_k^dag A_k from the identity."""
        s = np.einsum("kji,kjl->il", self.ops.conj(), self.ops)
        return float(np.abs(s - np.eye(self.dim)).max())

    def is_cptp(self, atol: float = ATOL) -> bool:
        return self.completeness_error() <= atol


def unitary_channel(U) -> KrausChannel:
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U):
        raise DomainError("unitary_channel needs a unitary matrix")
    return KrausChannel(U[None])


def identity_channel(d: int = 2) -> KrausChannel:
    return KrausChannel(np.eye(d, dtype=complex)[None])


def depolarizing(p: float) -> KrausChannel:
    """Qubit depolarizing channel ``rho -> (1-p) rho + p I/2``."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"depolarizing probability {p} outside [0, 1]")
    ops = np.concatenate(
        [np.sqrt(1 - 3 * p / 4) * I2[None], (np.sqrt(p) / 2) * PAULIS]
    )
    return KrausChannel(ops)


def _check_dims(ch: KrausChannel, rho: np.ndarray, factor: int):
    if rho.shape != (factor * ch.dim, factor * ch.dim):
        raise DomainError(f"state of shape {rho.shape} does not fit a {ch.dim}-level channel")


def apply(ch: KrausChannel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    _check_dims(ch, rho, 1)
    A = ch.ops
    return np.einsum("kij,jl,kml->im", A, rho, A.conj())


def extend_apply(ch: KrausChannel, rho_ab) -> np.ndarray:
    """``(1 (x) E)(rho_ab)`` with the channel on the second (probe) factor."""
    rho = np.asarray(rho_ab, dtype=complex)
    _check_dims(ch, rho, ch.dim)
    d = ch.dim
    ext = np.stack([np.kron(np.eye(d), A) for A in ch.ops])
    return np.einsum("kij,jl,kml->im", ext, rho, ext.conj())


def measurement_probability(ch: KrausChannel, rho_ab, phi) -> float:
    phi = np.asarray(phi, dtype=complex)
    out = extend_apply(ch, rho_ab)
    p = float(np.real(phi.conj() @ out @ phi))
    return min(1.0, max(0.0, p))


def _choi_of_ops(ops: np.ndarray) -> np.ndarray:
    d = ops.shape[-1]
    # c_k[(m, i)] = A_k[i, m]: column-stacked Kraus operators
    c = np.swapaxes(ops, -1, -2).reshape(ops.shape[:-2] + (d * d,))
    return np.einsum("...ka,...kb->...ab", c, c.conj()) / d


def choi(ch: KrausChannel) -> np.ndarray:
    return _choi_of_ops(ch.ops)


def choi_from_map(E, d: int = 2) -> np.ndarray:
    """Choi matrix of an arbitrary linear map by evaluating it on |m><n|."""
    out = np.zeros((d * d, d * d), dtype=complex)
    for m in range(d):
        for n in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[m, n] = 1.0
            out += np.kron(e, E(e))
    return out / d


def kraus_from_choi(phi, d: int = 2) -> KrausChannel:
    phi = np.asarray(phi, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (phi + phi.conj().T))
    if w.min() < -CLAMP_ATOL:
        raise DomainError(f"Choi matrix has negative eigenvalue {w.min():.3e}")
    keep = w > KRAUS_EIG_CUTOFF
    c = v[:, keep] * np.sqrt(d * w[keep])
    ops = np.swapaxes(c.T.reshape(-1, d, d), 1, 2)
    return KrausChannel(ops)


def partial_trace_output(phi, d: int = 2) -> np.ndarray:
    return np.einsum("aibi->ab", np.asarray(phi).reshape(d, d, d, d))


def is_choi(phi, d: int = 2, atol: float = ATOL) -> bool:
    phi = np.asarray(phi)
    if phi.shape != (d * d, d * d) or not np.allclose(phi, phi.conj().T, atol=atol, rtol=0):
        return False
    if np.linalg.eigvalsh(phi).min() < -atol or abs(np.trace(phi) - 1) > atol:
        return False
    return np.allclose(partial_trace_output(phi, d), np.eye(d) / d, atol=1e-8, rtol=0)


def process_fidelity_unitary(U, T=None) -> float:
    U = np.asarray(U, dtype=complex)
    T = np.eye(U.shape[0], dtype=complex) if T is None else np.asarray(T, dtype=complex)
    if not (is_unitary(U) and is_unitary(T)) or U.shape != T.shape:
        raise DomainError("process_fidelity_unitary needs two unitaries of equal size")
    d = U.shape[0]
    return float(abs(np.trace(T.conj().T @ U)) ** 2 / d**2)


def process_fidelity_kraus(ch: KrausChannel, T=None) -> float:
    d = ch.dim
    T = np.eye(d, dtype=complex) if T is None else np.asarray(T, dtype=complex)
    if T.shape != (d, d) or not is_unitary(T):
        raise DomainError("target must be a unitary of the channel dimension")
    tr = np.einsum("ji,kji->k", T.conj(), ch.ops)
    f = float(np.sum(np.abs(tr) ** 2) / d**2)
    return min(1.0, max(0.0, f))


def choi_fidelity(phi, T=None) -> float:
    """Process fidelity to a unitary target read off a Choi matrix.

    Equals :func:`process_fidelity_kraus` for any Kraus set of the channel.
    """
    phi = np.asarray(phi, dtype=complex)
    d = int(round(np.sqrt(phi.shape[0])))
    T = np.eye(d, dtype=complex) if T is None else np.asarray(T, dtype=complex)
    w = T.T.reshape(d * d) / np.sqrt(d)
    return float(min(1.0, max(0.0, np.real(w.conj() @ phi @ w))))


def choi_purity(phi) -> float:
    phi = np.asarray(phi, dtype=complex)
    return float(np.real(np.einsum("ab,ba->", phi, phi)))


def compose(later: KrausChannel, earlier: KrausChannel) -> KrausChannel:
    """Channel ``later o earlier`` (``earlier`` acts first).

    The pairwise products are reduced to a minimal Kraus set through the
    Choi eigendecomposition, so repeated composition stays at <= d^2 operators.
    """
    if later.dim != earlier.dim:
        raise DomainError("cannot compose channels of different dimension")
    d = later.dim
    ops = np.einsum("jab,kbc->jkac", later.ops, earlier.ops).reshape(-1, d, d)
    return kraus_from_choi(_choi_of_ops(ops), d)


def local_rotate_choi(phi, V) -> np.ndarray:
    """``(1 (x) V) Phi (1 (x) V^dag)``."""
    V = np.asarray(V, dtype=complex)
    W = np.kron(np.eye(V.shape[0]), V)
    return W @ np.asarray(phi, dtype=complex) @ W.conj().T


def _gauge_objective(phi, thetas, psis, lams):
    c = np.cos(thetas / 2)
    s = np.sin(thetas / 2)
    V = np.empty(thetas.shape + (2, 2), dtype=complex)
    V[..., 0, 0] = c
    V[..., 0, 1] = -np.exp(1j * lams) * s
    V[..., 1, 0] = np.exp(1j * psis) * s
    V[..., 1, 1] = np.exp(1j * (psis + lams)) * c
    # <phi+|(1 (x) V) Phi (1 (x) V^dag)|phi+> = w^dag Phi w with w = conj(V).ravel()/sqrt2
    w = np.conj(V).reshape(thetas.shape + (4,)) * SQ2
    return np.real(np.einsum("...a,ab,...b->...", w.conj(), phi, w))


def gauge_fix(series: Sequence[np.ndarray], grid: int = 16, tol: float = 1e-7):
    """Remove the local-unitary freedom of a Choi-matrix time series.

    A single unitary ``V`` is chosen to maximize the overlap of the *last*
    element with |phi+><phi+|, then applied to every element.

    Returns
    -------
    V : ndarray (2, 2)
    corrected : list of ndarray
    """
    series = [np.asarray(p, dtype=complex) for p in series]
    if not series:
        raise DomainError("gauge_fix needs at least one Choi matrix")
    last = series[-1]

    th = np.linspace(0.0, np.pi, grid)
    ang = np.arange(grid) * (2 * np.pi / grid)
    T, P, L = np.meshgrid(th, ang, ang, indexing="ij")
    vals = _gauge_objective(last, T, P, L)
    i = np.unravel_index(np.argmax(vals), vals.shape)
    x = np.array([T[i], P[i], L[i]])
    best = vals[i]

    step = np.pi / (grid - 1)
    while step >= tol:
        improved = False
        for k in range(3):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[k] += sgn * step
                if k == 0:
                    y[0] = min(np.pi, max(0.0, y[0]))
                f = _gauge_objective(last, *(np.array(v) for v in y))
                if f > best:
                    x, best, improved = y, f, True
        if not improved:
            step /= 2

    V = unitary_from_params(UnitaryParams(float(x[0]), wrap_angle(x[1]), wrap_angle(x[2])))
    return V, [local_rotate_choi(p, V) for p in series]


def choi_record(phi, label: str = "", gauge: str = "raw") -> dict:
    """Portable record of a Choi matrix: row-major (real, imag) pairs."""
    phi = np.asarray(phi, dtype=complex)
    return {
        "dim": int(phi.shape[0]),
        "entries": [[float(z.real), float(z.imag)] for z in phi.ravel()],
        "metadata": {"label": label, "gauge": gauge},
    }


def choi_from_record(rec: dict) -> np.ndarray:
    d = int(rec["dim"])
    flat = np.array([complex(re, im) for re, im in rec["entries"]])
    if flat.size != d * d:
        raise DomainError("Choi record entry count does not match its dimension")
    return flat.reshape(d, d)


def composed_unitary_depol(U, p: float) -> KrausChannel:
    """``depolarizing(p) o {U}`` without the re-extraction detour."""
    return KrausChannel(depolarizing(p).ops @ np.asarray(U, dtype=complex))
