"""Classical polarization tracking: polarimeter fractions, angle extraction,
reference fidelity, the EPC transfer model and the greedy feedback optimizer.

The polarimeter launches |H> and |D> and records powers in the H, V, D and A
projections. From the fractional powers the generic unitary angles follow in
closed form; the reference fidelity to the identity target is then
cos^2(theta/2) cos^2((psi + lam)/2).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .channels import process_fidelity_unitary
from .errors import DomainError
from .qubit import I2, SX, SY, UnitaryParams, unitary_from_params, wrap_angle

POWER_FLOOR = 1e-12
# sin(theta) below this makes psi and lam 0/0 in the closed-form inversion
DEGENERATE_SIN = 1e-3
# predicted-vs-measured f_DD difference treated as a tie between branches
BRANCH_TIE = 1e-12

F_TH = 0.98


class NoLightError(DomainError):
    """A polarimeter projection pair carries (almost) no power."""


@dataclass(frozen=True)
class PowerReadings:
    """Powers P(Y|X); ``h`` holds (H, V, D, A) projections for input |H>, ``d`` for |D>."""

    h: tuple
    d: tuple

    def __post_init__(self):
        for arr in (self.h, self.d):
            if len(arr) != 4 or min(arr) < 0:
                raise DomainError("need four nonnegative powers per input")


@dataclass(frozen=True)
class FractionSet:
    f_hh: float
    f_dh: float
    f_hd: float
    f_dd: float | None = None


def _ratio(a, b, floor):
    if a + b <= floor:
        raise NoLightError("no light in a projection pair")
    return min(1.0, max(0.0, a / (a + b)))


def fractions_from_powers(r: PowerReadings, power_floor: float = POWER_FLOOR) -> FractionSet:
    hH, vH, dH, aH = r.h
    hD, vD, dD, aD = r.d
    floor = power_floor * max(max(r.h), max(r.d), 1e-300)
    return FractionSet(
        f_hh=_ratio(hH, vH, floor),
        f_dh=_ratio(dH, aH, floor),
        f_hd=_ratio(hD, vD, floor),
        f_dd=_ratio(dD, aD, floor),
    )


def ideal_fractions(U) -> FractionSet:
    """Noise-free fractions of a unitary channel."""
    from .qubit import basis_ket

    U = np.asarray(U, dtype=complex)
    out = {}
    for x in "HD":
        psi = U @ basis_ket(x)
        for y in "HVDA":
            out[y + x] = abs(basis_ket(y).conj() @ psi) ** 2
    return fractions_from_powers(
        PowerReadings(
            h=tuple(out[y + "H"] for y in "HVDA"),
            d=tuple(out[y + "D"] for y in "HVDA"),
        )
    )


def _clamp(v):
    return min(1.0, max(-1.0, v))


def predicted_f_dd(theta: float, psi: float, lam: float) -> float:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    amp = (c - np.exp(1j * lam) * s + np.exp(1j * psi) * s + np.exp(1j * (psi + lam)) * c) / 2
    return float(abs(amp) ** 2)


def params_from_fractions(f: FractionSet) -> UnitaryParams:
    theta = 2.0 * np.arccos(np.sqrt(min(1.0, max(0.0, f.f_hh))))
    if np.sin(theta) < DEGENERATE_SIN:
        if f.f_dd is None:
            return UnitaryParams(float(theta), 0.0, 0.0)
        if theta < np.pi / 2:
            # U ~ diag(1, e^{i(psi+lam)}): f_DD = cos^2((psi+lam)/2)
            lam = np.arccos(_clamp(2 * f.f_dd - 1))
        else:
            # U ~ antidiagonal: f_DD = sin^2((psi-lam)/2)
            lam = np.arccos(_clamp(1 - 2 * f.f_dd))
        return UnitaryParams(float(theta), 0.0, wrap_angle(lam))
    denom = 2 * np.cos(theta / 2) * np.sin(theta / 2)
    psi = float(np.arccos(_clamp((2 * f.f_dh - 1) / denom)))
    lam = float(np.arccos(_clamp((1 - 2 * f.f_hd) / denom)))
    if f.f_dd is not None:
        # (psi, lam) and (psi, -lam) give the same H/D fractions but different f_DD
        e_pr = abs(predicted_f_dd(theta, psi, lam) - f.f_dd)
        e_mx = abs(predicted_f_dd(theta, psi, -lam) - f.f_dd)
        if e_mx < e_pr - BRANCH_TIE:
            lam = -lam
    return UnitaryParams(float(theta), wrap_angle(psi), wrap_angle(lam))


def identity_fidelity(p: UnitaryParams) -> float:
    """cos^2(theta/2) cos^2((psi + lam)/2): process fidelity of U(p) to the identity."""
    return float(np.cos(p.theta / 2) ** 2 * np.cos((p.psi + p.lam) / 2) ** 2)


def stokes_fidelity(f: FractionSet) -> float:
    """Fidelity to the identity from the Stokes-sphere rotation R.

    The H and D launches give the first two columns of R; the third is their
    cross product, so F = (1 + Tr R)/4 follows without inverting angles.
    Equal to ``identity_fidelity(params_from_fractions(f))`` for exact
    fractions, but stays well conditioned near the identity where psi and lam
    are individually undetermined and power noise makes the angle route jump.
    """
    if f.f_dd is None:
        raise DomainError("stokes_fidelity needs f_DD")
    r11, r21 = 2 * f.f_hh - 1, 2 * f.f_dh - 1
    r12, r22 = 2 * f.f_hd - 1, 2 * f.f_dd - 1
    return float(min(1.0, max(0.0, (1 + r11 + r22 + r11 * r22 - r12 * r21) / 4)))


def reference_fidelity(f: FractionSet, T=None) -> float:
    p = params_from_fractions(f)
    if T is None:
        return identity_fidelity(p)
    return process_fidelity_unitary(unitary_from_params(p), T)


# ---------------------------------------------------------------------------
# electronic polarization controller

EPC_AXES = (SX, SY, SX, SY)


@dataclass(frozen=True)
class EpcConfig:
    gain: float = 0.5  # rad / V
    v_max: float = 5.0
    step_max: float = 0.5
    step_min: float = 0.01
    kick_sigma: float | None = None  # default 0.1 v_max
    f_th: float = F_TH
    step_grow: float = 2.0  # factor applied to the step after an improving sweep

    @property
    def kick(self) -> float:
        return 0.1 * self.v_max if self.kick_sigma is None else self.kick_sigma


@dataclass(frozen=True)
class EpcState:
    voltages: tuple
    step: float
    stagnation_count: int = 0

    @classmethod
    def start(cls, cfg: EpcConfig = EpcConfig(), voltages=(0.0, 0.0, 0.0, 0.0)):
        return cls(tuple(float(v) for v in voltages), cfg.step_max, 0)


def epc_unitary(voltages, gain: float = 0.5, v_max: float = 5.0) -> np.ndarray:
    """Product of four waveplate stages, stage 1 acting first."""
    v = np.asarray(voltages, dtype=float)
    if v.shape != (4,):
        raise DomainError("EPC has four channels")
    if np.any(np.abs(v) > v_max + 1e-12):
        raise DomainError(f"EPC voltage outside [-{v_max}, {v_max}]")
    U = I2
    for vi, ax in zip(v, EPC_AXES):
        h = gain * vi / 2
        U = (np.cos(h) * I2 - 1j * np.sin(h) * ax) @ U
    return U


@dataclass(frozen=True)
class StepOutcome:
    state: EpcState
    event: str  # none | improve | shrink | kick
    fidelity: float


def optimizer_step(
    st: EpcState,
    probe: Callable[[tuple], float],
    rng: np.random.Generator,
    cfg: EpcConfig = EpcConfig(),
    f_current: float | None = None,
) -> StepOutcome:
    """One sweep of the greedy coordinate search.

    Channels are tried at ``v_i +/- step`` in round-robin order and the best
    strictly improving candidate is accepted and the step grows by
    ``step_grow`` (capped at ``step_max``). A sweep without improvement
    halves the step; once the step drops below ``step_min`` every channel
    gets a Gaussian kick and the step resets to ``step_max``. Nothing is
    done while the current fidelity already meets the threshold.
    """
    f0 = probe(st.voltages) if f_current is None else f_current
    if f0 >= cfg.f_th:
        return StepOutcome(st, "none", f0)

    best_f, best_v = f0, None
    for i in range(4):
        for sgn in (1.0, -1.0):
            v = list(st.voltages)
            target = v[i] + sgn * st.step
            if abs(target) > cfg.v_max:
                # saturated channel: clipped move counts as non-improving
                continue
            v[i] = target
            v = tuple(v)
            f = probe(v)
            if f > best_f:
                best_f, best_v = f, v

    if best_v is not None:
        step = min(cfg.step_max, st.step * cfg.step_grow)
        return StepOutcome(EpcState(best_v, step, 0), "improve", best_f)

    step = st.step / 2
    if step >= cfg.step_min:
        return StepOutcome(replace(st, step=step, stagnation_count=st.stagnation_count + 1), "shrink", f0)
    kicked = np.clip(np.asarray(st.voltages) + rng.normal(0.0, cfg.kick, 4), -cfg.v_max, cfg.v_max)
    return StepOutcome(EpcState(tuple(float(v) for v in kicked), cfg.step_max, 0), "kick", f0)
