"""Seeded simulation of a drifting fiber link with feedback and AAPT counting.

Time advances in tracker ticks. Every tick is one polarimeter probe; the
feedback optimizer consumes one tick per candidate setting it tries, so the
EPC physically sits at the candidate voltages while it is being probed.

Random draws come from a single generator, per tick in the order: drift,
perturbation axes, polarimeter noise (H input then D input), coincidence
counts for any projector record that closes during the tick, optimizer kick.

The classical reference is narrowband and bright: it sees the unitary part
of the link only. The loop's F_R uses the Stokes-rotation form, which
matches the angle route without noise but does not blow up near the
identity. Depolarization and the optional receiver misalignment act
on the quantum arm.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .aapt import PROJECTORS, MeasurementRecord, projector_operators
from .channels import (
    KrausChannel,
    choi,
    choi_fidelity,
    choi_purity,
    choi_record,
    compose,
    depolarizing,
    unitary_channel,
)
from .config import ScenarioConfig
from .qubit import (
    UnitaryParams,
    basis_ket,
    projector,
    random_unitary,
    reunitarize,
    rotation,
    rotation_vector,
    unitary_from_params,
)
from .tracker import (
    EpcConfig,
    EpcState,
    NoLightError,
    PowerReadings,
    epc_unitary,
    fractions_from_powers,
    optimizer_step,
    params_from_fractions,
    stokes_fidelity,
)

@dataclass(frozen=True)
class TrueChannelState:
    U: np.ndarray
    time_s: float = 0.0


def drift_step(st: TrueChannelState, dt: float, sigma: float, rng: np.random.Generator) -> TrueChannelState:
    """Random-walk birefringence: a rotation with Normal(0, sigma^2 dt) components."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = rng.normal(0.0, sigma * np.sqrt(dt), 3)
    if sigma == 0.0:
        return TrueChannelState(st.U, st.time_s + dt)
    return TrueChannelState(reunitarize(rotation_vector(delta) @ st.U), st.time_s + dt)


def perturb(st: TrueChannelState, magnitude: float, rng: np.random.Generator) -> TrueChannelState:
    """Rotate by ``magnitude`` about a uniformly random axis."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    if magnitude == 0.0:
        return st
    return TrueChannelState(reunitarize(rotation(axis, magnitude) @ st.U), st.time_s)


def true_channel(st: TrueChannelState, voltages, p: float, gain: float = 0.5, v_max: float = 5.0) -> KrausChannel:
    U = epc_unitary(voltages, gain, v_max) @ st.U
    return compose(depolarizing(p), unitary_channel(U))


def source_state(eta: float = np.pi / 4, mix_eps: float = 0.0) -> np.ndarray:
    """(1-eps)|psi_eta><psi_eta| + eps I/4 with |psi_eta> = cos(eta)|HV> + sin(eta)|VH>."""
    ket = np.array([0, np.cos(eta), np.sin(eta), 0], dtype=complex)
    return (1 - mix_eps) * projector(ket) + mix_eps * np.eye(4) / 4


_Y_KETS = [basis_ket(y) for y in "HVDA"]
_Y_BRA = np.array(_Y_KETS).conj()


def classical_powers(ch: KrausChannel, x: str, rates, rng: np.random.Generator) -> tuple:
    """Noisy polarimeter powers P(Y|x) for Y in (H, V, D, A)."""
    from .channels import apply

    rho = apply(ch, projector(basis_ket(x)))
    noise = rng.normal(0.0, 1.0, 4) * rates.power_noise_rel
    out = []
    for y, n in zip(_Y_KETS, noise):
        p = float(np.real(y.conj() @ rho @ y))
        out.append(max(0.0, rates.classical_power * p * (1.0 + n)))
    return tuple(out)


def _unitary_powers(U, x: str, rates, rng) -> tuple:
    # same draws as classical_powers on {U}, without building a channel
    p = np.abs(_Y_BRA @ (U @ basis_ket(x))) ** 2
    noise = rng.normal(0.0, 1.0, 4) * rates.power_noise_rel
    return tuple(np.maximum(0.0, rates.classical_power * p * (1.0 + noise)).tolist())


def coincidence_count(segments, label: str, rho_in, rates, rng: np.random.Generator, start: float, tau: float, index: int = 0):
    """Poisson counts for one projector over a piecewise-constant channel trace.

    ``segments`` is a list of ``(choi_matrix, duration_s)`` covering the
    integration window.
    """
    (M,) = projector_operators(rho_in, [label])
    lam = 0.0
    for phi, dt in segments:
        p = max(0.0, float(np.real(np.trace(phi @ M))))
        lam += (rates.k_true * p + rates.background_rate) * dt
    n = int(rng.poisson(lam))
    return MeasurementRecord(label, n, start, tau, index), lam


# ---------------------------------------------------------------------------
# event stream

@dataclass
class EventStream:
    """Time-ordered simulation output: tracker ticks, projector records,
    ground-truth snapshots and scripted perturbations."""

    records: list = field(default_factory=list)

    def of_kind(self, kind: str) -> list:
        return [r for r in self.records if r["kind"] == kind]

    def measurements(self) -> list[MeasurementRecord]:
        return [
            MeasurementRecord(r["label"], r["counts"], r["start_time_s"], r["tau_s"], r["index"])
            for r in self.records
            if r["kind"] == "measurement"
        ]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, separators=(",", ":")) + "\n")

    @classmethod
    def read(cls, path) -> "EventStream":
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


class _Finished(Exception):
    pass


class _Simulator:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        t = cfg.tracker
        self.epc_cfg = EpcConfig(
            gain=t.gain, v_max=t.v_max, step_max=t.step_max, step_min=t.step_min,
            kick_sigma=t.kick_sigma, f_th=t.f_th, step_grow=t.step_grow,
        )
        self.dt = t.tick_s
        self.n_ticks = int(np.ceil(cfg.duration_s / self.dt - 1e-9))
        self.tick_index = 0
        U0 = random_unitary(self.rng) if cfg.initial == "random" else np.eye(2, dtype=complex)
        self.state = TrueChannelState(U0, 0.0)
        self.events = sorted(cfg.perturbation_events)
        self.next_event = 0
        self.rho_in = source_state(cfg.source.eta, cfg.source.mix_eps)
        self.M = projector_operators(self.rho_in, PROJECTORS)
        self.depol_ops = depolarizing(cfg.depol_p).ops
        self.rx = (
            unitary_from_params(UnitaryParams(*cfg.receiver_misalignment))
            if cfg.receiver_misalignment is not None
            else None
        )
        a = cfg.aapt
        self.period = a.period_s
        self.tau = a.tau_s
        self.rec_index = 0
        self.rec_lambda = 0.0
        self.out: list = []
        self.pending: list = []

    # quantum arm ---------------------------------------------------------
    def quantum_choi(self, U_tot) -> np.ndarray:
        V = U_tot if self.rx is None else self.rx @ U_tot
        return choi(KrausChannel(self.depol_ops @ V))

    def _accumulate_counts(self, t0: float, t1: float, U_tot) -> None:
        phi = None
        while True:
            start = self.rec_index * self.period
            end = start + self.tau
            if start >= t1 or end > self.cfg.duration_s + 1e-9:
                return
            if phi is None:
                phi = self.quantum_choi(U_tot)
            overlap = min(t1, end) - max(t0, start)
            if overlap > 0:
                p = max(0.0, float(np.real(np.einsum("ab,ba->", phi, self.M[self.rec_index % 16]))))
                self.rec_lambda += (self.cfg.rates.k_true * p + self.cfg.rates.background_rate) * overlap
            if end > t1 + 1e-12:
                return
            self._close_record(start, end, phi)

    def _close_record(self, start, end, phi):
        label = PROJECTORS[self.rec_index % len(PROJECTORS)]
        n = int(self.rng.poisson(self.rec_lambda))
        self.pending.append(
            {"kind": "measurement", "label": label, "counts": n, "start_time_s": start,
             "tau_s": self.tau, "index": self.rec_index, "expected": self.rec_lambda}
        )
        self.pending.append(
            {"kind": "truth", "time_s": end, "index": self.rec_index,
             "fq": choi_fidelity(phi), "purity": choi_purity(phi),
             "choi": choi_record(phi)["entries"]}
        )
        self.rec_index += 1
        self.rec_lambda = 0.0

    # one tick ------------------------------------------------------------
    def tick(self, voltages) -> float:
        if self.tick_index >= self.n_ticks:
            raise _Finished
        t0 = self.tick_index * self.dt
        t1 = min((self.tick_index + 1) * self.dt, self.cfg.duration_s)
        st = drift_step(self.state, t1 - t0, self.cfg.drift_sigma, self.rng)
        while self.next_event < len(self.events) and self.events[self.next_event][0] < t1:
            te, mag = self.events[self.next_event]
            st = perturb(st, mag, self.rng)
            self.pending.append({"kind": "perturbation", "time_s": te, "magnitude": mag})
            self.next_event += 1
        self.state = st

        U_tot = epc_unitary(voltages, self.epc_cfg.gain, self.epc_cfg.v_max) @ st.U
        readings = PowerReadings(
            h=_unitary_powers(U_tot, "H", self.cfg.rates, self.rng),
            d=_unitary_powers(U_tot, "D", self.cfg.rates, self.rng),
        )
        try:
            fr = fractions_from_powers(readings)
            params = params_from_fractions(fr)
            f_r = stokes_fidelity(fr)
        except NoLightError:
            params, f_r = UnitaryParams(0.0, 0.0, 0.0), 0.0
        self._accumulate_counts(t0, t1, U_tot)

        self.pending.insert(
            0,
            {"kind": "trace", "time_s": t0, "f_r": f_r, "theta": params.theta, "psi": params.psi,
             "lam": params.lam, "voltages": list(voltages), "step": None, "event": "none",
             "probe": False, "f_true": float(abs(U_tot[0, 0] + U_tot[1, 1]) ** 2 / 4)},
        )
        self._flush_into_buffer()
        self.tick_index += 1
        return f_r

    def _flush_into_buffer(self):
        self._buffer.extend(self.pending)
        self.pending = []

    def run(self) -> EventStream:
        epc = EpcState.start(self.epc_cfg)
        self._buffer = []
        try:
            while True:
                self._buffer = []
                f = self.tick(epc.voltages)
                step_before = epc.step
                outcome = None
                try:
                    if f < self.epc_cfg.f_th:
                        outcome = optimizer_step(epc, self.tick, self.rng, self.epc_cfg, f_current=f)
                        epc = outcome.state
                finally:
                    traces = [r for r in self._buffer if r["kind"] == "trace"]
                    for j, r in enumerate(traces):
                        r["step"] = step_before
                        r["probe"] = j > 0
                    if outcome is not None and traces:
                        traces[-1]["event"] = outcome.event
                    self.out.extend(self._buffer)
        except _Finished:
            pass
        return EventStream(self.out)


def run_scenario(cfg: ScenarioConfig) -> EventStream:
    cfg.validate()
    return _Simulator(cfg).run()
