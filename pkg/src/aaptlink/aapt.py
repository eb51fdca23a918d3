"""Bayesian ancilla-assisted process tomography.

A qubit channel is parameterized by 33 reals: four 2x2 complex matrices
``G_k`` (32 reals) normalized to a CPTP Kraus set, plus one flux parameter.
Under a standard normal prior on all 33 coordinates the posterior given
Poisson counts on 16 product projectors is sampled with a preconditioned
Crank-Nicolson chain. The prior is invariant under the pCN proposal, so
the Metropolis ratio involves only the likelihood.

The sampler is vectorized over chains: each chain owns its own generator
and dataset, so the result for a window never depends on which other
windows happen to share the batch.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._kernels import batch_loglik, choi_features, pcn_block
from .channels import KrausChannel, choi_fidelity, choi_purity
from .errors import DomainError, InsufficientCounts
from .qubit import basis_ket, bell_state, herm_inv_sqrt, projector

log = logging.getLogger(__name__)

D = 2
N_KRAUS = D * D
N_PARAMS = 2 * D**4 + 1  # 32 Kraus reals + flux
FLUX_SIGMA = 0.1
FLUX_FLOOR = 1e-6
P_FLOOR = 1e-12
# smallest eigenvalue of sum_k G_k^dag G_k accepted before the point is
# treated as zero likelihood
SINGULAR_EIG = 1e-12

PROJECTORS = (
    "HH", "HV", "HD", "HL", "VH", "VV", "VD", "VL",
    "DH", "DV", "DD", "DR", "RH", "RV", "RD", "RL",
)
_LABEL_INDEX = {s: i for i, s in enumerate(PROJECTORS)}


class ScheduleWarning(UserWarning):
    pass


class ChainWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    label: str
    counts: int
    start_time_s: float
    tau_s: float
    index: int = 0

    def __post_init__(self):
        if self.label not in _LABEL_INDEX:
            raise DomainError(f"unknown projector label {self.label!r}")
        if self.counts < 0:
            raise DomainError("counts must be nonnegative")

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + self.tau_s


@dataclass(frozen=True)
class McmcSettings:
    n_steps: int = 2**18
    burn_in: int | None = None  # default: a quarter of n_steps
    thin: int | None = None  # default: keep 1024 samples
    beta0: float = 0.05
    adapt: bool = True
    adapt_every: int = 1000
    accept_band: tuple[float, float] = (0.2, 0.4)
    likelihood: str = "exact"  # or "literal"
    n_keep: int = 1024

    def resolved(self) -> tuple[int, int]:
        burn = self.n_steps // 4 if self.burn_in is None else self.burn_in
        if not 0 <= burn <= self.n_steps:
            raise DomainError("need 0 <= burn_in <= n_steps")
        thin = self.thin or max(1, (self.n_steps - burn) // self.n_keep)
        return burn, thin


# ---------------------------------------------------------------------------
# parameterization

def _split_g(x: np.ndarray) -> np.ndarray:
    """(..., 33) -> (..., 4, 2, 2) complex; per matrix 4 real parts then 4 imaginary."""
    g = x[..., : 2 * D**4].reshape(x.shape[:-1] + (N_KRAUS, 2, D * D))
    return (g[..., 0, :] + 1j * g[..., 1, :]).reshape(x.shape[:-1] + (N_KRAUS, D, D))


def kraus_from_params(x) -> KrausChannel:
    x = np.asarray(x, dtype=float)
    if x.shape != (N_PARAMS,) or not np.all(np.isfinite(x)):
        raise DomainError(f"need {N_PARAMS} finite parameters")
    G = _split_g(x)
    S = np.einsum("kji,kjl->il", G.conj(), G)
    return KrausChannel(G @ herm_inv_sqrt(S, min_eig=SINGULAR_EIG))


def params_for_kraus(ops, flux: float = 0.0) -> np.ndarray:
    """A parameter vector whose normalized Kraus set is exactly ``ops``.

    Only valid for complete Kraus sets (then S = I and normalization is a no-op).
    """
    ops = np.asarray(ops, dtype=complex)
    G = np.zeros((N_KRAUS, D, D), dtype=complex)
    G[: len(ops)] = ops
    flat = G.reshape(N_KRAUS, D * D)
    x = np.concatenate([np.stack([flat.real, flat.imag], axis=1).ravel(), [flux]])
    return x


def _batch_inv_sqrt_2x2(S: np.ndarray):
    """Closed-form S^{-1/2} for a stack of 2x2 Hermitian PD matrices.

    Returns (R, ok) where ``ok`` flags matrices whose smallest eigenvalue
    clears SINGULAR_EIG.
    """
    a = S[..., 0, 0].real
    d = S[..., 1, 1].real
    b = S[..., 0, 1]
    tr = a + d
    det = a * d - (b * b.conj()).real
    disc = np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))
    ok = (tr - disc) / 2 > SINGULAR_EIG
    s = np.sqrt(np.where(ok, det, 1.0))
    t = np.sqrt(np.where(ok, tr, 3.0) + 2 * s)
    # sqrt(S) = (S + sI)/t ; its inverse is adj(S + sI) / (s t)
    R = np.empty_like(S)
    R[..., 0, 0] = d + s
    R[..., 1, 1] = a + s
    R[..., 0, 1] = -b
    R[..., 1, 0] = -S[..., 1, 0]
    R /= (s * t)[..., None, None]
    return R, ok


def _batch_choi(x: np.ndarray):
    """Choi matrices for a stack of parameter vectors; (B, 4, 4) and validity mask."""
    x = np.atleast_2d(x)
    B = x.shape[0]
    g = x[:, : 2 * D**4].reshape(B, N_KRAUS, 2, D * D)
    # Kraus operators stacked vertically: sum_k G_k^dag G_k = Gs^dag Gs
    Gs = (g[:, :, 0, :] + 1j * g[:, :, 1, :]).reshape(B, N_KRAUS * D, D)
    S = np.conj(Gs.transpose(0, 2, 1)) @ Gs
    R, ok = _batch_inv_sqrt_2x2(S)
    A = (Gs @ R).reshape(B, N_KRAUS, D, D)
    c = A.transpose(0, 1, 3, 2).reshape(B, N_KRAUS, D * D)
    phi = (c.transpose(0, 2, 1) @ c.conj()) / D
    return phi, ok


def flux_from_params(x, k0: float) -> float:
    if k0 <= 0:
        raise DomainError("K0 must be positive")
    return float(k0 * max(1.0 + FLUX_SIGMA * float(np.asarray(x)[-1]), FLUX_FLOOR))


def k0_estimate(records: Sequence[MeasurementRecord]) -> float:
    """Flux scale from a window: E[N_s] = K/4 for a maximally mixed output."""
    if len(records) == 0:
        raise DomainError("cannot estimate K0 from an empty window")
    k0 = 4.0 * float(np.mean([r.counts for r in records]))
    if k0 <= 0:
        raise InsufficientCounts("window has zero total counts")
    return k0


# ---------------------------------------------------------------------------
# likelihood

def projector_operators(rho_in, labels: Sequence[str] = PROJECTORS) -> np.ndarray:
    """Matrices M_s with p_s = Tr(Phi M_s) for the Choi matrix Phi of the channel.

    Derived from p_s = <a b| (1 (x) E)(rho_in) |a b>: with the ancilla
    conditional r_s = (<a| (x) 1) rho_in (|a> (x) 1), M_s = d r_s^T (x) |b><b|.
    """
    rho = np.asarray(rho_in, dtype=complex).reshape(D, D, D, D)
    out = []
    for lab in labels:
        a, b = basis_ket(lab[0]), basis_ket(lab[1])
        r = np.einsum("a,ambn,b->mn", a.conj(), rho, a)
        out.append(D * np.kron(r.T, projector(b)))
    return np.array(out)


def ideal_input_state() -> np.ndarray:
    return projector(bell_state("psi+"))


def _probabilities(phi: np.ndarray, Mt: np.ndarray) -> np.ndarray:
    # Tr(Phi M_s) = sum_ab Phi_ab (M_s^T)_ab ; both Hermitian so the result is real
    B = phi.shape[0]
    return (phi.reshape(B, -1) @ Mt.reshape(len(Mt), -1).T).real


def _loglik(phi, ok, flux_x, counts, k0, Mt, literal: bool):
    p = np.maximum(_probabilities(phi, Mt), P_FLOOR)
    K = k0 * np.maximum(1.0 + FLUX_SIGMA * flux_x, FLUX_FLOOR)
    lam = K[..., None] * p
    if literal:
        ll = np.sum(counts * np.log(p) - lam, axis=-1)
    else:
        ll = np.sum(counts * np.log(lam) - lam, axis=-1)
    return np.where(ok, ll, -np.inf)


def _window_arrays(records: Sequence[MeasurementRecord]):
    labels = [r.label for r in records]
    counts = np.array([r.counts for r in records], dtype=float)
    return labels, counts


def log_likelihood(x, records, rho_in=None, k0: float | None = None, likelihood: str = "exact") -> float:
    """Poisson log-likelihood of the counts, up to the x-independent log N_s! term."""
    x = np.asarray(x, dtype=float)
    rho_in = ideal_input_state() if rho_in is None else rho_in
    k0 = k0_estimate(records) if k0 is None else k0
    labels, counts = _window_arrays(records)
    Mt = np.swapaxes(projector_operators(rho_in, labels), -1, -2) if labels else np.zeros((0, 4, 4))
    phi, ok = _batch_choi(x[None])
    return float(_loglik(phi, ok, x[None, -1], counts, k0, Mt, likelihood == "literal")[0])


# ---------------------------------------------------------------------------
# pCN sampler

@dataclass(eq=False)
class PosteriorSample:
    x: np.ndarray
    loglik: float
    _channel: KrausChannel | None = field(default=None, repr=False)

    @property
    def channel(self) -> KrausChannel:
        if self._channel is None:
            self._channel = kraus_from_params(self.x)
        return self._channel


@dataclass(eq=False)
class ChainResult:
    """Retained samples of one chain plus diagnostics; iterates like a list of samples."""

    samples: list
    fq_trace: np.ndarray
    choi_sum: np.ndarray
    purity_sum: float
    acceptance: float
    beta: float
    warnings: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.fq_trace)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def mean_choi(self) -> np.ndarray:
        return self.choi_sum / len(self.fq_trace)


def chain_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def run_chains(
    counts: np.ndarray,
    k0: np.ndarray,
    Mt: np.ndarray,
    settings: McmcSettings,
    rngs: Sequence[np.random.Generator],
    target=None,
    keep_params: bool = False,
    chunk: int = 512,
) -> list[ChainResult]:
    """Run ``B`` independent pCN chains in lockstep.

    Parameters
    ----------
    counts : (B, S) observed counts per chain (S may be 0: flat likelihood)
    k0 : (B,) flux scale per chain
    Mt : (S, 4, 4) transposed projector operators shared by all chains
    rngs : one generator per chain; chain b draws only from ``rngs[b]``
    """
    counts = np.ascontiguousarray(np.atleast_2d(np.asarray(counts, dtype=float)))
    B = counts.shape[0]
    k0 = np.ascontiguousarray(np.broadcast_to(np.asarray(k0, dtype=float), (B,)))
    if len(rngs) != B:
        raise DomainError("need one generator per chain")
    if settings.likelihood not in ("exact", "literal"):
        raise DomainError(f"unknown likelihood mode {settings.likelihood!r}")
    burn, thin = settings.resolved()
    n = settings.n_steps
    literal = settings.likelihood == "literal"
    W = choi_features(Mt) if len(Mt) else np.zeros((0, 16))
    if counts.shape[1] != W.shape[0]:
        raise DomainError("counts and projector operators disagree in length")
    T = np.eye(D) if target is None else np.asarray(target, dtype=complex)
    wT = T.T.reshape(D * D) / np.sqrt(D)

    x = np.stack([r.standard_normal(N_PARAMS) for r in rngs])
    ll = batch_loglik(x, counts, k0, W, literal)
    beta = np.full(B, float(settings.beta0))
    acc_window = np.zeros(B, dtype=np.int64)
    acc_post = np.zeros(B, dtype=np.int64)

    n_keep = (n - burn) // thin
    fq = np.zeros((B, n_keep))
    choi_sum = np.zeros((B, 4, 4), dtype=complex)
    pur_sum = np.zeros(B)
    kept_x = np.zeros((B, n_keep, N_PARAMS)) if keep_params else None
    kept_ll = np.zeros((B, n_keep)) if keep_params else None
    j = 0

    step = 0
    while step < n:
        m = min(chunk, n - step)
        xi = np.ascontiguousarray(np.stack([r.standard_normal((m, N_PARAMS)) for r in rngs], axis=1))
        logu = np.ascontiguousarray(np.log(np.stack([r.random(m) for r in rngs], axis=1)))
        pos = 0
        while pos < m:
            if step < burn:
                stop = (step // settings.adapt_every + 1) * settings.adapt_every if settings.adapt else burn
                stop = min(stop, burn)
            else:
                stop = burn + ((step - burn) // thin + 1) * thin
            k = min(stop - step, m - pos)
            acc = np.zeros(B, dtype=np.int64)
            pcn_block(x, ll, beta, xi[pos : pos + k], logu[pos : pos + k], counts, k0, W, literal, acc)
            pos += k
            step += k
            if step <= burn:
                acc_window += acc
                if settings.adapt and step % settings.adapt_every == 0:
                    rate = acc_window / settings.adapt_every
                    lo, hi = settings.accept_band
                    beta = np.where(rate < lo, beta / 2, np.where(rate > hi, np.minimum(2 * beta, 1.0), beta))
                    acc_window[:] = 0
            else:
                acc_post += acc
                if (step - burn) % thin == 0 and j < n_keep:
                    phi, _ = _batch_choi(x)
                    fq[:, j] = np.einsum("a,bac,c->b", wT.conj(), phi, wT).real
                    choi_sum += phi
                    pur_sum += np.einsum("bac,bca->b", phi, phi).real
                    if keep_params:
                        kept_x[:, j] = x
                        kept_ll[:, j] = ll
                    j += 1

    results = []
    for b in range(B):
        acc_rate = acc_post[b] / max(1, n - burn)
        warn = []
        if n > burn and acc_post[b] == 0:
            msg = "no proposals accepted after burn-in"
            warnings.warn(msg, ChainWarning, stacklevel=2)
            warn.append(msg)
        samples = (
            [PosteriorSample(kept_x[b, i].copy(), float(kept_ll[b, i])) for i in range(n_keep)]
            if keep_params
            else []
        )
        results.append(
            ChainResult(samples, fq[b].copy(), choi_sum[b].copy(), float(pur_sum[b]), float(acc_rate), float(beta[b]), warn)
        )
    return results


def pcn_sample(
    records: Sequence[MeasurementRecord],
    rho_in=None,
    k0: float | None = None,
    settings: McmcSettings = McmcSettings(),
    rng: np.random.Generator | None = None,
    target=None,
) -> ChainResult:
    """Sample the channel posterior for one window with a single pCN chain.

    An empty ``records`` list gives a flat likelihood, so the chain targets
    the prior itself (``k0`` must then be given explicitly).
    """
    rng = np.random.default_rng() if rng is None else rng
    rho_in = ideal_input_state() if rho_in is None else rho_in
    k0 = k0_estimate(records) if k0 is None else k0
    labels, counts = _window_arrays(records)
    Mt = np.swapaxes(projector_operators(rho_in, labels), -1, -2) if labels else np.zeros((0, 4, 4), dtype=complex)
    (res,) = run_chains(counts[None], np.array([k0]), Mt, settings, [rng], target=target, keep_params=True)
    return res


# ---------------------------------------------------------------------------
# estimators

def bayes_mean_choi(samples) -> np.ndarray:
    """Entrywise mean of per-sample Choi matrices."""
    if isinstance(samples, ChainResult):
        if len(samples) == 0:
            raise DomainError("no samples")
        return samples.mean_choi
    samples = list(samples)
    if not samples:
        raise DomainError("no samples")
    chois = [s if isinstance(s, np.ndarray) else _sample_choi(s) for s in samples]
    return np.mean(chois, axis=0)


def _sample_choi(s) -> np.ndarray:
    from .channels import choi

    ch = s.channel if isinstance(s, PosteriorSample) else s
    return choi(ch)


def fidelity_posterior(samples, target=None) -> tuple[float, float]:
    """Posterior mean and standard deviation of the process fidelity."""
    if isinstance(samples, ChainResult) and target is None:
        f = samples.fq_trace
    else:
        from .channels import process_fidelity_kraus

        items = list(samples)
        f = np.array(
            [
                process_fidelity_kraus(s.channel if isinstance(s, PosteriorSample) else s, target)
                if not isinstance(s, (float, np.floating))
                else float(s)
                for s in items
            ]
        )
    if len(f) == 0:
        raise DomainError("no samples")
    return float(np.mean(f)), float(np.std(f))


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor for scalar traces of equal length."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 10:
        raise DomainError("need at least 2 chains of length >= 10")
    m, n = chains.shape
    W = np.mean(np.var(chains, axis=1, ddof=1))
    means = chains.mean(axis=1)
    B = n * np.var(means, ddof=1)
    if W == 0.0:
        return 1.0 if B == 0.0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


# ---------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class Window:
    window_id: int
    records: tuple

    @property
    def key(self) -> int:
        """Sequence index of the first record; seeds the window's chains."""
        return self.records[0].index

    @property
    def t_start(self) -> float:
        return self.records[0].start_time_s

    @property
    def t_end(self) -> float:
        return max(r.end_time_s for r in self.records)


def _complete(block) -> bool:
    return sorted(r.label for r in block) == sorted(PROJECTORS)


def segmented_schedule(stream: Iterable[MeasurementRecord]) -> list[Window]:
    recs = list(stream)
    S = len(PROJECTORS)
    out = []
    for w in range(len(recs) // S):
        block = tuple(recs[w * S : (w + 1) * S])
        if _complete(block):
            out.append(Window(w, block))
        else:
            warnings.warn(f"segmented window {w} lacks a full projector set; skipped", ScheduleWarning, stacklevel=2)
    return out


def sliding_schedule(stream: Iterable[MeasurementRecord]) -> list[Window]:
    recs = list(stream)
    S = len(PROJECTORS)
    out = []
    for end in range(S - 1, len(recs)):
        block = tuple(recs[end - S + 1 : end + 1])
        w = end - S + 1
        if _complete(block):
            out.append(Window(w, block))
        else:
            warnings.warn(f"sliding window {w} lacks a full projector set; skipped", ScheduleWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# window tomography

@dataclass
class TomogramResult:
    window_id: int
    kind: str
    t_start: float
    t_end: float
    choi: np.ndarray
    fq_mean: float
    fq_std: float
    purity: float  # posterior mean of Tr Phi^2
    purity_of_mean: float  # Tr of the squared Bayesian-mean Choi

    n_samples: int
    acceptance: float
    rhat: float
    k0: float
    fq_gauge: float = float("nan")

    def record(self) -> dict:
        from .channels import choi_record

        return {
            "window_id": self.window_id,
            "kind": self.kind,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "fq_mean": self.fq_mean,
            "fq_std": self.fq_std,
            "fq_gauge": self.fq_gauge,
            "purity": self.purity,
            "purity_of_mean": self.purity_of_mean,
            "acceptance": self.acceptance,
            "rhat": self.rhat,
            "choi": choi_record(self.choi, label=f"{self.kind}:{self.window_id}"),
        }


def estimate_windows(
    windows: Sequence[Window],
    settings: McmcSettings,
    seed: int,
    rho_in=None,
    n_chains: int = 1,
    kind: str = "window",
    target=None,
    batch: int = 256,
) -> list[TomogramResult]:
    """Tomography for each window; every window's chains seeded from (seed, window key)."""
    rho_in = ideal_input_state() if rho_in is None else rho_in
    Mt_full = np.swapaxes(projector_operators(rho_in, PROJECTORS), -1, -2)
    results = []
    for lo in range(0, len(windows), batch):
        chunk = windows[lo : lo + batch]
        counts, k0s, rngs = [], [], []
        for w in chunk:
            c = np.zeros(len(PROJECTORS))
            for r in w.records:
                c[_LABEL_INDEX[r.label]] = r.counts
            k0 = k0_estimate(w.records)
            for ci in range(n_chains):
                counts.append(c)
                k0s.append(k0)
                rngs.append(chain_rng(seed, w.key, ci))
        chains = run_chains(np.array(counts), np.array(k0s), Mt_full, settings, rngs, target=target)
        for i, w in enumerate(chunk):
            cs = chains[i * n_chains : (i + 1) * n_chains]
            f = np.concatenate([c.fq_trace for c in cs])
            n = len(f)
            mean_choi = sum(c.choi_sum for c in cs) / n
            rhat = gelman_rubin([c.fq_trace for c in cs]) if n_chains >= 2 else float("nan")
            results.append(
                TomogramResult(
                    window_id=w.window_id,
                    kind=kind,
                    t_start=w.t_start,
                    t_end=w.t_end,
                    choi=mean_choi,
                    fq_mean=float(f.mean()),
                    fq_std=float(f.std()),
                    purity=float(sum(c.purity_sum for c in cs) / n),
                    purity_of_mean=choi_purity(mean_choi),
                    n_samples=n,
                    acceptance=float(np.mean([c.acceptance for c in cs])),
                    rhat=rhat,
                    k0=k0s[i * n_chains],
                )
            )
    return results


def attach_gauge_fidelity(results: Sequence[TomogramResult]):
    """Fill ``fq_gauge``: fidelity after the series-wide local-unitary gauge fix."""
    from .channels import gauge_fix

    if not results:
        return None
    V, fixed = gauge_fix([r.choi for r in results])
    for r, phi in zip(results, fixed):
        r.fq_gauge = choi_fidelity(phi)
    return V
