import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from aaptlink import aapt
from aaptlink._kernels import batch_loglik, choi_features
from aaptlink.aapt import (
    PROJECTORS,
    McmcSettings,
    MeasurementRecord,
    chain_rng,
    estimate_windows,
    flux_from_params,
    gelman_rubin,
    k0_estimate,
    kraus_from_params,
    log_likelihood,
    params_for_kraus,
    pcn_sample,
    segmented_schedule,
    sliding_schedule,
)
from aaptlink.channels import (
    choi,
    choi_purity,
    compose,
    depolarizing,
    identity_channel,
    unitary_channel,
)
from aaptlink.errors import DomainError, InsufficientCounts, SingularityError
from aaptlink.qubit import random_unitary

finite = st.floats(-5, 5, allow_nan=False)


def synth_records(channel, k_true, rng, tau=10.0, start_index=0):
    phi = choi(channel)
    M = aapt.projector_operators(aapt.ideal_input_state())
    out = []
    for i, (lab, m) in enumerate(zip(PROJECTORS, M)):
        lam = k_true * max(0.0, float(np.real(np.trace(phi @ m))))
        j = start_index + i
        out.append(MeasurementRecord(lab, int(rng.poisson(lam)), j * 10.1875, tau, j))
    return out


def test_identity_params():
    x = params_for_kraus([np.eye(2)])
    assert np.allclose(choi(kraus_from_params(x)), choi(identity_channel()))


@given(arrays(float, aapt.N_PARAMS, elements=finite))
def test_any_params_complete(x):
    try:
        ch = kraus_from_params(x)
    except SingularityError:  # near-singular S
        return
    S = sum(a.conj().T @ a for a in ch.ops)
    assert np.abs(S - np.eye(2)).max() < 1e-10


def test_nonfinite_params_rejected():
    x = np.zeros(aapt.N_PARAMS)
    x[3] = np.nan
    with pytest.raises(DomainError):
        kraus_from_params(x)


def test_batch_choi_matches_kraus_path(rng):
    x = rng.standard_normal((20, aapt.N_PARAMS))
    phi, ok = aapt._batch_choi(x)
    assert ok.all()
    for xi, p in zip(x, phi):
        assert np.allclose(p, choi(kraus_from_params(xi)), atol=1e-12)


@pytest.mark.parametrize("literal", [False, True])
def test_kernel_matches_numpy_reference(rng, literal):
    x = rng.standard_normal((30, aapt.N_PARAMS))
    counts = rng.poisson(500, size=(30, 16)).astype(float)
    k0 = np.full(30, 2000.0)
    Mt = np.swapaxes(aapt.projector_operators(aapt.ideal_input_state()), -1, -2)
    phi, ok = aapt._batch_choi(x)
    ref = np.array([
        aapt._loglik(phi[b : b + 1], ok[b : b + 1], x[b : b + 1, -1], counts[b], k0[b], Mt, literal)[0]
        for b in range(30)
    ])
    got = batch_loglik(np.ascontiguousarray(x), counts, k0, choi_features(Mt), literal)
    assert np.allclose(got, ref, rtol=1e-11, atol=1e-8)


def test_flux_examples():
    x = np.zeros(aapt.N_PARAMS)
    assert flux_from_params(x, 4000.0) == 4000.0
    x[-1] = 1.0
    assert flux_from_params(x, 4000.0) == pytest.approx(4400.0)
    x[-1] = -20.0
    assert flux_from_params(x, 4000.0) == pytest.approx(4000.0 * 1e-6)
    with pytest.raises(DomainError):
        flux_from_params(x, 0.0)


def test_k0_examples():
    recs = [MeasurementRecord(l, 1000, 0.0, 10.0) for l in PROJECTORS]
    assert k0_estimate(recs) == 4000.0
    with pytest.raises(InsufficientCounts):
        k0_estimate([MeasurementRecord("HH", 0, 0.0, 10.0)])
    with pytest.raises(DomainError):
        k0_estimate([])


def test_k0_at_link_scale():
    rng = np.random.default_rng(4)
    ch = compose(depolarizing(0.041), unitary_channel(random_unitary(rng)))
    k = [k0_estimate(synth_records(ch, 4000.0, rng)) for _ in range(50)]
    assert all(abs(v - 4000.0) < 800.0 for v in k)


def test_record_validation():
    with pytest.raises(DomainError):
        MeasurementRecord("HX", 1, 0.0, 1.0)
    with pytest.raises(DomainError):
        MeasurementRecord("HH", -1, 0.0, 1.0)


def test_truth_beats_prior_draws():
    rng = np.random.default_rng(8)
    wins = 0
    for _ in range(100):
        U = random_unitary(rng)
        ch = compose(depolarizing(0.041), unitary_channel(U))
        recs = synth_records(ch, 4000.0, rng)
        x_true = params_for_kraus(ch.ops)
        x_rand = rng.standard_normal(aapt.N_PARAMS)
        k0 = 4000.0
        wins += log_likelihood(x_true, recs, k0=k0) > log_likelihood(x_rand, recs, k0=k0)
    assert wins >= 99


def test_zero_counts_reduce_to_minus_rate():
    recs = [MeasurementRecord(l, 0, 0.0, 10.0) for l in PROJECTORS]
    x = params_for_kraus([np.eye(2)])
    # p_s sums to 4 over the 16 product projectors, so -sum lambda = -4 K
    assert log_likelihood(x, recs, k0=1000.0) == pytest.approx(-4000.0)
    x[-1] = -20.0
    assert log_likelihood(x, recs, k0=1000.0) > -1e-2


def test_likelihood_scaling():
    rng = np.random.default_rng(2)
    ch = compose(depolarizing(0.1), unitary_channel(random_unitary(rng)))
    recs = synth_records(ch, 2000.0, rng)
    recs2 = [MeasurementRecord(r.label, 2 * r.counts, r.start_time_s, r.tau_s) for r in recs]
    a, b = rng.standard_normal(aapt.N_PARAMS), rng.standard_normal(aapt.N_PARAMS)
    d1 = log_likelihood(a, recs, k0=2000.0) - log_likelihood(b, recs, k0=2000.0)
    d2 = log_likelihood(a, recs2, k0=4000.0) - log_likelihood(b, recs2, k0=4000.0)
    assert d2 == pytest.approx(2 * d1, abs=1e-9 * max(1.0, abs(d1)))


def test_literal_mode_drops_flux_power():
    rng = np.random.default_rng(3)
    recs = synth_records(identity_channel(), 2000.0, rng)
    x = rng.standard_normal(aapt.N_PARAMS)
    n = sum(r.counts for r in recs)
    K = flux_from_params(x, 2000.0)
    diff = log_likelihood(x, recs, k0=2000.0) - log_likelihood(x, recs, k0=2000.0, likelihood="literal")
    assert diff == pytest.approx(n * np.log(K))


def test_prior_recovery_short():
    res = pcn_sample([], k0=1000.0, settings=McmcSettings(n_steps=20_000), rng=chain_rng(1, 0, 0))
    X = np.array([s.x for s in res])
    assert np.abs(X.mean(axis=0)).max() < 0.3
    assert np.abs(X.var(axis=0) - 1).max() < 0.4
    assert res.acceptance == pytest.approx(1.0)


def test_sampler_deterministic_and_sized():
    rng = np.random.default_rng(0)
    recs = synth_records(depolarizing(0.05), 4000.0, rng)
    s = McmcSettings(n_steps=4096)
    a = pcn_sample(recs, settings=s, rng=chain_rng(3, 0, 0))
    b = pcn_sample(recs, settings=s, rng=chain_rng(3, 0, 0))
    burn, thin = s.resolved()
    assert len(a) == (4096 - burn) // thin
    assert np.array_equal(a.fq_trace, b.fq_trace)
    assert np.array_equal(np.array([p.x for p in a]), np.array([p.x for p in b]))
    for p in a.samples[::50]:
        S = sum(k.conj().T @ k for k in p.channel.ops)
        assert np.abs(S - np.eye(2)).max() < 1e-10
        assert p.loglik == pytest.approx(log_likelihood(p.x, recs, k0=k0_estimate(recs)), rel=1e-9)
    assert np.allclose(aapt.bayes_mean_choi(a), aapt.bayes_mean_choi(list(a)), atol=1e-12)


def test_no_acceptance_warns():
    rng = np.random.default_rng(0)
    recs = synth_records(identity_channel(), 4e6, rng)
    # beta = 1 draws fresh prior points; after many steps one rarely beats the incumbent
    s = McmcSettings(n_steps=4020, burn_in=4000, beta0=1.0, adapt=False)
    with pytest.warns(aapt.ChainWarning):
        res = pcn_sample(recs, settings=s, rng=chain_rng(0, 0))
    assert res.warnings


def test_burn_in_larger_than_steps():
    with pytest.raises(DomainError):
        McmcSettings(n_steps=10, burn_in=20).resolved()


def test_bayes_mean_examples():
    ident = identity_channel()
    assert np.allclose(aapt.bayes_mean_choi([ident] * 5), choi(ident))
    mixed = aapt.bayes_mean_choi([ident, depolarizing(1.0)])
    phi_plus = choi(ident)
    assert np.allclose(mixed, (phi_plus + np.eye(4) / 4) / 2)
    with pytest.raises(DomainError):
        aapt.bayes_mean_choi([])


def test_purity_convexity(rng):
    chans = [compose(depolarizing(rng.uniform(0, 0.5)), unitary_channel(random_unitary(rng))) for _ in range(10)]
    mean = aapt.bayes_mean_choi(chans)
    assert choi_purity(mean) <= np.mean([choi_purity(choi(c)) for c in chans]) + 1e-12


def test_fidelity_posterior_examples():
    assert aapt.fidelity_posterior([identity_channel()] * 3) == pytest.approx((1.0, 0.0))
    assert aapt.fidelity_posterior([1.0, 0.9]) == pytest.approx((0.95, 0.05))
    with pytest.raises(DomainError):
        aapt.fidelity_posterior([])


def stream(n):
    return [MeasurementRecord(PROJECTORS[i % 16], 10, i * 10.1875, 10.0, i) for i in range(n)]


def test_schedule_counts():
    assert len(segmented_schedule(stream(32))) == 2
    assert len(sliding_schedule(stream(32))) == 17
    assert segmented_schedule(stream(15)) == [] and sliding_schedule(stream(15)) == []
    for w in sliding_schedule(stream(40)):
        assert sorted(r.label for r in w.records) == sorted(PROJECTORS)


def test_sliding_windows_share_fifteen():
    ws = sliding_schedule(stream(20))
    for a, b in zip(ws, ws[1:]):
        assert len(set(a.records) & set(b.records)) == 15


def test_schedule_gap_skipped_with_warning():
    recs = stream(32)
    del recs[5]
    with pytest.warns(aapt.ScheduleWarning):
        seg = segmented_schedule(recs)
    assert len(seg) == 0 or all(sorted(r.label for r in w.records) == sorted(PROJECTORS) for w in seg)


def test_gelman_rubin_examples(rng):
    c = rng.normal(size=200)
    assert gelman_rubin([c, c]) == pytest.approx(1.0, abs=0.01)
    assert gelman_rubin([np.ones(20), np.ones(20)]) == 1.0
    assert gelman_rubin([rng.normal(0, 0.01, 200), rng.normal(1, 0.01, 200)]) > 1.1
    with pytest.raises(DomainError):
        gelman_rubin([c])
    with pytest.raises(DomainError):
        gelman_rubin([c[:5], c[:5]])


def test_different_datasets_flagged():
    rng = np.random.default_rng(6)
    a = synth_records(identity_channel(), 4000.0, rng)
    b = synth_records(depolarizing(0.5), 4000.0, rng, start_index=16)
    w = segmented_schedule(a) + segmented_schedule(b)
    s = McmcSettings(n_steps=8192)
    r = estimate_windows(w, s, seed=0)
    assert gelman_rubin([
        pcn_sample(a, settings=s, rng=chain_rng(0, 0)).fq_trace,
        pcn_sample(b, settings=s, rng=chain_rng(0, 1)).fq_trace,
    ]) > 1.1
    assert r[0].fq_mean > r[1].fq_mean


def test_estimate_windows_fields_and_keys():
    rng = np.random.default_rng(1)
    recs = synth_records(depolarizing(0.041), 4000.0, rng) + synth_records(depolarizing(0.041), 4000.0, rng, start_index=16)
    seg = segmented_schedule(recs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", aapt.ScheduleWarning)
        sl = sliding_schedule(recs)
    s = McmcSettings(n_steps=4096)
    r_seg = estimate_windows(seg, s, seed=5, n_chains=2)
    r_sl = estimate_windows(sl, s, seed=5, n_chains=2)
    # windows with the same first record get the same chains
    for a in r_seg:
        (b,) = [x for x in r_sl if x.t_start == a.t_start]
        assert a.fq_mean == b.fq_mean
    for t in r_seg:
        assert t.n_samples >= 1 and t.fq_std >= 0
        assert t.purity_of_mean <= t.purity + 1e-12
        assert np.allclose(t.choi, t.choi.conj().T)
        assert np.trace(t.choi).real == pytest.approx(1.0)
        assert np.isfinite(t.rhat)


def test_gauge_fix_keeps_purity():
    from aaptlink.channels import gauge_fix, choi_fidelity

    rng = np.random.default_rng(9)
    U = random_unitary(rng)
    series = [choi(compose(depolarizing(p), unitary_channel(U))) for p in (0.02, 0.05, 0.1)]
    V, fixed = gauge_fix(series)
    for a, b in zip(series, fixed):
        assert choi_purity(a) == pytest.approx(choi_purity(b), abs=1e-10)
    V2, fixed2 = gauge_fix(fixed)
    for a, b in zip(fixed, fixed2):
        assert choi_fidelity(a) == pytest.approx(choi_fidelity(b), abs=1e-8)


@pytest.mark.slow
def test_posterior_concentrates_with_counts():
    from aaptlink.channels import choi_fidelity

    rng = np.random.default_rng(12)
    levels = [4e2, 4e3, 4e4, 4e5]
    rho = []
    for seed in range(3):
        U = random_unitary(rng)
        ch = unitary_channel(U)
        fid = []
        for k in levels:
            w = segmented_schedule(synth_records(ch, k, rng))
            (r,) = estimate_windows(w, McmcSettings(n_steps=2**15), seed=seed)
            fid.append(choi_fidelity(r.choi, U))
        ranks = np.argsort(np.argsort(fid))
        rho.append(np.corrcoef(ranks, np.arange(len(levels)))[0, 1])
    assert np.mean(rho) > 0.9
