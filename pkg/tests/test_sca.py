import math

import numpy as np
import pytest

from uplink_rsma.conic import solve
from uplink_rsma.model import (FIRST, SECOND, WHOLE, ChannelRealization, ConfigError, Scheme, SystemConfig,
                               compute_decoding_order, generate_rayleigh_channels, strongest_users)
from uplink_rsma.rates import (FblParams, check_power, power_per_user, stream_rate_raw, stream_rates,
                               user_rates)
from uplink_rsma.sca import (AoSettings, build_combiner_subproblem, build_precoder_subproblem,
                             initialize_state, linearize_dispersion, run_ao, solve_mmf, solve_mmf_noma,
                             solve_mmf_sdma, warm_start_from, warm_start_from_noma)


def setup(seed=0, K=2, Nt=2, Nr=2, split=None, scheme="RSMA", squared=True, Pt=100.0):
    cfg = SystemConfig(K=K, Nt=Nt, Nr=Nr, Pt=Pt, scheme=scheme, noise_norm_squared=squared)
    ch = generate_rayleigh_channels(cfg, seed)
    if split is not None:
        cfg = cfg.with_(split_set=strongest_users(ch, split))
    fbl = FblParams.from_config(cfg)
    return ch, cfg, compute_decoding_order(ch, cfg), fbl


def test_dispersion_tangent_values():
    tan = linearize_dispersion(1.0)
    assert tan.value == pytest.approx(math.sqrt(0.75))
    assert tan.value == pytest.approx(0.86603, abs=1e-5)
    assert tan.slope == pytest.approx(0.125 / math.sqrt(0.75))
    assert tan.slope == pytest.approx(0.14434, abs=1e-5)
    far = linearize_dispersion(1e8)
    assert far.value == pytest.approx(1.0, abs=1e-12) and far.slope < 1e-20
    assert np.isfinite(linearize_dispersion(0.0).slope)


def test_tangent_overestimates_dispersion():
    rho = np.linspace(0, 50, 501)
    for r0 in (1e-3, 0.5, 1.0, 10.0):
        tan = linearize_dispersion(r0)
        assert np.all(tan(rho) >= np.sqrt(1 - (1 + rho) ** -2) - 1e-12)


def test_settings_validation():
    with pytest.raises(ValueError):
        AoSettings(tau=0)
    with pytest.raises(ValueError):
        AoSettings(max_outer_iters=0)
    with pytest.raises(ValueError):
        AoSettings(init_strategy="random")
    with pytest.raises(ValueError):
        AoSettings(warm_split=1.0)


def test_initial_state():
    ch = ChannelRealization(np.array([[[2.0]]], dtype=complex))
    cfg = SystemConfig(K=1, Nt=1, Nr=1, Pt=1)
    fbl = FblParams.from_config(cfg)
    order = compute_decoding_order(ch, cfg)
    s = initialize_state(ch, order, cfg, fbl)
    assert abs(s.P[0, 0, 0]) == pytest.approx(1.0)
    assert s.rho[0, 0] == pytest.approx(4.0)
    assert s.t == pytest.approx(float(stream_rates(4.0, fbl)))
    # the stored combiner is the MMSE one up to a positive scale
    g = np.conj(2.0 * s.P[0, 0, 0]) / 5.0
    assert s.G[0, 0, 0] / g == pytest.approx(abs(s.G[0, 0, 0] / g))


def test_initial_split_halves_power():
    ch, cfg, order, fbl = setup(seed=4, split=1)
    s = initialize_state(ch, order, cfg, fbl)
    u = next(iter(cfg.split_set))
    for part in (FIRST, SECOND):
        m = order.position(u, part)
        assert np.sum(np.abs(s.P[m]) ** 2) == pytest.approx(cfg.Pt / 2, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_initial_slack_tight(seed):
    ch, cfg, order, fbl = setup(seed=seed, K=3, split=1)
    s = initialize_state(ch, order, cfg, fbl)
    rep = user_rates(ch, s.P, s.G, order, cfg, fbl)
    np.testing.assert_allclose(s.rho, np.where(s.active, rep.per_stream_sinr, 0), rtol=1e-12)


def _incumbent_vector(prog, state, block):
    lay = prog.layout
    raw = stream_rate_raw(state.rho, FblParams(500, 1e-5))
    return lay.pack(block, state.rho, state.t, raw)


@pytest.mark.parametrize("squared", [True, False])
@pytest.mark.parametrize("seed", range(4))
def test_incumbent_feasible(seed, squared):
    ch, cfg, order, fbl = setup(seed=seed, split=1, squared=squared)
    s = initialize_state(ch, order, cfg, fbl)
    pre = build_precoder_subproblem(s, ch, order, cfg, fbl)
    assert pre.max_violation(_incumbent_vector(pre, s, np.transpose(s.P, (0, 2, 1)))) <= 1e-7
    com = build_combiner_subproblem(s, ch, order, cfg, fbl)
    assert com.max_violation(_incumbent_vector(com, s, s.G)) <= 1e-7


def test_variable_counts():
    ch, cfg, order, fbl = setup(seed=1, K=3, Nt=2, Nr=3, split=1)
    s = initialize_state(ch, order, cfg, fbl)
    assert s.active.all()
    M, L = cfg.M, cfg.L
    pre = build_precoder_subproblem(s, ch, order, cfg, fbl).layout
    com = build_combiner_subproblem(s, ch, order, cfg, fbl).layout
    assert pre.n_design == M * cfg.Nt * L * 2 + M * L + 1
    assert com.n_design == M * cfg.Nr * L * 2 + M * L + 1


def test_single_user_optimum():
    # one receive antenna gives a single stream; the optimum is matched filtering at full power
    ch, cfg, order, fbl = setup(seed=2, K=1, Nt=2, Nr=1, scheme="NOMA")
    sigma_max = np.linalg.svd(ch.H[0], compute_uv=False)[0]
    target = float(stream_rates(cfg.Pt * sigma_max**2, fbl))
    prog = build_precoder_subproblem(initialize_state(ch, order, cfg, fbl), ch, order, cfg, fbl)
    assert abs(solve(prog).x[prog.layout.t_index] - target) <= 1e-3
    res = solve_mmf(ch, cfg, fbl)
    assert res.iterations <= 3
    assert abs(res.mmf - target) <= 1e-3


def test_single_user_combiner_is_mmse():
    ch, cfg, order, fbl = setup(seed=5, K=1, Nt=1, Nr=2, Pt=10.0)
    s = initialize_state(ch, order, cfg, fbl)
    prog = build_combiner_subproblem(s, ch, order, cfg, fbl)
    G = prog.layout.unpack_block(solve(prog).x)
    got = user_rates(ch, s.P, G, order, cfg, fbl).per_stream_sinr[0, 0]
    assert got == pytest.approx(s.rho[0, 0], abs=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_ao_trace_and_feasibility(seed):
    ch, cfg, order, fbl = setup(seed=seed, split=1)
    res = solve_mmf(ch, cfg, fbl)
    assert np.min(np.diff(res.trace)) >= -1e-6
    assert check_power(res.state.P, order, cfg)
    assert res.mmf >= res.state.t - 1e-4
    assert res.trace[-1] == res.state.t


def test_ao_reproducible():
    ch, cfg, order, fbl = setup(seed=3, split=1)
    a, b = solve_mmf(ch, cfg, fbl), solve_mmf(ch, cfg, fbl)
    assert abs(a.state.t - b.state.t) <= 1e-9
    assert a.summary() == b.summary()


def test_zeroing_split_part_never_helps():
    ch, cfg, order, fbl = setup(seed=6, split=1)
    # at tau=1e-4 the iterate can sit ~4e-5 short of stationarity; converge tightly
    res = solve_mmf(ch, cfg, fbl, AoSettings(tau=1e-8, max_outer_iters=500))
    u = next(iter(cfg.split_set))
    for part in (FIRST, SECOND):
        P = res.state.P.copy()
        P[order.position(u, part)] = 0
        assert user_rates(ch, P, res.state.G, order, cfg, fbl).mmf <= res.mmf + 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_warm_start_from_noma(seed):
    ch, cfg, order, fbl = setup(seed=seed, split=1)
    noma = solve_mmf_noma(ch, cfg, fbl)
    state = warm_start_from_noma(noma, ch, order, cfg, fbl)
    # re-scored from the solver's rho, so agreement is to solver tolerance
    assert state.t == pytest.approx(noma.state.t, abs=1e-7)
    u = next(iter(cfg.split_set))
    assert not np.any(state.P[order.position(u, SECOND)])
    rsma = run_ao(state, ch, order, cfg, fbl, AoSettings())
    assert rsma.state.t >= noma.state.t - 1e-6


def test_warm_start_split_keeps_power():
    ch, cfg, order, fbl = setup(seed=2, split=1)
    noma = solve_mmf_noma(ch, cfg, fbl)
    state = warm_start_from_noma(noma, ch, order, cfg, fbl, split=0.3)
    np.testing.assert_allclose(power_per_user(state.P, order, cfg.K),
                               power_per_user(noma.state.P, noma.order, cfg.K)[[0, 1]], rtol=1e-12)


def test_warm_start_from_smaller_split_set():
    ch, cfg, order, fbl = setup(seed=4, K=3, Nr=4, split=2)
    small = cfg.with_(split_set=strongest_users(ch, 1))
    prev = solve_mmf(ch, small, fbl)
    state = warm_start_from(prev, ch, order, cfg, fbl)
    # the added user's first part sits where its whole message was decoded
    assert state.t == pytest.approx(prev.state.t, abs=1e-7)
    new_user = next(iter(cfg.split_set - small.split_set))
    assert not np.any(state.P[order.position(new_user, SECOND)])
    np.testing.assert_array_equal(state.P[order.position(new_user, FIRST)],
                                  prev.state.P[prev.order.position(new_user, WHOLE)])


def test_best_of_monotone_in_split_count():
    ch, cfg, _, fbl = setup(seed=5, K=3, Nr=4)
    best = AoSettings(init_strategy="best-of")
    mmf = [solve_mmf(ch, cfg.with_(split_set=strongest_users(ch, s)), fbl, best).mmf for s in (1, 2, 3)]
    assert all(b >= a - 1e-6 for a, b in zip(mmf, mmf[1:]))


def test_given_strategy_requires_state():
    ch, cfg, _, _ = setup(seed=0, split=1)
    with pytest.raises(ValueError):
        solve_mmf(ch, cfg, settings=AoSettings(init_strategy="given"))


def test_best_of_dominates_plain_start():
    ch, cfg, _, fbl = setup(seed=1, split=1)
    plain = solve_mmf(ch, cfg, fbl)
    best = solve_mmf(ch, cfg, fbl, AoSettings(init_strategy="best-of"))
    noma = solve_mmf_noma(ch, cfg, fbl)
    assert best.mmf >= plain.mmf
    assert best.mmf >= noma.mmf - 1e-6


def test_noma_delegation_bitwise():
    ch, cfg, _, fbl = setup(seed=3, scheme="NOMA")
    a = solve_mmf_noma(ch, cfg, fbl)
    b = solve_mmf(ch, cfg, fbl)
    assert a.report.identical_to(b.report) and a.trace == b.trace


def test_symmetric_users_balanced():
    H = np.zeros((2, 2, 2), dtype=complex)
    H[0] = [[1.0, 0.3], [0.2j, 0.8]]
    H[1] = H[0] @ np.array([[0, 1], [1, 0]])  # same singular values
    ch = ChannelRealization(H)
    res = solve_mmf_noma(ch, SystemConfig(K=2, Nt=2, Nr=2, Pt=100, scheme="NOMA"))
    r = res.report.per_user
    assert abs(r[0] - r[1]) <= 0.05 * max(r)


def test_sdma_rejects_split():
    ch, cfg, _, _ = setup(seed=0, split=1)
    with pytest.raises(ConfigError):
        solve_mmf_sdma(ch, cfg)


def test_orthogonal_channels_sdma_matches_noma():
    H = np.zeros((2, 4, 2), dtype=complex)
    H[0, :2] = [[1.0, 0.2], [0.1j, 0.9]]
    H[1, 2:] = [[0.7, 0.4j], [0.3, 1.1]]
    ch = ChannelRealization(H)
    cfg = SystemConfig(K=2, Nt=2, Nr=4, Pt=100, scheme="NOMA")
    noma = solve_mmf_noma(ch, cfg).mmf
    sdma = solve_mmf_sdma(ch, cfg).mmf
    assert abs(sdma - noma) <= 0.05 * noma


def test_rsma_no_split_matches_noma():
    ch, cfg, _, fbl = setup(seed=8)
    a = solve_mmf(ch, cfg, fbl)
    b = solve_mmf(ch, cfg.with_(scheme=Scheme.NOMA), fbl)
    assert a.report.identical_to(b.report)
    assert abs(a.state.t - b.state.t) <= 1e-9
