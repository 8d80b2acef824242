import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uplink_rsma.model import (FIRST, SECOND, WHOLE, ChannelRealization, DecodingOrder, Scheme,
                               SystemConfig, compute_decoding_order, generate_rayleigh_channels)
from uplink_rsma.rates import (FblParams, fbl_penalty_coefficient, mmse_combiner_update, sinr_grid,
                               stream_rates, symbol_vector_rate, user_rates)

# frozen from an mpmath bisection on Q(x) = erfc(x / sqrt 2) / 2 at 30 digits
QINV_1E5 = 4.264890793922825
B_1E5 = 6.152936798325453
EPS_Q3 = 0.0013498980316300946
B_Q3 = 4.328085122666890
R_GAMMA1_N256 = 0.6669625265481293

gammas = st.floats(0.0, 1e4, allow_nan=False)


def siso(h, cfg_kw=None, scheme="NOMA"):
    H = np.asarray(h, dtype=complex).reshape(-1, 1, 1)
    kw = {"Pt": 1.0, **(cfg_kw or {})}
    cfg = SystemConfig(K=len(H), Nt=1, Nr=1, scheme=scheme, **kw)
    return ChannelRealization(H), cfg


def test_penalty_coefficient_values():
    assert fbl_penalty_coefficient(0.5) == pytest.approx(0.0, abs=1e-15)
    assert fbl_penalty_coefficient(1e-5) == pytest.approx(B_1E5, rel=1e-12)
    assert fbl_penalty_coefficient(1e-5) / math.log2(math.e) == pytest.approx(QINV_1E5, rel=1e-12)
    assert fbl_penalty_coefficient(EPS_Q3) == pytest.approx(B_Q3, rel=1e-12)
    # the rounded figure quoted alongside the definition is ~9e-6 relative high
    assert fbl_penalty_coefficient(1e-5) == pytest.approx(6.15299, rel=2e-5)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_penalty_coefficient_domain(eps):
    with pytest.raises(ValueError):
        fbl_penalty_coefficient(eps)


def test_stream_rate_examples():
    fbl = FblParams(256, 1e-5)
    assert symbol_vector_rate([0.0], fbl) == 0.0
    assert symbol_vector_rate([1.0], fbl) == pytest.approx(R_GAMMA1_N256, rel=1e-12)
    assert symbol_vector_rate([1.0], fbl) == pytest.approx(0.66697, abs=2e-5)
    assert symbol_vector_rate([1.0], FblParams(10**9, 1e-5)) == pytest.approx(1.0, abs=1e-3)


def test_rates_clamped_at_zero():
    assert stream_rates(1e-4, FblParams(100, 1e-5)) == 0.0


@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
def test_rate_approaches_shannon(gamma):
    g = [gamma, gamma / 2]
    shannon = sum(math.log2(1 + x) for x in g)
    assert abs(symbol_vector_rate(g, FblParams(10**9, 1e-5)) - shannon) < 1e-3


@settings(max_examples=100, deadline=None)
@given(gamma=gammas, n1=st.integers(1, 10**6), n2=st.integers(1, 10**6),
       eps=st.floats(1e-9, 0.49))
def test_rate_monotone_in_blocklength(gamma, n1, n2, eps):
    lo, hi = sorted((n1, n2))
    assert stream_rates(gamma, FblParams(lo, eps)) <= stream_rates(gamma, FblParams(hi, eps)) + 1e-12


@settings(max_examples=100, deadline=None)
@given(g=st.lists(gammas, min_size=1, max_size=4), N=st.integers(1, 10**5))
def test_fbl_below_shannon(g, N):
    assert symbol_vector_rate(g, FblParams(N, 1e-5)) <= sum(math.log2(1 + x) for x in g) + 1e-12


def test_siso_sinr_examples():
    ch, cfg = siso([1.0], {"Pt": 7.0})
    order = compute_decoding_order(ch, cfg)
    P = np.full((1, 1, 1), math.sqrt(7.0), dtype=complex)
    G = np.ones((1, 1, 1), dtype=complex)
    assert sinr_grid(ch, P, G, order, cfg)[0, 0] == pytest.approx(7.0)


@pytest.mark.parametrize("squared", [True, False])
def test_two_user_sinr(squared):
    ch, cfg = siso([1.0, 1.0], {"noise_norm_squared": squared})
    order = compute_decoding_order(ch, cfg)
    P = np.ones((2, 1, 1), dtype=complex)
    G = np.ones((2, 1, 1), dtype=complex)
    np.testing.assert_allclose(sinr_grid(ch, P, G, order, cfg)[:, 0], [0.5, 1.0])
    sdma = cfg.with_(scheme=Scheme.SDMA)
    np.testing.assert_allclose(sinr_grid(ch, P, G, order, sdma)[:, 0], [0.5, 0.5])


def test_zero_precoder_gives_zero_sinr():
    ch, cfg = siso([1.0, 2.0])
    order = compute_decoding_order(ch, cfg)
    P = np.zeros((2, 1, 1), dtype=complex)
    rep = user_rates(ch, P, np.ones((2, 1, 1), dtype=complex), order, cfg)
    assert np.all(rep.per_stream_sinr == 0) and rep.mmf == 0


def test_per_user_aggregation():
    cfg = SystemConfig(K=2, Nt=2, Nr=2, Pt=10, split_set={0})
    ch = generate_rayleigh_channels(cfg, 3)
    order = DecodingOrder(((0, FIRST), (1, WHOLE), (0, SECOND)))
    rng = np.random.default_rng(0)
    P = rng.normal(size=(3, 2, 2)) + 1j * rng.normal(size=(3, 2, 2))
    G = mmse_combiner_update(ch, P, order, cfg)
    rep = user_rates(ch, P, G, order, cfg)
    v = rep.per_symbol_vector
    np.testing.assert_allclose(rep.per_user, [v[0] + v[2], v[1]])
    assert rep.mmf == rep.per_user.min()
    P[1] = 0
    rep = user_rates(ch, P, G, order, cfg)
    assert rep.per_user[1] == 0 and rep.mmf == 0


def test_single_user_aggregation():
    cfg = SystemConfig(K=1, Nt=2, Nr=2, Pt=10)
    ch = generate_rayleigh_channels(cfg, 0)
    order = compute_decoding_order(ch, cfg)
    P = np.ones((1, 2, 2), dtype=complex)
    rep = user_rates(ch, P, mmse_combiner_update(ch, P, order, cfg), order, cfg)
    assert rep.per_user[0] == rep.per_symbol_vector[0]
    assert set(rep.to_dict()) == {"per_symbol_vector", "per_user", "mmf", "per_stream_sinr"}


def random_design(seed, K=2, Nt=2, Nr=2, split=frozenset(), scheme="RSMA", squared=True):
    cfg = SystemConfig(K=K, Nt=Nt, Nr=Nr, Pt=10, scheme=scheme, split_set=split,
                       noise_norm_squared=squared)
    ch = generate_rayleigh_channels(cfg, seed)
    order = compute_decoding_order(ch, cfg)
    rng = np.random.default_rng(seed)
    shape_p, shape_g = (cfg.M, Nt, cfg.L), (cfg.M, cfg.L, Nr)
    P = rng.normal(size=shape_p) + 1j * rng.normal(size=shape_p)
    G = rng.normal(size=shape_g) + 1j * rng.normal(size=shape_g)
    return ch, cfg, order, P, G


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_rsma_without_split_is_noma(seed):
    ch, cfg, order, P, G = random_design(seed, K=3)
    noma = cfg.with_(scheme=Scheme.NOMA)
    assert compute_decoding_order(ch, noma) == order
    assert user_rates(ch, P, G, order, cfg).identical_to(user_rates(ch, P, G, order, noma))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_sdma_never_beats_noma_per_stream(seed):
    ch, cfg, order, P, G = random_design(seed, K=3, scheme="NOMA")
    noma = sinr_grid(ch, P, G, order, cfg)
    sdma = sinr_grid(ch, P, G, order, cfg.with_(scheme=Scheme.SDMA))
    assert np.all(sdma <= noma * (1 + 1e-12))
    np.testing.assert_allclose(sdma[0], noma[0], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), mag=st.floats(0.01, 100), phase=st.floats(0, 2 * np.pi))
def test_combiner_scaling(seed, mag, phase):
    c = mag * np.exp(1j * phase)
    ch, cfg, order, P, G = random_design(seed, split={0})
    base = sinr_grid(ch, P, G, order, cfg)
    np.testing.assert_allclose(sinr_grid(ch, P, c * G, order, cfg), base, rtol=1e-9)
    # with the unsquared norm only unit-modulus scaling is an invariance
    lin = cfg.with_(noise_norm_squared=False)
    base = sinr_grid(ch, P, G, order, lin)
    unit = np.exp(1j * phase)
    np.testing.assert_allclose(sinr_grid(ch, P, unit * G, order, lin), base, rtol=1e-9)
    if abs(mag - 1) > 1e-3:
        assert not np.allclose(sinr_grid(ch, P, c * G, order, lin), base, rtol=1e-9)


def test_scalar_mmse():
    h, p = 0.7 - 0.2j, 1.3 + 0.4j
    ch = ChannelRealization(np.array([[[h]]]))
    cfg = SystemConfig(K=1, Nt=1, Nr=1, Pt=4)
    order = compute_decoding_order(ch, cfg)
    G = mmse_combiner_update(ch, np.array([[[p]]]), order, cfg)
    assert G[0, 0, 0] == pytest.approx(np.conj(h * p) / (abs(h * p) ** 2 + 1))


def test_mmse_orthogonal_channels():
    H = np.zeros((2, 4, 2), dtype=complex)
    H[0, :2] = [[1, 0.5j], [0.2, 1]]
    H[1, 2:] = [[0.3, 1], [1j, 0.4]]
    ch = ChannelRealization(H)
    cfg = SystemConfig(K=2, Nt=2, Nr=4, Pt=1, scheme="SDMA")
    order = compute_decoding_order(ch, cfg)
    P = np.ones((2, 2, 2), dtype=complex)
    G = mmse_combiner_update(ch, P, order, cfg)
    for m, user in enumerate(order.users):
        other = 1 - user
        # combiners lie in the span of the own channel, orthogonal to the other
        assert np.max(np.abs(G[m] @ H[other])) < 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), squared=st.booleans())
def test_mmse_maximises_sinr(seed, squared):
    ch, cfg, order, P, _ = random_design(seed, K=3, Nr=3, split={0}, squared=squared)
    G = mmse_combiner_update(ch, P, order, cfg)
    if not squared:
        # the unsquared noise term is not scale free; compare on unit-norm rows
        G = G / np.linalg.norm(G, axis=-1, keepdims=True)
    best = sinr_grid(ch, P, G, order, cfg)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        D = rng.normal(size=G.shape) + 1j * rng.normal(size=G.shape)
        probe = G + 0.3 * D
        if not squared:
            probe = probe / np.linalg.norm(probe, axis=-1, keepdims=True)
        assert np.all(sinr_grid(ch, P, probe, order, cfg) <= best + 1e-9)
