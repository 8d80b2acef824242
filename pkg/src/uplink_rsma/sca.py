"""SCA-based alternating optimisation of precoders and combiners for MMF.

Each outer iteration solves two convex surrogates built around the current
iterate ``(P, G, rho)``:

* precoder step: combiners fixed, the SINR constraint ``|x|^2 / rho >= I + n``
  is replaced by its first-order under-estimator in ``(x, rho)`` around the
  incumbent, and ``sqrt(V(rho))`` by its tangent (an over-estimator since it
  is concave);
* combiner step: the same with the roles of ``p`` and ``g`` exchanged.

Both surrogates are tight at the incumbent, so the objective trace is
non-decreasing.

Variable layout of a subproblem (all real): the realified design block
(stream-major, interleaved re/im), then one ``rho`` per active stream, then
``t``, then one auxiliary rate per active stream, then (unsquared-noise
combiner step only) one norm bound per stream.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .conic import ConicProgram, SolverSettings
from .model import (FIRST, SECOND, WHOLE, ChannelRealization, ConfigError, DecodingOrder, Scheme,
                    SystemConfig, compute_decoding_order)
from .rates import (FblParams, RateReport, aggregate_user_rates, effective_channels,
                    interference_mask, mmse_combiner_update, power_per_user, sinr_grid,
                    stream_rate_raw, user_rates)

log = logging.getLogger(__name__)

RHO_FLOOR = 1e-6
BEST_OF_SPLIT = 0.01
LN2 = math.log(2.0)

INIT_STRATEGIES = ("svd-mmse", "noma-warm-start", "best-of", "given")


@dataclass(frozen=True)
class DesignState:
    P: np.ndarray  # (M, Nt, L)
    G: np.ndarray  # (M, L, Nr)
    rho: np.ndarray  # (M, L); zero marks a switched-off stream
    t: float
    iteration: int = 0

    @property
    def active(self) -> np.ndarray:
        return self.rho >= RHO_FLOOR


@dataclass(frozen=True)
class DispersionTangent:
    point: np.ndarray
    value: np.ndarray
    slope: np.ndarray

    def __call__(self, rho):
        return self.value + self.slope * (np.asarray(rho) - self.point)


def linearize_dispersion(rho_prev) -> DispersionTangent:
    """Tangent of sqrt(1 - (1 + rho)^-2) at ``max(rho_prev, RHO_FLOOR)``."""
    r = np.maximum(np.asarray(rho_prev, dtype=float), RHO_FLOOR)
    inv = 1.0 / (1.0 + r)
    v = 1.0 - inv**2
    return DispersionTangent(r, np.sqrt(v), inv**3 / np.sqrt(v))


@dataclass
class AoSettings:
    tau: float = 1e-4
    max_outer_iters: int = 100
    solver: SolverSettings = field(default_factory=SolverSettings)
    init_strategy: str = "svd-mmse"
    # share of a splitting user's power moved to the second part at warm start
    warm_split: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if not 0 <= self.warm_split < 1:
            raise ValueError("warm_split must lie in [0, 1)")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")


# --------------------------------------------------------------------------
# initialisation

def svd_precoders(channels: ChannelRealization, order: DecodingOrder, config: SystemConfig) -> np.ndarray:
    L = config.L
    P = np.zeros((len(order), config.Nt, L), dtype=complex)
    for m, (user, part) in enumerate(order):
        _, _, vh = np.linalg.svd(channels.H[user])
        V = vh.conj().T[:, :L]
        share = 0.5 if part in (FIRST, SECOND) else 1.0
        P[m] = V * math.sqrt(share * config.Pt / L)
    return P


def normalize_rows(G: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(G, axis=-1, keepdims=True)
    return np.where(n > 0, G / np.where(n > 0, n, 1.0), G)


def surrogate_user_rates(rho: np.ndarray, order: DecodingOrder, K: int, fbl: FblParams) -> np.ndarray:
    raw = np.where(rho >= RHO_FLOOR, stream_rate_raw(rho, fbl), 0.0)
    return aggregate_user_rates(raw.sum(axis=1), order, K)


def state_from_design(channels, P, G, order, config, fbl, iteration=0) -> DesignState:
    """Tight slack state for a given design: ``rho`` equals the actual SINRs."""
    if config.noise_norm_squared:
        G = normalize_rows(G)
    rho = sinr_grid(channels, P, G, order, config)
    rho = np.where(rho >= RHO_FLOOR, rho, 0.0)
    t = float(surrogate_user_rates(rho, order, config.K, fbl).min())
    return DesignState(P, G, rho, t, iteration)


def initialize_state(channels, order, config: SystemConfig, fbl: FblParams | None = None) -> DesignState:
    """Right singular vectors at equal per-stream power, MMSE combiners.

    Splitting users give half their budget to each message part.
    """
    fbl = fbl or FblParams.from_config(config)
    P = svd_precoders(channels, order, config)
    G = mmse_combiner_update(channels, P, order, config)
    return state_from_design(channels, P, G, order, config, fbl)


# --------------------------------------------------------------------------
# subproblem construction

@dataclass
class Layout:
    block: str
    M: int
    L: int
    dim: int
    active: np.ndarray
    rho_index: np.ndarray
    rate_index: np.ndarray
    t_index: int
    norm_index: np.ndarray | None
    n_vars: int
    # solver variables are scaled: block = block_scale * y, rho = rho_scale * y
    block_scale: float = 1.0
    rho_scale: np.ndarray | None = None

    @property
    def n_design(self) -> int:
        """Design variables + active slacks + t (auxiliary variables excluded)."""
        return self.M * self.L * self.dim * 2 + int(self.active.sum()) + 1

    def base(self, m: int, a: int) -> int:
        return (m * self.L + a) * self.dim * 2

    def unpack_block(self, x: np.ndarray) -> np.ndarray:
        """Complex block of shape (M, L, dim)."""
        z = x[: self.M * self.L * self.dim * 2].reshape(self.M, self.L, self.dim, 2)
        return self.block_scale * (z[..., 0] + 1j * z[..., 1])

    def unpack_rho(self, x: np.ndarray) -> np.ndarray:
        rho = np.zeros((self.M, self.L))
        rho[self.active] = np.maximum(x[self.rho_index[self.active]], 0.0) * self.rho_scale[self.active]
        return rho

    def pack(self, block: np.ndarray, rho: np.ndarray, t: float, rates=None) -> np.ndarray:
        """Solver vector for a physical point (``block`` shaped (M, L, dim)).

        Auxiliary rates default to ``t``-feasible values only when given.
        """
        x = np.zeros(self.n_vars)
        y = np.asarray(block) / self.block_scale
        x[: self.M * self.L * self.dim * 2] = np.stack([y.real, y.imag], axis=-1).ravel()
        x[self.rho_index[self.active]] = rho[self.active] / self.rho_scale[self.active]
        x[self.t_index] = t
        if rates is not None:
            x[self.rate_index[self.active]] = rates[self.active]
        if self.norm_index is not None:
            x[self.norm_index] = np.linalg.norm(y, axis=-1)
        return x


def _make_layout(block, M, L, dim, active, extra_norms: bool, block_scale: float, rho0) -> Layout:
    n_block = M * L * dim * 2
    n_active = int(active.sum())
    rho_index = np.full((M, L), -1)
    rho_index[active] = n_block + np.arange(n_active)
    t_index = n_block + n_active
    rate_index = np.full((M, L), -1)
    rate_index[active] = t_index + 1 + np.arange(n_active)
    n = t_index + 1 + n_active
    norm_index = None
    if extra_norms:
        norm_index = (n + np.arange(M * L)).reshape(M, L)
        n += M * L
    rho_scale = np.where(active, np.maximum(rho0, RHO_FLOOR), 1.0)
    return Layout(block, M, L, dim, active, rho_index, rate_index, t_index, norm_index, n,
                  block_scale, rho_scale)


def _clin(v: np.ndarray, base: int, n: int) -> np.ndarray:
    """Rows (Re, Im) of the complex linear form ``sum_i v_i y_i`` over the block at ``base``."""
    rows = np.zeros((2, n))
    d = len(v)
    rows[0, base:base + 2 * d:2] = v.real
    rows[0, base + 1:base + 2 * d:2] = -v.imag
    rows[1, base:base + 2 * d:2] = v.imag
    rows[1, base + 1:base + 2 * d:2] = v.real
    return rows


def _add_sinr_soc(prog, lay, m, a, x_rows, x0, rho0, z_rows, noise_const, noise_aux=None):
    """Linearised SINR constraint, divided through by D0 = |x0|^2 / rho0:

        ||z||^2 / D0 <= 2 Re{x conj(x0)} / |x0|^2 - rho / rho0 - n / D0
    """
    n = prog.n_vars
    x0_sq = abs(x0) ** 2
    D0 = x0_sq / rho0
    s_row = 2.0 * (x0.real * x_rows[0] + x0.imag * x_rows[1]) / x0_sq
    s_row[lay.rho_index[m, a]] -= lay.rho_scale[m, a] / rho0
    s_const = -noise_const / D0
    if noise_aux is not None:
        idx, coef = noise_aux
        s_row[idx] -= coef / D0
    Z = z_rows / math.sqrt(D0) if len(z_rows) else np.zeros((0, n))
    prog.add_soc(np.vstack([2.0 * Z, s_row[None, :]]),
                 np.concatenate([np.zeros(Z.shape[0]), [s_const - 1.0]]),
                 s_row, s_const + 1.0)


def _add_rate_constraints(prog, lay, state, order, config, fbl):
    n = prog.n_vars
    tan = linearize_dispersion(state.rho)
    c = fbl.penalty
    for m, a in zip(*np.nonzero(lay.active)):
        r, q = lay.rate_index[m, a], lay.rho_index[m, a]
        A = np.zeros((3, n))
        A[0, r] = LN2
        A[0, q] = LN2 * c * tan.slope[m, a] * lay.rho_scale[m, a]
        A[2, q] = lay.rho_scale[m, a]
        b = np.array([LN2 * c * (tan.value[m, a] - tan.slope[m, a] * tan.point[m, a]), 1.0, 1.0])
        prog.add_exp(A, b)
    rho_rows = np.zeros((int(lay.active.sum()), n))
    rho_rows[np.arange(len(rho_rows)), lay.rho_index[lay.active]] = 1.0
    if len(rho_rows):
        prog.add_nonneg(rho_rows, np.zeros(len(rho_rows)))
    users = order.users
    rows = np.zeros((config.K, n))
    rows[:, lay.t_index] = -1.0
    for m, a in zip(*np.nonzero(lay.active)):
        rows[users[m], lay.rate_index[m, a]] += 1.0
    prog.add_nonneg(rows, np.zeros(config.K))


def _objective(lay) -> np.ndarray:
    c = np.zeros(lay.n_vars)
    c[lay.t_index] = 1.0
    return c


def _incumbent_signal_ok(x0: complex) -> bool:
    return abs(x0) ** 2 > 0.0


def build_precoder_subproblem(state: DesignState, channels, order, config: SystemConfig,
                              fbl: FblParams | None = None) -> ConicProgram:
    fbl = fbl or FblParams.from_config(config)
    M, L, Nt = len(order), config.L, config.Nt
    H = channels.H[order.users]  # (M, Nr, Nt)
    mask = interference_mask(order, config.scheme)
    # v[m, a, j] = g_m^a H_{user(j)}: coefficients of stream (m, a)'s view of vector j
    V = np.einsum("man,jnt->majt", state.G, H)
    x0 = np.einsum("mat,mta->ma", V[np.arange(M), :, np.arange(M)], state.P)
    active = state.active & (np.abs(x0) ** 2 > 0)
    scale = math.sqrt(config.Pt)
    lay = _make_layout("precoder", M, L, Nt, active, False, scale, state.rho)
    prog = ConicProgram(lay.n_vars, _objective(lay), layout=lay)
    n = lay.n_vars
    noise = config.sigma2 * (np.linalg.norm(state.G, axis=-1) ** (2 if config.noise_norm_squared else 1))

    for m, a in zip(*np.nonzero(active)):
        Vs = V[m, a] * scale
        x_rows = _clin(Vs[m], lay.base(m, a), n)
        z = [_clin(Vs[m], lay.base(m, i), n) for i in range(L) if i != a]
        z += [_clin(Vs[j], lay.base(j, i), n) for j in np.flatnonzero(mask[m]) for i in range(L)]
        z_rows = np.vstack(z) if z else np.zeros((0, n))
        _add_sinr_soc(prog, lay, m, a, x_rows, x0[m, a], state.rho[m, a], z_rows, noise[m, a])

    _add_rate_constraints(prog, lay, state, order, config, fbl)

    for k in range(config.K):
        idx = []
        for m in order.positions_of_user(k):
            for a in range(L):
                b = lay.base(m, a)
                idx.extend(range(b, b + 2 * Nt))
        A = np.zeros((len(idx), n))
        A[np.arange(len(idx)), idx] = 1.0
        prog.add_soc(A, np.zeros(len(idx)), np.zeros(n), 1.0)
    return prog


def build_combiner_subproblem(state: DesignState, channels, order, config: SystemConfig,
                              fbl: FblParams | None = None) -> ConicProgram:
    fbl = fbl or FblParams.from_config(config)
    M, L, Nr = len(order), config.L, config.Nr
    E = effective_channels(channels, state.P, order)  # (M, Nr, L)
    mask = interference_mask(order, config.scheme)
    x0 = np.einsum("man,mna->ma", state.G, E)
    active = state.active & (np.abs(x0) ** 2 > 0)
    squared = config.noise_norm_squared
    lay = _make_layout("combiner", M, L, Nr, active, not squared, 1.0, state.rho)
    prog = ConicProgram(lay.n_vars, _objective(lay), layout=lay)
    n = lay.n_vars
    sig = math.sqrt(config.sigma2)

    for m in range(M):
        for a in range(L):
            base = lay.base(m, a)
            if not squared:
                A = np.zeros((2 * Nr, n))
                A[np.arange(2 * Nr), base + np.arange(2 * Nr)] = 1.0
                a_vec = np.zeros(n)
                a_vec[lay.norm_index[m, a]] = 1.0
                prog.add_soc(A, np.zeros(2 * Nr), a_vec, 0.0)
            if not active[m, a]:
                # switched-off stream: keep its combiner bounded
                A = np.zeros((2 * Nr, n))
                A[np.arange(2 * Nr), base + np.arange(2 * Nr)] = 1.0
                prog.add_soc(A, np.zeros(2 * Nr), np.zeros(n), 1.0)
                continue
            x_rows = _clin(E[m][:, a], base, n)
            z = [_clin(E[m][:, i], base, n) for i in range(L) if i != a]
            z += [_clin(E[j][:, i], base, n) for j in np.flatnonzero(mask[m]) for i in range(L)]
            aux = None
            if squared:
                eye = np.zeros((2 * Nr, n))
                eye[np.arange(2 * Nr), base + np.arange(2 * Nr)] = sig
                z.append(eye)
            else:
                aux = (lay.norm_index[m, a], config.sigma2)
            z_rows = np.vstack(z) if z else np.zeros((0, n))
            _add_sinr_soc(prog, lay, m, a, x_rows, x0[m, a], state.rho[m, a], z_rows, 0.0, aux)

    _add_rate_constraints(prog, lay, state, order, config, fbl)
    return prog


# --------------------------------------------------------------------------
# alternating optimisation

@dataclass
class AoResult:
    state: DesignState
    order: DecodingOrder
    config: SystemConfig
    trace: list
    statuses: list
    report: RateReport
    converged: bool
    status: str = "ok"

    @property
    def mmf(self) -> float:
        return self.report.mmf

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    def summary(self) -> dict:
        return {
            "scheme": self.config.scheme.value,
            "split_set": sorted(self.config.split_set),
            "order": self.order.to_list(),
            "mmf": self.mmf,
            "t": self.state.t,
            "per_user": self.report.per_user.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
        }


def _solve_block(prog: ConicProgram, settings: SolverSettings):
    sol = conic.solve(prog, settings)
    if not sol.ok:
        sol = conic.solve(prog, settings.loosened())
    return sol


def _precoder_step(state, channels, order, config, fbl, settings):
    prog = build_precoder_subproblem(state, channels, order, config, fbl)
    sol = _solve_block(prog, settings)
    if not sol.ok:
        return state, sol.status
    lay = prog.layout
    P = np.transpose(lay.unpack_block(sol.x), (0, 2, 1))  # (M, L, Nt) -> (M, Nt, L)
    P = _project_power(P, order, config)
    return replace(state, P=P, rho=lay.unpack_rho(sol.x), t=float(sol.x[lay.t_index])), sol.status


def _combiner_step(state, channels, order, config, fbl, settings):
    prog = build_combiner_subproblem(state, channels, order, config, fbl)
    sol = _solve_block(prog, settings)
    if not sol.ok:
        return state, sol.status
    lay = prog.layout
    G = lay.unpack_block(sol.x)
    rho = lay.unpack_rho(sol.x)
    if config.noise_norm_squared:
        # SINR is invariant to row scaling; keep combiners O(1) for the next surrogate
        G = np.where(lay.active[..., None], normalize_rows(G), state.G)
    return replace(state, G=G, rho=rho, t=float(sol.x[lay.t_index])), sol.status


def _project_power(P, order, config):
    # solver tolerance can overshoot the budget by ~1e-9 relative
    scale = np.sqrt(np.maximum(power_per_user(P, order, config.K) / config.Pt, 1.0))
    return P / scale[order.users][:, None, None]


def warm_start_from(prev: AoResult, channels, order, config, fbl, split: float = 0.0) -> DesignState:
    """Embed a design whose split set is a subset of ``order``'s.

    Parts the previous design already had keep their precoders and combiners;
    a newly split user's first part inherits its whole message. With
    ``split == 0`` new second parts start switched off and the previous
    iterate is reproduced exactly when the powered vectors keep their
    relative order; otherwise a ``split`` share of each newly split user's
    power moves to the second part and combiners are refreshed by MMSE.
    """
    src = {entry: m for m, entry in enumerate(prev.order)}
    s = prev.state
    M, L = len(order), config.L
    P = np.zeros((M, config.Nt, L), dtype=complex)
    G = np.zeros((M, L, config.Nr), dtype=complex)
    rho = np.zeros((M, L))
    new_splits = []
    for m, (u, part) in enumerate(order):
        key = (u, part)
        if key not in src and part == FIRST:
            key = (u, WHOLE)
            new_splits.append(u)
        if key in src:
            P[m], G[m], rho[m] = s.P[src[key]], s.G[src[key]], s.rho[src[key]]
        elif part != SECOND:
            raise ValueError(f"previous design has no vector for user {u}")
    if split > 0 and new_splits:
        for u in new_splits:
            m1, m2 = order.position(u, FIRST), order.position(u, SECOND)
            P[m2] = P[m1] * math.sqrt(split)
            P[m1] = P[m1] * math.sqrt(1 - split)
        G = mmse_combiner_update(channels, P, order, config)
        return state_from_design(channels, P, G, order, config, fbl)
    t = float(surrogate_user_rates(rho, order, config.K, fbl).min())
    return DesignState(P, G, rho, t)


def warm_start_from_noma(noma: AoResult, channels, order, config, fbl, split: float = 0.0) -> DesignState:
    """Embed a NOMA design into an RSMA order (see :func:`warm_start_from`)."""
    return warm_start_from(noma, channels, order, config, fbl, split)


def run_ao(state: DesignState, channels, order, config, fbl, settings: AoSettings) -> AoResult:
    trace = [state.t]
    statuses = []
    converged = stalled = False
    for n in range(1, settings.max_outer_iters + 1):
        state, st_p = _precoder_step(state, channels, order, config, fbl, settings.solver)
        state, st_g = _combiner_step(state, channels, order, config, fbl, settings.solver)
        state = replace(state, iteration=n)
        statuses.append((st_p, st_g))
        trace.append(state.t)
        if st_p != conic.OPTIMAL and st_g != conic.OPTIMAL:
            stalled = True
            break
        # a frozen block leaves t unchanged, which is not evidence of convergence
        if st_p == st_g == conic.OPTIMAL and abs(trace[-1] - trace[-2]) <= settings.tau:
            converged = True
            break
    failed = any(s != conic.OPTIMAL for pair in statuses for s in pair)
    report = user_rates(channels, state.P, state.G, order, config, fbl)
    status = "stalled" if stalled else ("block-failure" if failed else "ok")
    return AoResult(state, order, config, trace, statuses, report, converged, status)


def solve_mmf(channels, config: SystemConfig, fbl: FblParams | None = None,
              settings: AoSettings | None = None, *, initial: DesignState | None = None,
              order: DecodingOrder | None = None) -> AoResult:
    """Run the AO loop from the configured starting point.

    ``best-of`` (RSMA only) runs the SVD-MMSE start and a warm start from a
    nested design (both with the new second parts off and with
    ``warm_split``) and keeps the design with the largest true MMF. The
    nested design is NOMA for one split user and otherwise the best-of
    design without the weakest split user, so the MMF cannot drop as users
    are added to the split set.
    """
    fbl = fbl or FblParams.from_config(config)
    settings = settings or AoSettings()
    order = order or compute_decoding_order(channels, config)
    strategy = settings.init_strategy
    if initial is not None:
        return run_ao(initial, channels, order, config, fbl, settings)
    if strategy == "given":
        raise ValueError("init_strategy='given' requires an initial state")
    if strategy == "svd-mmse" or not config.split_set:
        return run_ao(initialize_state(channels, order, config, fbl), channels, order, config, fbl, settings)
    base = replace(settings, init_strategy="svd-mmse")
    if strategy == "noma-warm-start":
        state = warm_start_from_noma(solve_mmf_noma(channels, config, fbl, base), channels, order, config, fbl,
                                     settings.warm_split)
        return run_ao(state, channels, order, config, fbl, settings)
    # nest: seed from the best design that drops the weakest split user (NOMA
    # for one split user), so the start contains the smaller design exactly
    if len(config.split_set) > 1:
        weakest = order.split_users()[-1]
        prev = solve_mmf(channels, config.with_(split_set=config.split_set - {weakest}), fbl, settings)
    else:
        prev = solve_mmf_noma(channels, config, fbl, base)
    splits = sorted({0.0, settings.warm_split or BEST_OF_SPLIT})
    starts = [initialize_state(channels, order, config, fbl)]
    starts += [warm_start_from(prev, channels, order, config, fbl, d) for d in splits]
    runs = [run_ao(s0, channels, order, config, fbl, settings) for s0 in starts]
    return max(runs, key=lambda r: r.mmf)  # ties keep the earliest start


def solve_mmf_noma(channels, config: SystemConfig, fbl=None, settings=None) -> AoResult:
    return solve_mmf(channels, config.with_(scheme=Scheme.NOMA, split_set=frozenset()), fbl, settings)


def solve_mmf_sdma(channels, config: SystemConfig, fbl=None, settings=None) -> AoResult:
    if config.split_set:
        raise ConfigError("SDMA does not allow splitting users")
    return solve_mmf(channels, config.with_(scheme=Scheme.SDMA), fbl, settings)
