"""Link-level transmitter and MMSE-SIC receiver for a fixed precoder design.

Every stream ``(m, a)`` (symbol vector ``m`` in decoding order, stream ``a``)
gets an MCS from its design rate, is polar-encoded, shortened to
``S * log2(order)`` coded bits, interleaved and QAM-mapped into ``S`` symbols.
The receiver walks the decoding order stream by stream, combines with the
MMSE filter of the current residual, decodes and, on success, subtracts the
hard reconstruction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..model import ChannelRealization, DecodingOrder, Scheme, SystemConfig
from ..rates import FblParams, effective_channels, interference_mask, stream_rates
from .modulation import (DEFAULT_MCS_TABLE, McsEntry, bits_per_symbol, compute_llrs, deinterleave,
                         interleave, mcs_for_rate, qam_map)
from .polar import (LLR_CLIP, PolarCodeConfig, construct_frozen_set, design_snr_for_rate,
                    polar_decode_scl, polar_encode)

DEFAULT_S = 256


@dataclass(frozen=True)
class LinkSettings:
    S: int = DEFAULT_S
    list_size: int = 8
    crc_len: int = 0
    margin: float = 1.0
    noise_scale: float = 1.0  # 0 gives a noiseless link
    mcs_table: tuple = DEFAULT_MCS_TABLE


@dataclass(frozen=True)
class StreamPlan:
    """Coding parameters of one stream; ``code is None`` marks a silent stream."""

    m: int
    a: int
    mcs: McsEntry
    info_bits: int
    coded_bits: int
    code: PolarCodeConfig | None
    interleaver_seed: int

    @property
    def active(self) -> bool:
        return self.code is not None


def _code_for(info_bits: int, coded_bits: int, settings: LinkSettings) -> PolarCodeConfig:
    N = 1 << max(0, math.ceil(math.log2(coded_bits)))
    K = info_bits + settings.crc_len
    snr = design_snr_for_rate(K / coded_bits)
    frozen = construct_frozen_set(N, K, snr, usable=coded_bits)
    return PolarCodeConfig(N, K, frozen, settings.list_size, settings.crc_len)


def plan_streams(rates: np.ndarray, settings: LinkSettings = LinkSettings()) -> list[StreamPlan]:
    """AMC per stream from the design rates (bits/channel use), shape (M, L)."""
    plans = []
    M, L = rates.shape
    for m in range(M):
        for a in range(L):
            choice = mcs_for_rate(float(rates[m, a]), settings.S, settings.mcs_table, settings.margin)
            coded = settings.S * bits_per_symbol(choice.entry.order)
            code = None
            if choice.info_bits > 0 and choice.info_bits + settings.crc_len <= coded:
                code = _code_for(choice.info_bits, coded, settings)
            plans.append(StreamPlan(m, a, choice.entry, choice.info_bits if code else 0, coded, code,
                                    interleaver_seed=0x5EED + m * L + a))
    return plans


@dataclass
class Frame:
    info: dict  # (m, a) -> payload bits
    symbols: np.ndarray  # (M, L, S), zero rows for silent streams


@dataclass
class FrameResult:
    success: np.ndarray  # (M, L) bool; silent streams count as decoded
    D: np.ndarray  # recovered payload bits per user
    S_used: int
    sic_abort_position: int | None = None

    def to_dict(self) -> dict:
        return {"success": self.success.tolist(), "D": self.D.tolist(), "S": self.S_used,
                "sic_abort_position": self.sic_abort_position}


def _stream_symbols(bits: np.ndarray, plan: StreamPlan) -> np.ndarray:
    codeword = polar_encode(bits, plan.code)[: plan.coded_bits]  # tail is frozen to zero
    return qam_map(interleave(codeword, plan.interleaver_seed), plan.mcs.order)


def transmit(plans, M: int, L: int, S: int, rng: np.random.Generator) -> Frame:
    info = {}
    symbols = np.zeros((M, L, S), dtype=complex)
    for p in plans:
        if not p.active:
            continue
        bits = rng.integers(0, 2, p.code.payload_len, dtype=np.uint8)
        info[(p.m, p.a)] = bits
        symbols[p.m, p.a] = _stream_symbols(bits, p)
    return Frame(info, symbols)


def receive_signal(channels: ChannelRealization, P: np.ndarray, order: DecodingOrder, frame: Frame,
                   config: SystemConfig, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
    E = effective_channels(channels, P, order)  # (M, Nr, L)
    y = np.einsum("mrl,mls->rs", E, frame.symbols)
    if noise_scale > 0:
        std = math.sqrt(config.sigma2 * noise_scale / 2)
        y = y + std * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def mmse_sic_receive(y: np.ndarray, channels: ChannelRealization, P: np.ndarray, order: DecodingOrder,
                     config: SystemConfig, plans, *, reference: Frame | None = None,
                     fail_stages=()) -> FrameResult:
    """Decode every stream along the SIC chain.

    RSMA and NOMA use one chain over the whole decoding order; SDMA decodes
    each user against the full received signal, so each user has its own
    chain. A failed stream is not subtracted and every later stream of its
    chain is marked failed. ``fail_stages`` forces a failure on the first
    active stream of the listed decoding positions (test hook). With a
    ``reference`` frame, success means the payload matches it; otherwise the
    decoder flag is used.
    """
    M, L = len(order), config.L
    E = effective_channels(channels, P, order).copy()
    plan = {(p.m, p.a): p for p in plans}
    for (m, a), p in plan.items():
        if not p.active:
            E[m][:, a] = 0.0  # silent streams radiate nothing
    sdma = config.scheme is Scheme.SDMA
    mask = interference_mask(order, config.scheme)
    success = np.ones((M, L), dtype=bool)
    D = np.zeros(config.K)
    S = y.shape[1]
    abort = None
    chains = [[m] for m in range(M)] if sdma else [list(range(M))]
    noise = config.sigma2 * np.eye(y.shape[0])
    forced = set(fail_stages)
    for chain in chains:
        residual = y.copy()
        dead = False
        for m in chain:
            base = noise + sum((E[j] @ E[j].conj().T for j in np.flatnonzero(mask[m])), np.zeros_like(noise))
            for a in range(L):
                p = plan[(m, a)]
                if not p.active:
                    continue
                if dead:
                    success[m, a] = False
                    continue
                own = E[m][:, a + 1:]
                C = base + own @ own.conj().T  # everything still present except stream a
                e = E[m][:, a]
                w = np.linalg.solve(C, e)
                gamma = float(np.real(e.conj() @ w))
                # MMSE row g = e^H (C + e e^H)^-1 = w^H / (1 + gamma)
                combined = (w.conj() / (1 + gamma)) @ residual
                llr = deinterleave(compute_llrs(combined, gamma, p.mcs.order), p.interleaver_seed)
                llr = np.concatenate([llr, np.full(p.code.N - p.coded_bits, LLR_CLIP)])
                bits, flag = polar_decode_scl(llr, p.code)
                ok = bool(np.array_equal(bits, reference.info[(m, a)])) if reference else flag
                if m in forced:
                    ok = False
                    forced.discard(m)
                if not ok:
                    success[m, a] = False
                    dead = True
                    abort = m if abort is None else min(abort, m)
                    continue
                D[order[m][0]] += bits.size
                residual -= np.outer(e, _stream_symbols(bits, p))
    return FrameResult(success, D, S, abort)


def max_min_throughput(results) -> float:
    """Sum over trials of the worst user's recovered bits over total channel uses."""
    results = list(results)
    if not results:
        raise ValueError("need at least one frame result")
    return float(sum(r.D.min() for r in results) / sum(r.S_used for r in results))


@dataclass
class LinkReport:
    throughput: float
    theoretical_mmf: float
    frames: list = field(repr=False)
    plans: list = field(repr=False)

    @property
    def bler(self) -> float:
        active = [(r.success, p) for r in self.frames for p in self.plans if p.active]
        return float(np.mean([not s[p.m, p.a] for s, p in active])) if active else 0.0

    def rows(self):
        for i, r in enumerate(self.frames):
            yield {"frame": i, **r.to_dict()}


def design_stream_rates(per_stream_sinr: np.ndarray, config: SystemConfig) -> np.ndarray:
    return stream_rates(per_stream_sinr, FblParams.from_config(config))


def simulate_link(channels, P, order, config: SystemConfig, per_stream_sinr: np.ndarray, n_frames: int,
                  seed: int, settings: LinkSettings = LinkSettings()) -> LinkReport:
    """Run ``n_frames`` independent frames over one channel realisation."""
    rates = design_stream_rates(per_stream_sinr, config)
    plans = plan_streams(rates, settings)
    M, L = rates.shape
    frames = []
    for f in range(n_frames):
        rng = np.random.default_rng([seed, f])
        frame = transmit(plans, M, L, settings.S, rng)
        y = receive_signal(channels, P, order, frame, config, settings.noise_scale, rng)
        frames.append(mmse_sic_receive(y, channels, P, order, config, plans, reference=frame))
    mmf = float(np.min(np.bincount(order.users, weights=rates.sum(axis=1), minlength=config.K)))
    return LinkReport(max_min_throughput(frames), mmf, frames, plans)


def simulate_design(result, channels, n_frames: int, seed: int, settings: LinkSettings = LinkSettings()) -> LinkReport:
    """Link-level run of an :class:`~uplink_rsma.sca.AoResult`."""
    return simulate_link(channels, result.state.P, result.order, result.config,
                         result.report.per_stream_sinr, n_frames, seed, settings)


def frame_results_to_jsonl(results) -> str:
    return "".join(json.dumps(r.to_dict()) + "\n" for r in results)
