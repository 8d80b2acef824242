"""Gray-mapped square QAM, max-log LLRs, interleaving and the AMC table."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polar import LLR_CLIP

QAM_ORDERS = (4, 16, 64, 256)


def _gray_levels(bits_per_axis: int) -> np.ndarray:
    """PAM level for each axis label; label ``0`` maps to the largest level."""
    m = 1 << bits_per_axis
    labels = np.arange(m)
    index = labels.copy()
    # Gray decode: index = label ^ (label >> 1) ^ (label >> 2) ...
    shift = labels >> 1
    while np.any(shift):
        index ^= shift
        shift >>= 1
    return (m - 1) - 2.0 * index


@lru_cache(maxsize=None)
def qam_gray_table(order: int) -> np.ndarray:
    """Constellation indexed by the integer bit label (MSB first).

    The first half of the label bits select the in-phase level, the second
    half the quadrature level, each through its own Gray code.
    """
    if order not in QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order}")
    b = int(math.log2(order)) // 2
    levels = _gray_levels(b)
    labels = np.arange(order)
    i_lab, q_lab = labels >> b, labels & ((1 << b) - 1)
    table = (levels[i_lab] + 1j * levels[q_lab]) / math.sqrt(2 * (order - 1) / 3)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _label_bits(order: int) -> np.ndarray:
    m = int(math.log2(order))
    return ((np.arange(order)[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)


def bits_per_symbol(order: int) -> int:
    return int(math.log2(order))


def qam_map(bits, order: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    m = bits_per_symbol(order)
    if bits.size % m:
        raise ValueError(f"{bits.size} bits not divisible by {m}")
    weights = 1 << np.arange(m - 1, -1, -1)
    return qam_gray_table(order)[bits.reshape(-1, m) @ weights]


def compute_llrs(combined, gamma: float, order: int) -> np.ndarray:
    """Max-log LLRs of the combiner output ``combined = g y``.

    The MMSE output carries the symbol with gain ``phi = gamma / (1 + gamma)``;
    after removing it the distance metric is ``|g y / phi - a|^2`` and the
    LLR of bit i is ``gamma * (min over bit=1 - min over bit=0)``, positive
    when 0 is more likely.
    """
    combined = np.atleast_1d(np.asarray(combined, dtype=complex))
    m = bits_per_symbol(order)
    if gamma <= 0:
        return np.zeros(combined.size * m)
    phi = gamma / (1 + gamma)
    d = np.abs(combined[:, None] / phi - qam_gray_table(order)[None, :]) ** 2
    lab = _label_bits(order).astype(bool)
    llr = np.empty((combined.size, m))
    for i in range(m):
        one = lab[:, i]
        llr[:, i] = d[:, one].min(axis=1) - d[:, ~one].min(axis=1)
    return np.clip(gamma * llr, -LLR_CLIP, LLR_CLIP).ravel()


def interleaver(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def interleave(bits, seed: int) -> np.ndarray:
    bits = np.asarray(bits)
    return bits[interleaver(bits.size, seed)]


def deinterleave(values, seed: int) -> np.ndarray:
    values = np.asarray(values)
    out = np.empty_like(values)
    out[interleaver(values.size, seed)] = values
    return out


@dataclass(frozen=True)
class McsEntry:
    order: int
    code_rate: float

    @property
    def spectral_efficiency(self) -> float:
        return self.code_rate * bits_per_symbol(self.order)

    @property
    def threshold(self) -> float:
        """Smallest per-stream rate that activates this entry (margin 1)."""
        return self.spectral_efficiency

    def info_bits(self, S: int) -> int:
        return math.floor(S * self.spectral_efficiency + 1e-9)


# Code rates 1/4..5/6 on every QAM order; where two entries share a spectral
# efficiency the lower order is kept (e.g. 16-QAM r=3/4 over 64-QAM r=1/2).
DEFAULT_MCS_TABLE = (
    McsEntry(4, 1 / 4), McsEntry(4, 1 / 3), McsEntry(4, 1 / 2), McsEntry(4, 2 / 3),
    McsEntry(4, 3 / 4), McsEntry(4, 5 / 6),
    McsEntry(16, 1 / 2), McsEntry(16, 2 / 3), McsEntry(16, 3 / 4), McsEntry(16, 5 / 6),
    McsEntry(64, 2 / 3), McsEntry(64, 3 / 4), McsEntry(64, 5 / 6),
    McsEntry(256, 2 / 3), McsEntry(256, 3 / 4), McsEntry(256, 5 / 6),
)


def validate_mcs_table(table) -> None:
    se = [e.spectral_efficiency for e in table]
    if not table or any(b <= a for a, b in zip(se, se[1:])):
        raise ValueError("MCS thresholds must be strictly increasing")


@dataclass(frozen=True)
class McsChoice:
    entry: McsEntry
    info_bits: int


def select_mcs(stream_rate: float, table=DEFAULT_MCS_TABLE, margin: float = 1.0) -> McsEntry:
    """Highest entry whose spectral efficiency does not exceed ``rate * margin``.

    Rates below the lowest threshold still return the lowest entry; callers
    shrink its payload with :func:`mcs_for_rate`.
    """
    if stream_rate < 0:
        raise ValueError("rate must be non-negative")
    budget = stream_rate * margin
    chosen = table[0]
    for e in table:
        if e.spectral_efficiency <= budget + 1e-12:
            chosen = e
    return chosen


def mcs_for_rate(stream_rate: float, S: int, table=DEFAULT_MCS_TABLE, margin: float = 1.0) -> McsChoice:
    entry = select_mcs(stream_rate, table, margin)
    if entry.spectral_efficiency <= stream_rate * margin + 1e-12:
        return McsChoice(entry, entry.info_bits(S))
    # below the lowest threshold: same modulation, payload cut to the rate
    return McsChoice(entry, math.floor(S * stream_rate * margin))
