"""Polar codes: Kronecker-power encoder, Bhattacharyya construction, SCL decoder.

Codewords are ``x = u F^{(x)n}`` with ``F = [[1, 0], [1, 1]]`` in natural
index order (no bit reversal), so ``x_i`` is the XOR of every ``u_j`` whose
index bits contain those of ``i``. LLRs are positive when bit 0 is more
likely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

LLR_CLIP = 50.0


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class PolarCodeConfig:
    N: int
    K: int
    frozen: tuple = field(default=())
    list_size: int = 8
    crc_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frozen", tuple(sorted(int(i) for i in self.frozen)))
        if not _is_pow2(self.N):
            raise ValueError(f"code length {self.N} is not a power of two")
        if not 0 <= self.K <= self.N:
            raise ValueError("info length must lie in [0, N]")
        if len(self.frozen) != self.N - self.K or len(set(self.frozen)) != len(self.frozen):
            raise ValueError("frozen set must hold exactly N - K distinct indices")
        if self.frozen and not 0 <= self.frozen[0] <= self.frozen[-1] < self.N:
            raise ValueError("frozen index out of range")
        if self.list_size < 1:
            raise ValueError("list size must be >= 1")
        if self.crc_len not in CRC_POLYS:
            raise ValueError(f"unsupported CRC length {self.crc_len}")

    @property
    def n(self) -> int:
        return self.N.bit_length() - 1

    @property
    def frozen_mask(self) -> np.ndarray:
        mask = np.zeros(self.N, dtype=np.bool_)
        mask[list(self.frozen)] = True
        return mask

    @property
    def info_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen_mask)

    @property
    def payload_len(self) -> int:
        """Message bits carried once the CRC is appended."""
        return self.K - self.crc_len

    def to_json(self) -> str:
        return json.dumps({"N": self.N, "K": self.K, "frozen": list(self.frozen),
                           "list_size": self.list_size, "crc_len": self.crc_len})

    @classmethod
    def from_json(cls, text: str) -> "PolarCodeConfig":
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# construction

def bhattacharyya(N: int, design_snr_db: float) -> np.ndarray:
    """Bhattacharyya parameters of the N synthesised channels (BI-AWGN)."""
    if not _is_pow2(N):
        raise ValueError(f"code length {N} is not a power of two")
    z = np.array([math.exp(-(10 ** (design_snr_db / 10)))])
    while z.size < N:
        # the most significant index bit is polarised first (outermost
        # butterfly), so each stage appends a less significant bit
        nxt = np.empty(2 * z.size)
        nxt[0::2] = 2 * z - z * z
        nxt[1::2] = z * z
        z = nxt
    return z


@lru_cache(maxsize=256)
def _frozen_cached(N: int, K: int, design_snr_db: float, usable: int) -> tuple:
    z = bhattacharyya(N, design_snr_db)
    tail = list(range(usable, N))
    # worst first; ties broken towards the lower index
    ranked = sorted(range(usable), key=lambda i: (-z[i], i))
    return tuple(sorted(ranked[: usable - K] + tail))


def construct_frozen_set(N: int, K: int, design_snr_db: float = 0.0, *, usable: int | None = None) -> tuple:
    """Indices of the ``N - K`` least reliable synthesised channels.

    With ``usable < N`` the tail indices ``usable..N-1`` are always frozen,
    which zeroes the tail of every codeword so it can be shortened away.
    """
    usable = N if usable is None else usable
    if not 0 <= K <= usable <= N:
        raise ValueError("need 0 <= K <= usable <= N")
    return _frozen_cached(N, K, float(design_snr_db), usable)


def design_snr_for_rate(rate: float, margin_db: float = 1.0) -> float:
    """Es/N0 (dB) where a real-Gaussian BPSK link reaches ``rate``, plus a margin."""
    rate = min(max(rate, 1e-3), 0.999)
    return 10 * math.log10((2 ** (2 * rate) - 1) / 2) + margin_db


# --------------------------------------------------------------------------
# CRC

CRC_POLYS = {0: 0, 8: 0x07, 16: 0x1021, 24: 0x864CFB}


def crc_bits(bits: np.ndarray, length: int) -> np.ndarray:
    if length == 0:
        return np.zeros(0, dtype=np.uint8)
    poly, reg, top = CRC_POLYS[length], 0, 1 << (length - 1)
    mask = (1 << length) - 1
    for b in np.asarray(bits, dtype=np.uint8):
        fb = ((reg & top) != 0) ^ bool(b)
        reg = ((reg << 1) & mask) ^ (poly if fb else 0)
    return np.array([(reg >> (length - 1 - i)) & 1 for i in range(length)], dtype=np.uint8)


# --------------------------------------------------------------------------
# encoding

@numba.njit(cache=True)
def _transform(u):
    x = u.copy()
    N = x.size
    h = 1
    while h < N:
        for start in range(0, N, 2 * h):
            for j in range(start, start + h):
                x[j] ^= x[j + h]
        h *= 2
    return x


def polar_transform(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.uint8)
    if not _is_pow2(u.size):
        raise ValueError("length must be a power of two")
    return _transform(u.copy())


def polar_encode(bits, cfg: PolarCodeConfig) -> np.ndarray:
    """Encode ``payload_len`` message bits (CRC appended when configured)."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != cfg.payload_len:
        raise ValueError(f"expected {cfg.payload_len} bits, got {bits.size}")
    u = np.zeros(cfg.N, dtype=np.uint8)
    u[cfg.info_indices] = np.concatenate([bits, crc_bits(bits, cfg.crc_len)])
    return _transform(u)


# --------------------------------------------------------------------------
# successive cancellation list decoding

@numba.njit(cache=True, inline="always")
def _f(a, b):
    s = 1.0 if (a >= 0) == (b >= 0) else -1.0
    return s * min(abs(a), abs(b))


@numba.njit(cache=True)
def _scl(llr, frozen, L):
    """Returns (u paths (L, N), metrics (L,), number of live paths).

    Per path, ``alpha[2^s : 2^(s+1)]`` holds the LLRs of the active node at
    tree level ``s < n`` and ``beta`` the partial-sum codeword of its most
    recent left child. The channel LLRs (level ``n``) are shared. Only paths
    that fork are copied.
    """
    N = llr.size
    n = 0
    while (1 << n) < N:
        n += 1
    alpha = np.zeros((L, N))
    beta = np.zeros((L, N), dtype=np.uint8)
    u = np.zeros((L, N), dtype=np.uint8)
    pm = np.zeros(L)
    live = 1
    cand_pm = np.zeros(2 * L)
    cur = np.zeros(N, dtype=np.uint8)
    tmp = np.zeros(N, dtype=np.uint8)
    children = np.zeros(L, dtype=np.int64)
    first_bit = np.zeros(L, dtype=np.uint8)
    first_pm = np.zeros(L)
    for i in range(N):
        top = n
        if i > 0:
            tz = 0
            while (i >> tz) & 1 == 0:
                tz += 1
            top = tz + 1
        for p in range(live):
            s = top
            if i > 0:
                half = 1 << (s - 1)
                for j in range(half):
                    if s == n:
                        a, b = llr[j], llr[half + j]
                    else:
                        a, b = alpha[p, (1 << s) + j], alpha[p, (1 << s) + half + j]
                    alpha[p, half + j] = b + a if beta[p, half + j] == 0 else b - a
                s -= 1
            while s > 0:
                half = 1 << (s - 1)
                for j in range(half):
                    if s == n:
                        a, b = llr[j], llr[half + j]
                    else:
                        a, b = alpha[p, (1 << s) + j], alpha[p, (1 << s) + half + j]
                    alpha[p, half + j] = _f(a, b)
                s -= 1
        if frozen[i]:
            for p in range(live):
                lam = alpha[p, 1] if n > 0 else llr[0]
                if lam < 0:
                    pm[p] += -lam
                u[p, i] = 0
        else:
            for p in range(live):
                lam = alpha[p, 1] if n > 0 else llr[0]
                cand_pm[2 * p] = pm[p] + (-lam if lam < 0 else 0.0)
                cand_pm[2 * p + 1] = pm[p] + (lam if lam > 0 else 0.0)
            # stable sort keeps the bit-0 candidate first on ties
            order = np.argsort(cand_pm[: 2 * live], kind="mergesort")
            keep = min(L, 2 * live)
            children[:] = 0
            for q in range(keep):
                c = order[q]
                sp = c // 2
                if children[sp] == 0:
                    first_bit[sp] = c % 2
                    first_pm[sp] = cand_pm[c]
                children[sp] += 1
            # slots whose path died, plus never-used slots
            free = np.empty(L, dtype=np.int64)
            nfree = 0
            for p in range(live):
                if children[p] == 0:
                    free[nfree] = p
                    nfree += 1
            for p in range(live, L):
                free[nfree] = p
                nfree += 1
            fi = 0
            old_live = live
            for p in range(old_live):
                if children[p] == 2:
                    q = free[fi]
                    fi += 1
                    alpha[q] = alpha[p]
                    beta[q] = beta[p]
                    for j in range(i):
                        u[q, j] = u[p, j]
                    u[q, i] = 1 - first_bit[p]
                    pm[q] = cand_pm[2 * p + 1 - first_bit[p]]
                if children[p] >= 1:
                    u[p, i] = first_bit[p]
                    pm[p] = first_pm[p]
            # compact live paths into slots 0..keep-1
            dst = 0
            for p in range(L):
                alive = (p < old_live and children[p] >= 1)
                if not alive:
                    for f in range(fi):
                        if free[f] == p:
                            alive = True
                if alive:
                    if p != dst:
                        alpha[dst] = alpha[p]
                        beta[dst] = beta[p]
                        u[dst, : i + 1] = u[p, : i + 1]
                        pm[dst] = pm[p]
                    dst += 1
            live = keep
        for p in range(live):
            cur[0] = u[p, i]
            size = 1
            s = 0
            while s < n and (i >> s) & 1 == 1:
                off = 1 << s
                for j in range(size):
                    tmp[j] = beta[p, off + j] ^ cur[j]
                    tmp[size + j] = cur[j]
                size *= 2
                for j in range(size):
                    cur[j] = tmp[j]
                s += 1
            if s < n:
                off = 1 << s
                for j in range(size):
                    beta[p, off + j] = cur[j]
    return u, pm, live


def polar_decode_scl(llrs, cfg: PolarCodeConfig, list_size: int | None = None):
    """Decode ``llrs`` (length N); returns ``(message bits, success flag)``.

    Without CRC the most likely path is returned and the flag reports whether
    its codeword agrees with the hard decisions of ``llrs``. With CRC the
    flag is the CRC check of the selected path.
    """
    llrs = np.clip(np.asarray(llrs, dtype=float), -LLR_CLIP, LLR_CLIP)
    if llrs.size != cfg.N:
        raise ValueError(f"expected {cfg.N} LLRs, got {llrs.size}")
    L = list_size or cfg.list_size
    paths, pm, live = _scl(llrs, cfg.frozen_mask, L)
    info = cfg.info_indices
    # slots are not metric-ordered after compaction; argmin keeps the lower slot on ties
    best = int(np.argmin(pm[:live]))
    ok = None
    if cfg.crc_len:
        ok = False
        for p in np.argsort(pm[:live], kind="stable"):
            bits = paths[p, info]
            msg, crc = bits[: cfg.payload_len], bits[cfg.payload_len:]
            if np.array_equal(crc_bits(msg, cfg.crc_len), crc):
                best, ok = p, True
                break
    bits = paths[best, info][: cfg.payload_len].copy()
    if ok is None:
        hard = (llrs < 0).astype(np.uint8)
        ok = bool(np.array_equal(_transform(paths[best].copy()), hard))
    return bits, ok
