"""System configuration, Rayleigh channel generation and SIC decoding orders.

Users are indexed from 0. A symbol vector is identified by ``(user, part)``
where ``part`` is one of ``"first"``, ``"second"`` (the two halves of a
splitting user's message) or ``"whole"`` (non-splitting user).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

FIRST, SECOND, WHOLE = "first", "second", "whole"

# Channel generator identity; bump when the sampling recipe changes.
RNG_VERSION = "philox4x64-boxmuller-v1"

MAX_ENUMERATED_VECTORS = 6


class Scheme(str, Enum):
    RSMA = "RSMA"
    NOMA = "NOMA"
    SDMA = "SDMA"


class ConfigError(ValueError):
    """Raised for an inconsistent :class:`SystemConfig`."""


@dataclass(frozen=True)
class SystemConfig:
    K: int
    Nt: int
    Nr: int
    Pt: float
    N: int = 500
    epsilon: float = 1e-5
    sigma2: float = 1.0
    scheme: Scheme = Scheme.RSMA
    split_set: frozenset = field(default_factory=frozenset)
    # Noise after combining is sigma2 * ||g||^2 unless the printed
    # unsquared form sigma2 * ||g|| is requested.
    noise_norm_squared: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "split_set", frozenset(int(j) for j in self.split_set))
        if self.K < 1 or self.Nt < 1 or self.Nr < 1:
            raise ConfigError("K, Nt and Nr must be positive")
        if not self.Pt > 0 or not self.sigma2 > 0:
            raise ConfigError("Pt and sigma2 must be positive")
        if self.N < 1:
            raise ConfigError("blocklength N must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not self.split_set <= set(range(self.K)):
            raise ConfigError(f"split_set {sorted(self.split_set)} not within users 0..{self.K - 1}")
        if self.scheme is not Scheme.RSMA and self.split_set:
            raise ConfigError(f"{self.scheme.value} does not allow splitting users")

    @property
    def L(self) -> int:
        return min(self.Nt, self.Nr)

    @property
    def non_split(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.K) if k not in self.split_set)

    @property
    def M(self) -> int:
        return 2 * len(self.split_set) + self.K - len(self.split_set)

    @property
    def snr_db(self) -> float:
        return 10 * math.log10(self.Pt / self.sigma2)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "K": self.K, "Nt": self.Nt, "Nr": self.Nr, "Pt": self.Pt, "N": self.N,
            "epsilon": self.epsilon, "sigma2": self.sigma2, "scheme": self.scheme.value,
            "split_set": sorted(self.split_set), "noise_norm_squared": self.noise_norm_squared,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        if "snr_db" in d:
            d["Pt"] = d.get("sigma2", 1.0) * 10 ** (d.pop("snr_db") / 10)
        d["split_set"] = frozenset(d.get("split_set", ()))
        return cls(**d)


@dataclass(frozen=True)
class ChannelRealization:
    """Channel matrices ``H[k]`` of shape (Nr, Nt), stacked as (K, Nr, Nt)."""

    H: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        if H.ndim != 3:
            raise ValueError("H must have shape (K, Nr, Nt)")
        if not np.all(np.isfinite(H)):
            raise ValueError("channel entries must be finite")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def K(self) -> int:
        return self.H.shape[0]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.H, axis=(1, 2))

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.H).tobytes()).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "rng": RNG_VERSION,
            "shape": list(self.H.shape),
            "H": [[[[z.real, z.imag] for z in row] for row in Hk] for Hk in self.H.tolist()],
        })

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        d = json.loads(text)
        arr = np.asarray(d["H"], dtype=float)
        return cls(arr[..., 0] + 1j * arr[..., 1], seed=d.get("seed"))


def generate_rayleigh_channels(config: SystemConfig, seed: int) -> ChannelRealization:
    """Draw i.i.d. CN(0, 1) channel entries.

    Uniforms come from a Philox counter-based generator keyed by ``seed``;
    Gaussian pairs use the Box-Muller transform so the stream is stable across
    numpy releases.
    """
    n = config.K * config.Nr * config.Nt
    rng = np.random.Generator(np.random.Philox(key=seed))
    u1 = 1.0 - rng.random(n)  # (0, 1]
    u2 = rng.random(n)
    radius = np.sqrt(-np.log(u1))  # sqrt(-2 ln u) * (1/sqrt 2) for unit complex variance
    H = radius * np.exp(2j * np.pi * u2)
    return ChannelRealization(H.reshape(config.K, config.Nr, config.Nt), seed=seed)


@dataclass(frozen=True)
class DecodingOrder:
    entries: tuple[tuple[int, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((int(u), str(p)) for u, p in self.entries))
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("decoding order has repeated symbol vectors")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, m):
        return self.entries[m]

    @property
    def users(self) -> np.ndarray:
        return np.array([u for u, _ in self.entries], dtype=int)

    def position(self, user: int, part: str) -> int:
        return self.entries.index((user, part))

    def positions_of_user(self, user: int) -> list[int]:
        return [m for m, (u, _) in enumerate(self.entries) if u == user]

    def split_users(self) -> list[int]:
        return [u for u, p in self.entries if p == FIRST]

    def to_list(self) -> list:
        return [list(e) for e in self.entries]


def strongest_users(channels: ChannelRealization, count: int) -> frozenset:
    """The ``count`` users with the largest Frobenius norm (ties: lower index)."""
    ranked = _descending(range(channels.K), channels.norms())
    return frozenset(ranked[:count])


def _descending(users: Iterable[int], norms: np.ndarray) -> list[int]:
    return sorted(users, key=lambda k: (-norms[k], k))


def compute_decoding_order(channels: ChannelRealization, config: SystemConfig) -> DecodingOrder:
    """Low-complexity order: first halves, whole messages, second halves.

    Each block is sorted by descending channel norm; the second-half block
    mirrors the first-half ordering.
    """
    if channels.K != config.K:
        raise ValueError("channel count does not match config.K")
    norms = channels.norms()
    split = _descending(config.split_set, norms)
    whole = _descending(config.non_split, norms)
    entries = [(j, FIRST) for j in split] + [(u, WHOLE) for u in whole] + [(j, SECOND) for j in split]
    return DecodingOrder(tuple(entries))


def symbol_vectors(config: SystemConfig) -> list[tuple[int, str]]:
    vecs = []
    for k in range(config.K):
        if k in config.split_set:
            vecs += [(k, FIRST), (k, SECOND)]
        else:
            vecs.append((k, WHOLE))
    return vecs


def enumerate_decoding_orders(config: SystemConfig) -> list[DecodingOrder]:
    """Every permutation of the symbol vectors (small-instance oracle only)."""
    vecs = symbol_vectors(config)
    if len(vecs) > MAX_ENUMERATED_VECTORS:
        raise ValueError(f"{len(vecs)} symbol vectors: refusing to enumerate {len(vecs)}! orders")
    return [DecodingOrder(tuple(p)) for p in itertools.permutations(vecs)]


def validate_order(order: DecodingOrder, config: SystemConfig, *, strict_blocks: bool = True) -> None:
    if sorted(order.entries) != sorted(symbol_vectors(config)):
        raise ValueError("decoding order is not a permutation of the symbol vectors")
    if strict_blocks:
        rank = {FIRST: 0, WHOLE: 1, SECOND: 2}
        ranks = [rank[p] for _, p in order.entries]
        if ranks != sorted(ranks):
            raise ValueError("heuristic block structure violated")


def as_channels(H: Sequence | np.ndarray) -> ChannelRealization:
    return H if isinstance(H, ChannelRealization) else ChannelRealization(np.asarray(H))
