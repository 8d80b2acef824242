"""SINR and finite-blocklength rate evaluation.

Precoders are stored as a complex array ``P`` of shape (M, Nt, L) and
combiners as ``G`` of shape (M, L, Nr), both indexed by decoding-order
position: column ``a`` of ``P[m]`` and row ``a`` of ``G[m]`` serve stream
``a`` of the m-th decoded symbol vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .model import ChannelRealization, DecodingOrder, Scheme, SystemConfig

log = logging.getLogger(__name__)

LOG2E = math.log2(math.e)
POWER_RTOL = 1e-6


def fbl_penalty_coefficient(epsilon: float) -> float:
    """``Q^{-1}(epsilon) * log2(e)``."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon={epsilon} outside (0, 1)")
    # -ndtri(eps) keeps full relative accuracy for tiny eps, unlike ndtri(1 - eps)
    return float(-ndtri(epsilon)) * LOG2E


@dataclass(frozen=True)
class FblParams:
    N: int
    epsilon: float

    @property
    def B(self) -> float:
        return fbl_penalty_coefficient(self.epsilon)

    @property
    def penalty(self) -> float:
        """Coefficient multiplying sqrt(V) in the rate, B / sqrt(N)."""
        return self.B / math.sqrt(self.N)

    @classmethod
    def from_config(cls, config: SystemConfig) -> "FblParams":
        return cls(N=config.N, epsilon=config.epsilon)


def dispersion_sqrt(gamma):
    """sqrt(V) with V = 1 - (1 + gamma)^-2."""
    g = np.maximum(np.asarray(gamma, dtype=float), 0.0)
    return np.sqrt(1.0 - (1.0 + g) ** -2)


def stream_rate_raw(gamma, fbl: FblParams):
    """Unclamped per-stream normal-approximation rate."""
    g = np.maximum(np.asarray(gamma, dtype=float), 0.0)
    return np.log2(1.0 + g) - fbl.penalty * dispersion_sqrt(g)


def stream_rates(gamma, fbl: FblParams):
    """Per-stream rates clamped at zero."""
    return np.maximum(stream_rate_raw(gamma, fbl), 0.0)


def symbol_vector_rate(gammas, fbl: FblParams) -> float:
    return float(np.sum(stream_rates(gammas, fbl)))


def interference_mask(order: DecodingOrder, scheme: Scheme) -> np.ndarray:
    """``mask[m, j]`` is True when every stream of vector j interferes with vector m."""
    M = len(order)
    if Scheme(scheme) is Scheme.SDMA:
        users = order.users
        return users[None, :] != users[:, None]
    return np.triu(np.ones((M, M), dtype=bool), k=1)


def effective_channels(channels: ChannelRealization, P: np.ndarray, order: DecodingOrder) -> np.ndarray:
    """``E[m] = H_{user(m)} P[m]``, shape (M, Nr, L)."""
    return np.einsum("mrt,mtl->mrl", channels.H[order.users], P)


def noise_term(G: np.ndarray, config: SystemConfig) -> np.ndarray:
    norms = np.linalg.norm(G, axis=-1)
    return config.sigma2 * (norms**2 if config.noise_norm_squared else norms)


def sinr_grid(channels: ChannelRealization, P: np.ndarray, G: np.ndarray,
              order: DecodingOrder, config: SystemConfig) -> np.ndarray:
    """SINR of every stream, shape (M, L)."""
    E = effective_channels(channels, P, order)
    cross = np.abs(np.einsum("man,jni->maji", G, E)) ** 2
    M, L = G.shape[:2]
    idx_m, idx_a = np.meshgrid(np.arange(M), np.arange(L), indexing="ij")
    signal = cross[idx_m, idx_a, idx_m, idx_a]
    own = cross[idx_m, idx_a, idx_m, :].sum(axis=-1) - signal
    per_vector = cross.sum(axis=-1)  # (M, L, M)
    mask = interference_mask(order, config.scheme)
    other = np.einsum("maj,mj->ma", per_vector, mask.astype(float))
    denom = own + other + noise_term(G, config)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(signal > 0, signal / denom, 0.0)
    return np.maximum(gamma, 0.0)


def stream_sinr(channels, P, G, order, config, m: int, a: int) -> float:
    """SINR of stream ``a`` of the ``m``-th decoded symbol vector (0-based)."""
    return float(sinr_grid(channels, P, G, order, config)[m, a])


@dataclass(frozen=True)
class RateReport:
    per_symbol_vector: np.ndarray
    per_user: np.ndarray
    mmf: float
    per_stream_sinr: np.ndarray

    def to_dict(self) -> dict:
        return {
            "per_symbol_vector": self.per_symbol_vector.tolist(),
            "per_user": self.per_user.tolist(),
            "mmf": self.mmf,
            "per_stream_sinr": self.per_stream_sinr.tolist(),
        }

    def identical_to(self, other: "RateReport") -> bool:
        return (np.array_equal(self.per_symbol_vector, other.per_symbol_vector)
                and np.array_equal(self.per_user, other.per_user)
                and self.mmf == other.mmf
                and np.array_equal(self.per_stream_sinr, other.per_stream_sinr))


def aggregate_user_rates(vector_rates: np.ndarray, order: DecodingOrder, K: int) -> np.ndarray:
    per_user = np.zeros(K)
    np.add.at(per_user, order.users, vector_rates)
    return per_user


def user_rates(channels, P, G, order, config: SystemConfig, fbl: FblParams | None = None) -> RateReport:
    fbl = fbl or FblParams.from_config(config)
    gamma = sinr_grid(channels, P, G, order, config)
    vec = stream_rates(gamma, fbl).sum(axis=1)
    per_user = aggregate_user_rates(vec, order, config.K)
    return RateReport(vec, per_user, float(per_user.min()), gamma)


def power_per_user(P: np.ndarray, order: DecodingOrder, K: int) -> np.ndarray:
    per_vec = np.sum(np.abs(P) ** 2, axis=(1, 2))
    return aggregate_user_rates(per_vec, order, K)


def check_power(P: np.ndarray, order: DecodingOrder, config: SystemConfig) -> bool:
    return bool(np.all(power_per_user(P, order, config.K) <= config.Pt * (1 + POWER_RTOL)))


def mmse_combiner_update(channels, P, order, config: SystemConfig, *, intra_sic: bool = False) -> np.ndarray:
    """Linear MMSE combiners for every stream, shape (M, L, Nr).

    The covariance for stream ``a`` of vector ``m`` holds the vector's own
    streams, every interfering vector and white noise. With ``intra_sic`` the
    own-vector part keeps only streams ``a..L-1`` (earlier streams of the same
    vector are assumed cancelled, as in the link-level receiver); otherwise all
    own streams stay, which yields the SINR-maximising combiner for the rate
    model.
    """
    E = effective_channels(channels, P, order)
    M, Nr, L = E.shape
    mask = interference_mask(order, config.scheme)
    G = np.zeros((M, L, Nr), dtype=complex)
    for m in range(M):
        base = config.sigma2 * np.eye(Nr, dtype=complex)
        for j in np.flatnonzero(mask[m]):
            base += E[j] @ E[j].conj().T
        for a in range(L):
            own = E[m][:, a:] if intra_sic else E[m]
            cov = base + own @ own.conj().T
            G[m, a] = _solve_hermitian(cov, E[m][:, a])
    return G


def _solve_hermitian(cov: np.ndarray, h: np.ndarray) -> np.ndarray:
    # g = h^H cov^{-1}  <=>  g^H = cov^{-1} h  for Hermitian cov
    try:
        return np.linalg.solve(cov, h).conj()
    except np.linalg.LinAlgError:
        log.warning("singular MMSE covariance, regularising with 1e-12 I")
        return np.linalg.solve(cov + 1e-12 * np.eye(cov.shape[0]), h).conj()
