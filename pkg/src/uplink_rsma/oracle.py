"""Brute-force reference for the two-user single-antenna NOMA toy problem."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChannelRealization, Scheme, SystemConfig
from .rates import FblParams, stream_rates


@dataclass(frozen=True)
class ToyOracle:
    mmf: float
    p: tuple  # transmit amplitudes of users 0 and 1
    g: float


def toy_channels(h1: float, h2: float) -> ChannelRealization:
    return ChannelRealization(np.array([h1, h2], dtype=complex).reshape(2, 1, 1))


def toy_config(Pt: float, N: int = 500, epsilon: float = 1e-5, scheme=Scheme.NOMA,
               split_set=frozenset(), noise_norm_squared: bool = True) -> SystemConfig:
    return SystemConfig(K=2, Nt=1, Nr=1, Pt=Pt, N=N, epsilon=epsilon, scheme=scheme,
                        split_set=split_set, noise_norm_squared=noise_norm_squared)


def toy_grid_search(h1: float, h2: float, config: SystemConfig, grid: int = 200,
                    chunk: int = 20) -> ToyOracle:
    """Exhaustive NOMA MMF over real amplitudes ``p1, p2`` in ``[0, sqrt(Pt)]``
    and one real combiner ``g`` in ``(0, 1]`` shared by both users.

    User 0 (the stronger channel when ``h1 >= h2``) is decoded first and sees
    user 1 as interference.
    """
    fbl = FblParams.from_config(config)
    p = np.linspace(0.0, np.sqrt(config.Pt), grid)
    g = np.linspace(1.0 / grid, 1.0, grid)
    s1, s2 = (h1 * p) ** 2, (h2 * p) ** 2
    first_is_0 = abs(h1) >= abs(h2)
    best = (-np.inf, 0, 0, 0)
    for start in range(0, grid, chunk):
        gg = g[start:start + chunk][:, None, None]
        noise = config.sigma2 * (gg**2 if config.noise_norm_squared else gg)
        a = gg**2 * s1[None, :, None]  # user 0 power on axis 1
        b = gg**2 * s2[None, None, :]  # user 1 power on axis 2
        if first_is_0:
            r0 = stream_rates(a / (b + noise), fbl)
            r1 = stream_rates(b / noise, fbl)
        else:
            r1 = stream_rates(b / (a + noise), fbl)
            r0 = stream_rates(a / noise, fbl)
        mmf = np.minimum(r0, r1)
        idx = np.unravel_index(np.argmax(mmf), mmf.shape)
        if mmf[idx] > best[0]:
            best = (float(mmf[idx]), start + idx[0], idx[1], idx[2])
    val, gi, i, j = best
    return ToyOracle(val, (float(p[i]), float(p[j])), float(g[gi]))
