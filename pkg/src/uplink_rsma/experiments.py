"""Seeded Monte-Carlo sweeps, aggregation and design files.

Spec file (JSON)::

    {
      "base": {"K": 2, "Nt": 2, "Nr": 4, "epsilon": 1e-5},
      "axes": {"snr_db": [20], "blocklength": [200, 500],
               "scheme": ["RSMA", "NOMA", "SDMA"], "split_count": [1]},
      "realizations": 20,
      "base_seed": 0,
      "output": "rows.jsonl",
      "summary": "summary.csv",
      "ao": {"init_strategy": "best-of", "tau": 1e-4, "max_outer_iters": 100},
      "lls": {"frames": 10, "margin": 0.8}
    }

Realisation ``r`` uses seed ``base_seed + r`` for its channel, which depends
only on ``(K, Nr, Nt)``; every scheme, SNR and blocklength of that
realisation therefore sees the same channel. ``split_count`` applies to RSMA
only; other schemes get one row per point with ``split_count = 0``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conic import SolverSettings
from .model import (ChannelRealization, ConfigError, DecodingOrder, Scheme, SystemConfig,
                    generate_rayleigh_channels, strongest_users)
from .rates import FblParams, sinr_grid, user_rates
from .sca import AoSettings, solve_mmf, solve_mmf_noma, solve_mmf_sdma

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
WORKERS_ENV = "UPLINK_RSMA_WORKERS"
ROW_KEY = ("snr_db", "N", "scheme", "split_count", "realization")
SUMMARY_FIELDS = ("schema", "snr_db", "N", "scheme", "split_count", "count", "failed",
                  "mmf_mean", "mmf_std", "throughput_mean", "throughput_std")


@dataclass(frozen=True)
class LlsOptions:
    frames: int = 10
    margin: float = 0.8
    S: int = 256
    list_size: int = 8


@dataclass
class ExperimentSpec:
    base: dict
    snr_db: list
    blocklength: list
    scheme: list
    split_count: list = field(default_factory=lambda: [1])
    realizations: int = 20
    base_seed: int = 0
    output: str | None = None
    summary: str | None = None
    ao: dict = field(default_factory=dict)
    lls: LlsOptions | None = None

    def __post_init__(self):
        for name in ("snr_db", "blocklength", "scheme", "split_count"):
            if not getattr(self, name):
                raise ConfigError(f"sweep axis {name!r} is empty")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        self.scheme = [Scheme(s).value for s in self.scheme]
        for count in self.split_count:
            if not 0 <= count <= self.base["K"]:
                raise ConfigError(f"split_count {count} outside 0..K")
        SystemConfig.from_dict({**self.base, "Pt": 1.0})  # validates K, Nt, Nr, epsilon
        ao_settings(self.ao)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        axes = d.pop("axes", {})
        lls = d.pop("lls", None)
        try:
            return cls(**d, **axes, lls=LlsOptions(**lls) if lls is not None else None)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(json.loads(text))

    def points(self):
        """Every (snr_db, N, scheme, split_count, realization) row key in sweep order."""
        for snr, N, scheme in itertools.product(self.snr_db, self.blocklength, self.scheme):
            counts = self.split_count if scheme == Scheme.RSMA.value else [0]
            for count, r in itertools.product(counts, range(self.realizations)):
                yield (snr, N, scheme, count, r)

    def seed(self, realization: int) -> int:
        return self.base_seed + realization


def point_config(base: dict, snr_db: float, N: int, scheme: str) -> SystemConfig:
    d = {k: v for k, v in base.items() if k not in ("scheme", "split_set", "snr_db", "Pt", "N")}
    return SystemConfig.from_dict({**d, "snr_db": snr_db, "N": N, "scheme": scheme})


def optimize_point(channels: ChannelRealization, config: SystemConfig, split_count: int,
                   settings: AoSettings):
    if config.scheme is Scheme.SDMA:
        return solve_mmf_sdma(channels, config, settings=settings)
    if config.scheme is Scheme.NOMA:
        return solve_mmf_noma(channels, config, settings=settings)
    cfg = config.with_(split_set=strongest_users(channels, split_count))
    return solve_mmf(channels, cfg, settings=settings)


def ao_settings(ao: dict) -> AoSettings:
    """AO settings from a spec's ``ao`` block; RSMA defaults to the best-of start."""
    opts = dict(ao)
    solver = opts.pop("solver", None)
    opts.setdefault("init_strategy", "best-of")
    settings = AoSettings(**opts)
    if solver:
        settings.solver = SolverSettings(**solver)
    return settings


def run_row(spec: ExperimentSpec, key: tuple) -> dict:
    """Compute one result row; failures are recorded in the row."""
    snr, N, scheme, count, r = key
    seed = spec.seed(r)
    row = dict(zip(ROW_KEY, key), seed=seed, channel=None, mmf=math.nan, throughput=None,
               iterations=0, converged=False, status="error", error=None, wall_time=0.0)
    start = time.perf_counter()
    try:
        config = point_config(spec.base, snr, N, scheme)
        channels = generate_rayleigh_channels(config, seed)
        row["channel"] = channels.digest()
        result = optimize_point(channels, config, count, ao_settings(spec.ao))
        row.update(mmf=result.mmf, iterations=result.iterations, converged=result.converged,
                   status=result.status)
        if spec.lls is not None:
            from .phy.link import LinkSettings, simulate_design
            link = LinkSettings(S=spec.lls.S, list_size=spec.lls.list_size, margin=spec.lls.margin)
            row["throughput"] = simulate_design(result, channels, spec.lls.frames, seed, link).throughput
    except Exception as exc:  # a bad row must never abort the sweep
        log.exception("row %s failed", key)
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_time"] = time.perf_counter() - start
    return row


def row_key(row: dict) -> tuple:
    return tuple(row[k] for k in ROW_KEY)


def _read_rows(path: Path) -> list:
    if not path.exists():
        return []
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            row = json.loads(line)
            row["mmf"] = math.nan if row["mmf"] is None else row["mmf"]
            rows.append(row)
    return rows


def _dump_row(row: dict) -> str:
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
    return json.dumps(clean) + "\n"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def run_sweep(spec: ExperimentSpec, workers: int | None = None) -> list:
    """Run every missing row of ``spec``; returns all rows in sweep order.

    With ``spec.output`` set, rows already present in that JSONL file are
    skipped, new rows are appended as they finish and the file is rewritten
    in sweep order at the end.
    """
    workers = workers or worker_count()
    out = Path(spec.output) if spec.output else None
    rows = _read_rows(out) if out else []
    done = {row_key(r) for r in rows}
    todo = [k for k in spec.points() if k not in done]
    sink = out.open("a") if out else None
    try:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(workers) as pool:
                for row in pool.map(run_row, itertools.repeat(spec), todo):
                    rows.append(row)
                    if sink:
                        sink.write(_dump_row(row))
                        sink.flush()
        else:
            for key in todo:
                row = run_row(spec, key)
                rows.append(row)
                if sink:
                    sink.write(_dump_row(row))
                    sink.flush()
    finally:
        if sink:
            sink.close()
    rank = {k: i for i, k in enumerate(spec.points())}
    rows.sort(key=lambda r: rank.get(row_key(r), len(rank)))
    if out:
        out.write_text("".join(_dump_row(r) for r in rows))
    if spec.summary:
        Path(spec.summary).write_text(summary_csv(aggregate(rows)))
    return rows


def relative_gain(rsma_mmf: float, baseline_mmf: float) -> float:
    """Percentage gain of RSMA over a baseline scheme."""
    if not baseline_mmf > 0:
        raise ValueError("relative gain is undefined for a non-positive baseline")
    return (rsma_mmf - baseline_mmf) / baseline_mmf * 100.0


def aggregate(rows, group_by=("snr_db", "N", "scheme", "split_count")) -> list:
    """Mean and population std of MMF (and throughput) per group.

    Rows with an error or a NaN MMF are excluded from the statistics and
    counted under ``failed``.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to aggregate")
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[g] for g in group_by), []).append(r)
    table = []
    for key in sorted(groups, key=lambda k: tuple(str(x) if isinstance(x, str) else x for x in k)):
        members = groups[key]
        good = [r for r in members if not r.get("error") and not math.isnan(r["mmf"])]
        if not good:
            continue
        mmf = np.array([r["mmf"] for r in good])
        thr = np.array([r["throughput"] for r in good if r.get("throughput") is not None])
        table.append({
            **dict(zip(group_by, key)),
            "count": len(good),
            "failed": len(members) - len(good),
            "mmf_mean": float(mmf.mean()),
            "mmf_std": float(mmf.std()),
            "throughput_mean": float(thr.mean()) if thr.size else None,
            "throughput_std": float(thr.std()) if thr.size else None,
        })
    return table


def summary_csv(table) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for g in table:
        out = {"schema": CSV_SCHEMA_VERSION, **g}
        for k in ("mmf_mean", "mmf_std", "throughput_mean", "throughput_std"):
            if out.get(k) is not None:
                out[k] = f"{out[k]:.10g}"
        writer.writerow(out)
    return buf.getvalue()


def gain_table(table) -> list:
    """RSMA gain over NOMA and SDMA per (snr_db, N, split_count) from an aggregate table."""
    base = {(g["snr_db"], g["N"], g["scheme"]): g["mmf_mean"] for g in table if g["scheme"] != "RSMA"}
    gains = []
    for g in table:
        if g["scheme"] != "RSMA":
            continue
        row = {"snr_db": g["snr_db"], "N": g["N"], "split_count": g["split_count"]}
        for other in ("NOMA", "SDMA"):
            ref = base.get((g["snr_db"], g["N"], other))
            row[f"gain_over_{other.lower()}"] = relative_gain(g["mmf_mean"], ref) if ref else None
        gains.append(row)
    return gains


# --------------------------------------------------------------------------
# design files

def _cplx(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _from_cplx(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass
class SavedDesign:
    config: SystemConfig
    channels: ChannelRealization
    order: DecodingOrder
    P: np.ndarray
    G: np.ndarray

    @property
    def per_stream_sinr(self) -> np.ndarray:
        return sinr_grid(self.channels, self.P, self.G, self.order, self.config)

    def report(self):
        return user_rates(self.channels, self.P, self.G, self.order, self.config,
                          FblParams.from_config(self.config))

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config.to_dict(),
            "channels": json.loads(self.channels.to_json()),
            "order": self.order.to_list(),
            "P": _cplx(self.P),
            "G": _cplx(self.G),
        })

    @classmethod
    def from_json(cls, text: str) -> "SavedDesign":
        d = json.loads(text)
        return cls(SystemConfig.from_dict(d["config"]),
                   ChannelRealization.from_json(json.dumps(d["channels"])),
                   DecodingOrder(tuple(tuple(e) for e in d["order"])),
                   _from_cplx(d["P"]), _from_cplx(d["G"]))

    @classmethod
    def from_result(cls, result, channels) -> "SavedDesign":
        return cls(result.config, channels, result.order, result.state.P, result.state.G)
