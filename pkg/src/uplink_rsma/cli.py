"""Command-line entry point: ``uplink-rsma {optimize,sweep,lls,oracle}``.

Exit codes: 0 success, 1 configuration error, 2 sweep finished with failed rows.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .model import ConfigError, SystemConfig, generate_rayleigh_channels, strongest_users
from .sca import INIT_STRATEGIES, AoSettings, solve_mmf

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("uplink_rsma")


def _system_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=2, help="number of users")
    p.add_argument("--Nt", type=int, default=2, help="transmit antennas per user")
    p.add_argument("--Nr", type=int, default=2, help="receive antennas")
    p.add_argument("--snr-db", type=float, default=20.0, help="transmit SNR (noise power 1)")
    p.add_argument("--N", type=int, default=500, help="blocklength")
    p.add_argument("--epsilon", type=float, default=1e-5, help="target error probability")
    p.add_argument("--scheme", choices=["RSMA", "NOMA", "SDMA"], default="RSMA")
    split = p.add_mutually_exclusive_group()
    split.add_argument("--split-count", type=int, default=None,
                       help="split the strongest users (RSMA; default 1)")
    split.add_argument("--split-set", type=int, nargs="*", default=None, help="explicit 0-based split users")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uplink-rsma", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="optimise one channel realisation")
    _system_args(opt)
    opt.add_argument("--seed", type=int, default=0)
    opt.add_argument("--init", choices=[s for s in INIT_STRATEGIES if s != "given"], default="best-of")
    opt.add_argument("--tau", type=float, default=1e-4)
    opt.add_argument("--max-iters", type=int, default=100)
    opt.add_argument("--trace", type=Path, help="write per-iteration JSON lines here")
    opt.add_argument("--save", type=Path, help="write the design (for `lls`) here")

    sw = sub.add_parser("sweep", help="run a Monte-Carlo sweep from a JSON spec")
    sw.add_argument("spec", type=Path)
    sw.add_argument("--workers", type=int, default=None, help="overrides UPLINK_RSMA_WORKERS")

    lls = sub.add_parser("lls", help="link-level trials on a saved design")
    lls.add_argument("design", type=Path)
    lls.add_argument("--frames", type=int, default=10)
    lls.add_argument("--seed", type=int, default=0)
    lls.add_argument("--margin", type=float, default=0.8, help="AMC rate back-off factor")
    lls.add_argument("--list-size", type=int, default=8)
    lls.add_argument("--S", type=int, default=256, help="channel uses per frame")
    lls.add_argument("--noiseless", action="store_true")
    lls.add_argument("--rows", type=Path, help="write per-frame JSON lines here")

    orc = sub.add_parser("oracle", help="toy two-user brute-force check")
    orc.add_argument("--h1", type=float, default=1.2)
    orc.add_argument("--h2", type=float, default=0.8)
    orc.add_argument("--snr-db", type=float, default=20.0)
    orc.add_argument("--N", type=int, default=500)
    orc.add_argument("--epsilon", type=float, default=1e-5)
    orc.add_argument("--grid", type=int, default=200)
    return parser


def _config(args) -> SystemConfig:
    split = frozenset(args.split_set or ())
    return SystemConfig.from_dict({"K": args.K, "Nt": args.Nt, "Nr": args.Nr, "snr_db": args.snr_db,
                                   "N": args.N, "epsilon": args.epsilon, "scheme": args.scheme,
                                   "split_set": split})


def cmd_optimize(args) -> int:
    from .experiments import SavedDesign

    config = _config(args)
    channels = generate_rayleigh_channels(config, args.seed)
    if config.scheme.value == "RSMA" and args.split_set is None:
        config = config.with_(split_set=strongest_users(channels, 1 if args.split_count is None else args.split_count))
    elif args.split_count and config.scheme.value != "RSMA":
        raise ConfigError(f"{config.scheme.value} does not allow splitting users")
    settings = AoSettings(tau=args.tau, max_outer_iters=args.max_iters, init_strategy=args.init)
    result = solve_mmf(channels, config, settings=settings)
    if args.trace:
        with args.trace.open("w") as fh:
            for n, t in enumerate(result.trace):
                st = list(result.statuses[n - 1]) if n else []
                fh.write(json.dumps({"iteration": n, "t": t, "statuses": st}) + "\n")
    if args.save:
        args.save.write_text(SavedDesign.from_result(result, channels).to_json())
    print(json.dumps({**result.summary(), "seed": args.seed, "channel": channels.digest()}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiments import ExperimentSpec, aggregate, gain_table, run_sweep

    try:
        spec = ExperimentSpec.from_json(args.spec.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec: {exc}") from exc
    rows = run_sweep(spec, args.workers)
    failed = sum(1 for r in rows if r.get("error"))
    table = aggregate(rows)
    for g in table:
        print(f"{g['scheme']:>4} snr={g['snr_db']} N={g['N']} split={g['split_count']}: "
              f"mmf={g['mmf_mean']:.4f} +/- {g['mmf_std']:.4f} (n={g['count']})")
    for g in gain_table(table):
        print(json.dumps(g))
    if failed:
        print(f"{failed} of {len(rows)} rows failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_lls(args) -> int:
    from .experiments import SavedDesign
    from .phy.link import LinkSettings, frame_results_to_jsonl, simulate_link

    try:
        design = SavedDesign.from_json(args.design.read_text())
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read design: {exc}") from exc
    settings = LinkSettings(S=args.S, list_size=args.list_size, margin=args.margin,
                            noise_scale=0.0 if args.noiseless else 1.0)
    report = simulate_link(design.channels, design.P, design.order, design.config,
                           design.per_stream_sinr, args.frames, args.seed, settings)
    if args.rows:
        args.rows.write_text(frame_results_to_jsonl(report.frames))
    print(json.dumps({"throughput": report.throughput, "theoretical_mmf": report.theoretical_mmf,
                      "stream_bler": report.bler, "frames": args.frames}, indent=2))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .model import Scheme
    from .oracle import toy_channels, toy_config, toy_grid_search

    config = toy_config(10 ** (args.snr_db / 10), args.N, args.epsilon)
    channels = toy_channels(args.h1, args.h2)
    grid = toy_grid_search(args.h1, args.h2, config, args.grid)
    noma = solve_mmf(channels, config)
    rsma = solve_mmf(channels, config.with_(scheme=Scheme.RSMA, split_set=frozenset({0})),
                     settings=AoSettings(init_strategy="best-of"))
    print(json.dumps({"grid_mmf": grid.mmf, "grid_p": grid.p, "sca_noma_mmf": noma.mmf,
                      "sca_rsma_mmf": rsma.mmf,
                      "noma_vs_grid": (noma.mmf - grid.mmf) / grid.mmf}, indent=2))
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "sweep": cmd_sweep, "lls": cmd_lls, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:  # ConfigError and settings validation
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
