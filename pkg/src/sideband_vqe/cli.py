"""Command-line front end.

Subcommands: exact-gs, vqe, sweep, interp, noise-study, fixture-a1.  Every
run writes manifest.json next to its outputs; exit code 0 on success, 2 на
configuration errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .errors import ConfigError, SimulationError
from .experiments import (
    cmd_exact_gs,
    cmd_fixture_a1,
    cmd_interp,
    cmd_noise_study,
    cmd_sweep,
    cmd_vqe,
    load_config,
    load_theta_file,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sideband-vqe",
        description="Trapped-ion sideband-circuit VQE simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--shots", type=int, default=None, help="override shots per basis")
        p.add_argument("--out-dir", default=None, help="override output directory")

    p = sub.add_parser("exact-gs", help="exact ground state, gap, and bulk invariants")
    common(p)

    p = sub.add_parser("vqe", help="one full VQE + tomography pipeline run")
    common(p)
    p.add_argument("--dump-circuit", action="store_true",
                   help="write the transpiled optimal circuit as circuit.json")
    p.add_argument("--save-shots", default=None, metavar="PATH",
                   help="write tomography records as JSON lines")

    p = sub.add_parser("sweep", help="VQE pipeline over the t_minus grid")
    common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel sweep points")

    p = sub.add_parser("interp", help="interpolate between two angle sets")
    common(p)
    p.add_argument("--theta-a", default=None, help="JSON file with theta_pi list")
    p.add_argument("--theta-b", default=None, help="JSON file with theta_pi list")

    p = sub.add_parser("noise-study", help="RSS grid comparison of noise models")
    common(p)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("fixture-a1", help="embedded 4-qubit test-bed circuit report")
    common(p, config_required=False)
    p.add_argument("--fidelity", type=float, default=0.897,
                   help="measured state fidelity to invert")
    p.add_argument("--operations", type=int, default=14,
                   help="sideband operation count M in F = F_BSB**M")

    return parser


def _apply_overrides(config, args):
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "shots", None) is not None:
        config = dataclasses.replace(
            config,
            measurement=dataclasses.replace(
                config.measurement, shots_per_basis=args.shots
            ),
        )
    if getattr(args, "out_dir", None) is not None:
        config = dataclasses.replace(config, out_dir=args.out_dir)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fixture-a1":
            out_dir = args.out_dir or "out"
            report = cmd_fixture_a1(args.fidelity, args.operations, out_dir)
            best = report["best_ordering"]
            print(f"F_BSB = {report['f_bsb']:.4f} (F = {report['fidelity_target']}, "
                  f"M = {report['n_operations']})")
            print(f"best ordering {json.dumps(best, sort_keys=True)} "
                  f"purity = {report['best_purity']:.6f} "
                  f"success = {report['purity_success']}")
            return EXIT_OK

        config = _apply_overrides(load_config(args.config), args)

        if args.command == "exact-gs":
            report = cmd_exact_gs(config)
            print(f"E0 = {report['e0']:.6f}")
            print(f"degeneracy gap = {report['degeneracy_gap']:.6f}")
            print(f"bulk Z_R = {report['bulk_z_r']:.6f}  Z_T = {report['bulk_z_t']:.6f}")
        elif args.command == "vqe":
            row = cmd_vqe(config, dump_circuit=args.dump_circuit,
                          save_shots=args.save_shots, stream=sys.stdout)
            print(f"E_final = {row['e_final_exact']:.6f} "
                  f"(rel. error {row['rel_error']:.4f})")
            print(f"Z_R = {row['zr_tomo']:.4f} +- {row['zr_tomo_err']:.4f}  "
                  f"Z_T = {row['zt_tomo']:.4f} +- {row['zt_tomo_err']:.4f}")
        elif args.command == "sweep":
            result = cmd_sweep(config, workers=args.workers)
            print(f"{len(result['rows'])} points written, "
                  f"{len(result['failures'])} failures")
        elif args.command == "interp":
            theta_a = load_theta_file(args.theta_a) if args.theta_a else None
            theta_b = load_theta_file(args.theta_b) if args.theta_b else None
            result = cmd_interp(config, theta_a, theta_b)
            print(f"{len(result['rows'])} interpolation rows written")
        elif args.command == "noise-study":
            report = cmd_noise_study(config, workers=args.workers)
            arg = report["argmin"]
            print(f"argmin: p_xy = {arg['p_xy']} p_z = {arg['p_z']} "
                  f"(RSS = {arg['rss_avg']:.6f})")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
