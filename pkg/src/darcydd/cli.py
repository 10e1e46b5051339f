"""Command-line front-end: solve, sweep, audit."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, mesh, verify


_BOOL_KEYS = ("audit", "relative_tol")


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    for key in harness.CONFIG_SCHEMA:
        flag = f"--{key.replace('_', '-')}"
        if key in _BOOL_KEYS:  # usable as a bare flag or with an explicit value
            parser.add_argument(flag, dest=key, default=None, metavar="V",
                                nargs="?", const="true", help=f"override config key '{key}'")
        else:
            parser.add_argument(flag, dest=key, default=None, metavar="V",
                                help=f"override config key '{key}'")


def _collect_overrides(args: argparse.Namespace) -> dict:
    return {key: getattr(args, key) for key in harness.CONFIG_SCHEMA if getattr(args, key, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darcydd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one configuration")
    solve.add_argument("--config", required=True, help="path to a key = value config file")
    _add_overrides(solve)

    swp = sub.add_parser("sweep", help="repeat a run along one parameter axis")
    swp.add_argument("--config", required=True)
    swp.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    swp.add_argument("--values", required=True, help="comma-separated axis values")
    swp.add_argument("--csv", default=None, help="write a CSV summary here")
    _add_overrides(swp)

    aud = sub.add_parser("audit", help="run the structural checks on a desk-scale instance")
    aud.add_argument("--config", required=True)
    aud.add_argument("--out", default=None, help="write the certificate JSON here")
    _add_overrides(aud)
    return parser


def _cmd_solve(args) -> int:
    config = harness.load_config(args.config, _collect_overrides(args))
    report = harness.run(config)
    t = report.timings
    print(f"dof={report.dof} elements={report.n_elements} coarse={report.n_coarse}")
    print(f"iter={report.iterations} converged={report.converged} "
          f"residual={report.final_residual:.3e}")
    print(f"timings: pre0={t['pre0']:.3f}s pre1={t['pre1']:.3f}s ite={t['ite']:.3f}s")
    print(f"mass residual={report.mass_residual:.3e} ok={report.mass_ok}")
    if report.certificate is not None:
        print(f"audit passed={report.certificate['passed']}")
    return 0 if report.converged else 1


def _cmd_sweep(args) -> int:
    config = harness.load_config(args.config, _collect_overrides(args))
    values = [tok for tok in args.values.replace(",", " ").split()]
    reports = harness.sweep(config, args.axis, values, csv_path=args.csv)
    ok = True
    for value, rep in zip(values, reports):
        if rep is None:
            print(f"{args.axis}={value}: failed")
            ok = False
        else:
            print(f"{args.axis}={value}: iter={rep.iterations} ite={rep.timings['ite']:.3f}s "
                  f"converged={rep.converged}")
            ok = ok and rep.converged
    return 0 if ok else 1


def _cmd_audit(args) -> int:
    config = harness.load_config(args.config, _collect_overrides(args))
    grid = config.grid()
    perm = config.build_medium(grid)
    layout = mesh.build_layout(grid, config.sd, config.workers, config.m)
    policy = (
        {"eps_target": config.adaptive_eps, "fixed_count": None}
        if config.adaptive_eps is not None
        else {"eps_target": None, "fixed_count": config.L}
    )
    cert = verify.audit(grid, perm, layout, weight_mode=config.weights, seed=config.seed, **policy)
    for check in cert.checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name} margin={check.margin:.3e}")
    print(f"overlap_constant={cert.overlap_constant} epsilon={cert.epsilon:.4g} "
          f"bound={cert.cond_bound:.4g} measured={cert.measured_cond:.4g}")
    if args.out:
        Path(args.out).write_text(cert.to_json())
    else:
        print(json.dumps(cert.to_dict(), indent=2))
    return 0 if cert.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "solve":
        return _cmd_solve(args)
    if args.command == "sweep":
        return _cmd_sweep(args)
    if args.command == "audit":
        return _cmd_audit(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
