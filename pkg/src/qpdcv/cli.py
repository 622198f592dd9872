"""Command-line interface: ``qpdcv <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import experiment as ex
from .ising import build_qpd, resolve_noise
from .qpd import gamma, n_sigma_k


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "n_trot", None):
        changes["n_trot_list"] = args.n_trot
    return cfg.replace(**changes) if changes else cfg


def _archive_config(args) -> ex.ExperimentConfig:
    """Config for stages operating on an existing archive (``--config`` optional)."""
    if args.config is None:
        cfg = ex.read_config(args.out)
        return cfg.replace(master_seed=args.seed) if args.seed is not None else cfg
    return _config(args)


def cmd_gamma(args) -> int:
    cfg = _config(args)
    noise = resolve_noise(cfg.noise_file)
    print(f"{'n_trot':>6} {'gamma':>12} {'M':>7} {'M_nonzero':>10} {'N_sigmaK':>9}")
    for n_trot in cfg.n_trot_list:
        pec = build_qpd(noise, cfg.circuit(n_trot))
        m = pec.model
        print(f"{n_trot:>6} {gamma(m):>12.6f} {pec.m_total:>7} {m.n_positions:>10} {n_sigma_k(m):>9}")
    return 0


def cmd_sample(args) -> int:
    ex.stage_sample(_config(args), args.out)
    return 0


def cmd_simulate(args) -> int:
    ex.stage_simulate(_archive_config(args), args.out, args.threads)
    return 0


def cmd_estimate(args) -> int:
    cfg = _archive_config(args)
    ex.write_meta(Path(args.out), cfg)
    rows = ex.stage_estimate(cfg, args.out)
    print(f"{len(rows)} tasks written to {Path(args.out) / 'results.csv'}")
    return 0


def cmd_run(args) -> int:
    rows = ex.run_experiment(_config(args), args.out, args.threads)
    print(f"{len(rows)} tasks written to {Path(args.out) / 'results.csv'}")
    return 0


def cmd_report(args) -> int:
    rep = ex.report(args.out, args.report_dir)
    print(rep["summary"])
    return 0


def cmd_heatmap(args) -> int:
    rows = ex.heatmap_grids(args.gamma, args.n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    print(f"{len(rows)} grid points written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpdcv", description="Control-variates PEC experiments on Trotterized Ising circuits."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config_required=True, out_required=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=config_required,
                       help="JSON config file or bundled name (q4_desk, q4_full, q10_full)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out", required=out_required, help="archive directory")
        p.set_defaults(func=fn)
        return p

    g = add("gamma", cmd_gamma, "print gamma, M and N_sigmaK per circuit", out_required=False)
    g.add_argument("--n-trot", type=int, nargs="+", help="Trotter depths (default: from config)")
    add("sample", cmd_sample, "sample mitigation instances")
    add("simulate", cmd_simulate, "simulate shots for sampled instances", config_required=False)
    add("estimate", cmd_estimate, "run every estimator on simulated data", config_required=False)
    add("run", cmd_run, "sample, simulate and estimate")
    r = add("report", cmd_report, "percentile, residual, spiral and heatmap tables", config_required=False)
    r.add_argument("--report-dir", help="output directory (default: <out>/report)")
    h = sub.add_parser("heatmap", help="rho^2 grid of W against W X for given gammas")
    h.add_argument("--gamma", type=float, nargs="+", required=True)
    h.add_argument("--n", type=int, default=101, help="grid points per axis")
    h.add_argument("--out", required=True, help="output CSV file")
    h.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"qpdcv {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
