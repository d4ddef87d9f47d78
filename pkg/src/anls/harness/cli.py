"""Command line front end.

    anls <experiment> --config <file> [--out <dir>] [--seed <u64>]
    anls enhance --dim D --n N --box L --seed S --eps E --out DIR
    anls defect --mode sharp|naive --enhancement <dir> --N <int> [--out DIR]

Exit codes: 0 all pinned checks pass, 1 check failure, 2 usage or config
error.  ANLS_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys

from .. import lattice
from .config import EXPERIMENTS, ConfigError, parse_config
from .drivers import run_experiment
from .output import write_csv_table
from .parallel import max_workers

USAGE_EXIT = 2
CHECK_EXIT = 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anls",
                                     description="noise-enhanced Schrodinger lab")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        if name == "enhance":
            p.add_argument("--config")
            p.add_argument("--dim", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--box", type=float)
            p.add_argument("--seed", type=int)
            p.add_argument("--eps", type=float)
            p.add_argument("--out")
        elif name == "defect":
            p.add_argument("--config")
            p.add_argument("--mode", choices=("sharp", "naive", "both"))
            p.add_argument("--enhancement")
            p.add_argument("--N", type=int, dest="trunc")
            p.add_argument("--out")
            p.add_argument("--seed", type=int)
        else:
            p.add_argument("--config", required=True)
            p.add_argument("--out")
            p.add_argument("--seed", type=int)
    return parser


def _config_from_args(args) -> str:
    """Assemble config text from a file plus command-line overrides."""
    lines = []
    if args.config:
        with open(args.config) as fh:
            lines.append(fh.read())
    else:
        lines.append(f"experiment = {args.command}\n")
    overrides = []
    if getattr(args, "dim", None) is not None:
        overrides.append(f"dim = {args.dim}")
    if getattr(args, "n", None) is not None:
        overrides.append(f"n = {args.n}")
    if getattr(args, "box", None) is not None:
        overrides.append(f"box_length = {args.box}")
    if getattr(args, "eps", None) is not None:
        overrides.append(f"eps = {args.eps}")
    if getattr(args, "mode", None) is not None:
        overrides.append(f"mode = {args.mode}")
    if getattr(args, "trunc", None) is not None:
        overrides.append(f"trunc_level = {args.trunc}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed = {args.seed}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"out_dir = {args.out}")
    return "\n".join(lines + overrides) + "\n"


def _apply_overrides(text: str) -> str:
    """Later assignments win: collapse duplicates keeping the final value."""
    final = {}
    order = []
    for line in text.splitlines():
        stripped = line.split("#", 1)[0].strip()
        if not stripped or "=" not in stripped:
            continue
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key not in final:
            order.append(key)
        final[key] = val.strip()
    return "\n".join(f"{k} = {final[k]}" for k in order) + "\n"


def _run_defect_on_archive(args) -> int:
    """Defect CLI over a stored enhancement archive."""
    import json

    from .. import gamma as gamma_mod, lpcalc, noise

    e = noise.load_enhancement(args.enhancement)
    with open(os.path.join(args.enhancement, "manifest.json")) as fh:
        config_hash = json.load(fh).get("config_hash", "")
    a = gamma_mod.build_ansatz(e, args.trunc if args.trunc is not None else 1)
    g = gamma_mod.GammaMap(a)
    jm = lpcalc.jmax_for(e.grid)
    js = list(range(1, jm))
    modes = (args.mode,) if args.mode in ("sharp", "naive") else ("sharp", "naive")
    outdir = args.out or "out"
    os.makedirs(outdir, exist_ok=True)
    seed = args.seed if args.seed is not None else 7
    for mode in modes:
        res = gamma_mod.defect_spectrum(e, g, mode, js=js, seed=seed)
        rows = [[j, nrm, res["slope"]] for j, nrm in res["rows"]]
        write_csv_table(os.path.join(outdir, f"defect_{mode}.csv"), config_hash,
                        ["j", "norm", "fitted_slope"], rows)
        print(f"defect {mode}: slope {res['slope']:+.3f}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    lattice.set_fft_workers(max_workers(1))

    if args.command == "defect" and getattr(args, "enhancement", None):
        try:
            return _run_defect_on_archive(args)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_EXIT

    try:
        text = _apply_overrides(_config_from_args(args))
        cfg = parse_config(text)
        if cfg.experiment != args.command:
            raise ConfigError(
                f"config declares experiment '{cfg.experiment}' but the "
                f"command was '{args.command}'")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_EXIT

    record = run_experiment(cfg)
    for check in record.checks:
        verdict = "PASS" if check["passed"] else "FAIL"
        print(f"[{verdict}] {check['name']}: value {check['value']:.6g} "
              f"vs threshold {check['threshold']:.6g}")
    print(f"{cfg.experiment}: config {cfg.config_hash}, "
          f"{record.wall_time_s:.1f}s, outputs in {cfg['out_dir']}")
    return 0 if record.passed else CHECK_EXIT


if __name__ == "__main__":
    sys.exit(main())
