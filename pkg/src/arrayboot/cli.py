"""Batch command-line front end.

Commands
--------
* ``simulate`` — generate a synthetic array from a registered process and
  write it as long-format CSV.
* ``ks`` — paired distribution-stability test on two value columns of a
  dyadic CSV, p-values under the selected dependence assumptions.
* ``ppml`` — multiplicative (gravity) model fit with standard errors and
  p-values under every dependence assumption.
* ``mc`` — run a Monte Carlo study from a key=value config file; the exit
  code reflects the pre-registered acceptance bands.

Every command writes a deterministic report (same inputs and seed give the
same bytes) plus a ``.manifest.json`` with input digests, the full
configuration echo, the tool version, and wall-clock time.

Exit codes: 0 success, 1 statistical band failure, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .arrays import generate_joint, generate_separate, read_joint_csv, write_joint_csv, write_separate_csv
from .bootstrap import POLYADIC, BootstrapPlan
from .errors import ArraybootError, ConfigError
from .estimators import ASSUMPTION_ORDER, GravityData, ppml_inference
from .kstest import ASSUMPTIONS, ks_compare_assumptions
from .montecarlo import get_dgp, load_config, run_study

_ENV_SEED = "ARRAYBOOT_SEED"


def _default_seed() -> int:
    raw = os.environ.get(_ENV_SEED)
    if raw is None:
        return 12345
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{_ENV_SEED} must be an integer, got {raw!r}") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_base: Path, command: str, args_echo: dict,
                    inputs: list[Path], outputs: list[Path], seed: int,
                    wall_clock_s: float, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config": args_echo,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "seed": seed,
        "version": __version__,
        "wall_clock_s": wall_clock_s,
    }
    if extra:
        manifest.update(extra)
    path = out_base.with_suffix(out_base.suffix + ".manifest.json")
    _write_json(path, manifest)
    return path


def _fmt_float(x: float, digits: int = 6) -> str:
    return f"{x:.{digits}g}"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    dgp = get_dgp(args.dgp)
    t0 = time.perf_counter()
    out = Path(args.out)
    if dgp.kind == "joint":
        if args.n is None:
            raise ConfigError(f"dgp {args.dgp!r} is a joint process; pass --n")
        array = generate_joint(dgp.model, args.n, args.seed)
        write_joint_csv(out, array)
        size_echo = {"n": args.n}
    else:
        if args.dims is None:
            raise ConfigError(f"dgp {args.dgp!r} is a grid process; pass --dims AxB")
        dims = tuple(int(x) for x in args.dims.lower().split("x"))
        array = generate_separate(dgp.model, dims, args.seed)
        write_separate_csv(out, array)
        size_echo = {"dims": list(dims)}
    _write_manifest(
        out, "simulate",
        {"dgp": args.dgp, **size_echo},
        inputs=[], outputs=[out], seed=args.seed,
        wall_clock_s=time.perf_counter() - t0,
    )
    print(f"wrote {array.m} cells to {out}")
    return 0


# ---------------------------------------------------------------------------
# ks
# ---------------------------------------------------------------------------

def _ks_text_report(result, assumptions: list[str], components: tuple[str, str]) -> str:
    header = ["statistic"] + [a for a in ASSUMPTIONS if a in assumptions]
    cells = [f"{result.statistic:.3f}"] + [
        f"{result.pvalues[a]:.3f}" for a in ASSUMPTIONS if a in assumptions
    ]
    width = max(len(x) for x in header + cells) + 2
    lines = [
        f"paired KS test: {components[0]} vs {components[1]} (B = {result.b})",
        "".join(h.rjust(width) for h in header),
        "".join(c.rjust(width) for c in cells),
    ]
    return "\n".join(lines) + "\n"


def _cmd_ks(args) -> int:
    t0 = time.perf_counter()
    inp = Path(args.input)
    table = read_joint_csv(inp, zero_fill=args.zero_fill)
    if args.components:
        comp_names = args.components.split(",")
        if len(comp_names) != 2:
            raise ConfigError(f"--components needs two names, got {args.components!r}")
    else:
        comp_names = table.value_names[:2]
    missing = [c for c in comp_names if c not in table.value_names]
    if missing:
        raise ConfigError(f"column(s) not in input: {', '.join(missing)}")
    if len(table.value_names) < 2:
        raise ConfigError("input needs at least two value columns")
    assumptions = tuple(args.assumptions.split(",")) if args.assumptions else ASSUMPTIONS
    result = ks_compare_assumptions(
        table.array,
        table.value_names.index(comp_names[0]),
        table.value_names.index(comp_names[1]),
        b=args.b, seed=args.seed, assumptions=assumptions, threads=args.threads,
    )
    out = Path(args.out)
    report = {
        "schema": "arrayboot/ks-report/v1",
        "components": comp_names,
        "statistic": result.statistic,
        "argmax": result.argmax,
        "b": result.b,
        "pvalues": {a: result.pvalues[a] for a in ASSUMPTIONS if a in result.pvalues},
        "seed": args.seed,
    }
    _write_json(out.with_suffix(".json"), report)
    out.with_suffix(".txt").write_text(
        _ks_text_report(result, list(result.pvalues), tuple(comp_names))
    )
    _write_manifest(
        out, "ks",
        {"input": str(inp), "components": comp_names, "b": args.b,
         "assumptions": list(assumptions), "zero_fill": args.zero_fill},
        inputs=[inp], outputs=[out.with_suffix(".json"), out.with_suffix(".txt")],
        seed=args.seed, wall_clock_s=time.perf_counter() - t0,
        extra={"unit_mapping": table.unit_labels},
    )
    print(f"statistic {result.statistic:.3f}; reports at {out.with_suffix('.json')}")
    return 0


# ---------------------------------------------------------------------------
# ppml
# ---------------------------------------------------------------------------

def _ppml_text_report(report) -> str:
    assumptions = [a for a in ASSUMPTION_ORDER if a in report.pvalues]
    name_w = max(len(c) for c in report.columns) + 2
    col_w = 18
    lines = [
        "multiplicative model fit (PPML); p-values for zero nulls by dependence assumption",
        "".ljust(name_w) + "estimate".rjust(12) + "".join(a.rjust(col_w) for a in assumptions),
    ]
    for j, name in enumerate(report.columns):
        cells = []
        for a in assumptions:
            p = report.pvalues[a][j]
            cells.append(("n/a" if np.isnan(p) else f"{p:.3f}").rjust(col_w))
        lines.append(name.ljust(name_w) + f"{report.theta[j]:.3f}".rjust(12) + "".join(cells))
    lines.append("")
    lines.append("standard errors")
    lines.append("".ljust(name_w) + "".join(a.rjust(col_w) for a in assumptions))
    for j, name in enumerate(report.columns):
        lines.append(
            name.ljust(name_w)
            + "".join(f"{report.se[a][j]:.4f}".rjust(col_w) for a in assumptions)
        )
    return "\n".join(lines) + "\n"


def _cmd_ppml(args) -> int:
    t0 = time.perf_counter()
    inp = Path(args.input)
    table = read_joint_csv(inp, zero_fill=args.zero_fill)
    regressors = args.regressors.split(",") if args.regressors else []
    data = GravityData.from_table(table, flow=args.flow, regressors=regressors)
    plan = None
    if args.bootstrap_b:
        plan = BootstrapPlan(scheme=POLYADIC, b=args.bootstrap_b, seed=args.seed)
    report = ppml_inference(data, plan=plan, level=args.level, threads=args.threads)
    out = Path(args.out)
    payload = {"schema": "arrayboot/ppml-report/v1", "seed": args.seed, **report.to_dict()}
    _write_json(out.with_suffix(".json"), payload)
    out.with_suffix(".txt").write_text(_ppml_text_report(report))
    _write_manifest(
        out, "ppml",
        {"input": str(inp), "flow": args.flow, "regressors": regressors,
         "bootstrap_b": args.bootstrap_b, "level": args.level,
         "zero_fill": args.zero_fill},
        inputs=[inp], outputs=[out.with_suffix(".json"), out.with_suffix(".txt")],
        seed=args.seed, wall_clock_s=time.perf_counter() - t0,
        extra={"unit_mapping": table.unit_labels},
    )
    print(f"fit {len(report.columns)} coefficients; reports at {out.with_suffix('.json')}")
    return 0


# ---------------------------------------------------------------------------
# mc
# ---------------------------------------------------------------------------

def _cmd_mc(args) -> int:
    t0 = time.perf_counter()
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    config = load_config(cfg_path)
    if args.threads != 1:
        config = type(config)(**{**config.__dict__, "threads": args.threads})
    summary = run_study(config)
    out = Path(args.out)
    payload = {"schema": "arrayboot/mc-report/v1", **summary.to_dict()}
    # runtime varies between runs; it lives in the manifest, not the report
    _write_json(out.with_suffix(".json"), payload)
    lines = [f"study {summary.study}: {'PASS' if summary.passed else 'FAIL'}"]
    for name, value in sorted(summary.metrics.items()):
        lines.append(f"  {name} = {_fmt_float(value)}")
    for name, band in sorted(summary.bands.items()):
        verdict = "ok" if band.passed else "FAIL"
        lines.append(
            f"  band {name}: {_fmt_float(band.value)} in [{band.lo}, {band.hi}] {verdict}"
        )
    out.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    _write_manifest(
        out, "mc", {"config": str(cfg_path)},
        inputs=[cfg_path], outputs=[out.with_suffix(".json"), out.with_suffix(".txt")],
        seed=config.seed, wall_clock_s=time.perf_counter() - t0,
        extra={"runtime_s": summary.runtime_s},
    )
    print("\n".join(lines))
    if not summary.passed:
        failing = [n for n, b in summary.bands.items() if not b.passed]
        print(f"band failure: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arrayboot",
        description="estimation and bootstrap inference for exchangeable data arrays",
    )
    parser.add_argument("--version", action="version", version=f"arrayboot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic array as CSV")
    p_sim.add_argument("--dgp", required=True, help="registered process name")
    p_sim.add_argument("--n", type=int, help="unit count (joint processes)")
    p_sim.add_argument("--dims", help="grid size AxB (grid processes)")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.set_defaults(func=_cmd_simulate)

    p_ks = sub.add_parser("ks", help="paired distribution-stability test")
    p_ks.add_argument("--input", required=True, help="dyadic CSV (unit_i,unit_j,values...)")
    p_ks.add_argument("--components", help="two value column names, comma separated")
    p_ks.add_argument("--b", type=int, default=999, help="bootstrap replicates")
    p_ks.add_argument("--assumptions", help="comma-separated subset of: " + ",".join(ASSUMPTIONS))
    p_ks.add_argument("--zero-fill", action="store_true", help="treat absent pairs as zero")
    p_ks.add_argument("--seed", type=int, default=None)
    p_ks.add_argument("--threads", type=int, default=1)
    p_ks.add_argument("--out", required=True, help="report base path")
    p_ks.set_defaults(func=_cmd_ks)

    p_ppml = sub.add_parser("ppml", help="multiplicative (gravity) model fit")
    p_ppml.add_argument("--input", required=True)
    p_ppml.add_argument("--flow", required=True, help="flow column name")
    p_ppml.add_argument("--regressors", required=True, help="comma-separated column names")
    p_ppml.add_argument("--bootstrap-b", type=int, default=0,
                        help="dyadic bootstrap replicates (0 disables the column)")
    p_ppml.add_argument("--level", type=float, default=0.95)
    p_ppml.add_argument("--zero-fill", action="store_true")
    p_ppml.add_argument("--seed", type=int, default=None)
    p_ppml.add_argument("--threads", type=int, default=1)
    p_ppml.add_argument("--out", required=True)
    p_ppml.set_defaults(func=_cmd_ppml)

    p_mc = sub.add_parser("mc", help="run a Monte Carlo study from a config file")
    p_mc.add_argument("--config", required=True)
    p_mc.add_argument("--threads", type=int, default=1)
    p_mc.add_argument("--out", required=True)
    p_mc.set_defaults(func=_cmd_mc)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "seed") and args.seed is None:
        args.seed = _default_seed()
    try:
        return args.func(args)
    except ArraybootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
