"""Command-line driver for the accuracy experiments.

    mprp fmt-stats --formats fp16 e4m3
    mprp mantissa-sweep --matrix type1 --seeds 0..9 --out sweep.csv
    mprp rsvd --config rsvd.cfg --format json --out rsvd.json

Each subcommand accepts ``--config`` pointing at a flat ``key = value``
file whose keys are the subcommand's long option names (dashes or
underscores). Flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex

log = logging.getLogger("mprp")

# options that shape output only; left out of the config hash
_IO_KEYS = {"config", "out", "format", "overwrite", "jobs", "verbose", "command", "func"}


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """'a..b' (inclusive), 'a,b,c' or a single integer."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from e


def _split_list(value: str) -> list[str]:
    return [v for v in value.replace(",", " ").split() if v]


def load_config(path) -> dict[str, str]:
    """Flat key/value file (``key = value``, ``#`` comments); no sections."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[experiment]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    if len(cp.sections()) != 1:
        raise ConfigError(f"{path}: sections are not allowed, the file must be flat")
    return {k.strip().replace("-", "_"): v.strip() for k, v in cp["experiment"].items()}


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> dict:
    """Convert config strings with each option's own type; reject unknown keys."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    out = {}
    for key, raw in values.items():
        act = actions[key]
        try:
            if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                out[key] = raw.lower() in ("1", "true", "yes", "on")
            elif act.nargs in ("+", "*"):
                conv = act.type or str
                out[key] = [conv(v) for v in _split_list(raw)]
            else:
                out[key] = (act.type or str)(raw)
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from e
        if act.choices is not None:
            vals = out[key] if isinstance(out[key], list) else [out[key]]
            bad = [v for v in vals if v not in act.choices]
            if bad:
                raise ConfigError(f"invalid choice for {key!r}: {bad}")
    return out


def config_hash(params: dict) -> str:
    canon = json.dumps({k: params[k] for k in sorted(params) if k not in _IO_KEYS}, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# --- commands ------------------------------------------------------------------

FULL_SCALE = {
    "mantissa_sweep": {"n": 4096},
    "gemm_accuracy": {"m": 256, "n": 256, "ks": [64, 256, 1024, 4096, 16384]},
    "rsvd": {"n": 4096, "p": 256},
    "rphosvd": {"dims": [128, 128, 128], "ranks": [32, 32, 32]},
}


def cmd_fmt_stats(a) -> tuple[list, list]:
    rows = ex.fmt_stats(a.formats, range(a.s_min, a.s_max + 1), variance=not a.no_variance)
    return rows, []


def cmd_mantissa_sweep(a) -> tuple[list, list]:
    rows = ex.mantissa_sweep(a.matrix, a.n, a.p, a.s, a.mantissas, a.seeds, a.exp_bits, a.matrix_seed, a.jobs)
    means = [r["mean_error"] for r in rows]
    summary = [{"matrix": a.matrix, "max_over_min": max(means) / min(means)}]
    return rows, summary


def cmd_gemm_accuracy(a) -> tuple[list, list]:
    rows = ex.gemm_accuracy(a.m, a.n, a.ks, a.backends, a.dists, a.seeds, a.jobs)
    summary = []
    for d in a.dists:
        for k in a.ks:
            med = ex.median_by(rows, "backend", "rel_error", lambda r, d=d, k=k: r["dist"] == d and r["k"] == k)
            summary += [{"dist": d, "k": k, "backend": be, "median_rel_error": v} for be, v in med.items()]
    return rows, summary


def _summarize_residuals(rows, keys) -> list:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    summary = []
    for key, grp in groups.items():
        res = [g["residual"] for g in grp]
        failed = sum(g["status"] != "ok" for g in grp)
        row = dict(zip(keys, key))
        row.update(
            median_residual=float(np.median(res)) if not failed else float("nan"),
            failed_runs=failed,
            runs=len(grp),
        )
        if "floor" in grp[0]:
            row["floor"] = float(np.median([g["floor"] for g in grp]))
        summary.append(row)
    return summary


def cmd_rsvd(a) -> tuple[list, list]:
    rows = ex.rsvd_experiment(a.matrices, a.backends, a.n, a.p, a.s, a.sp_values, a.seeds, a.power, a.jobs)
    return rows, _summarize_residuals(rows, ("matrix", "s_p", "backend"))


def cmd_rphosvd(a) -> tuple[list, list]:
    rows = ex.rphosvd_experiment(a.dims, a.ranks, a.padding, a.backends, a.seeds, a.jobs)
    return rows, _summarize_residuals(rows, ("dims", "ranks", "backend"))


# --- output --------------------------------------------------------------------


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, (np.floating, np.integer)):
        return _json_safe(v.item())
    return v


def _csv_text(rows: list[dict], meta: dict) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    fields += ["config_hash", "version"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "config_hash": meta["config_hash"], "version": meta["version"]})
    return buf.getvalue()


def write_report(rows, summary, meta, out, fmt: str, overwrite: bool) -> list[Path]:
    """Write rows (and summary) to ``out`` or stdout; refuses to clobber."""
    if fmt == "json":
        doc = {
            "meta": meta,
            "rows": [{k: _json_safe(v) for k, v in r.items()} for r in rows],
            "summary": [{k: _json_safe(v) for k, v in r.items()} for r in summary],
        }
        payloads = [(out, json.dumps(doc, indent=2) + "\n")]
    else:
        payloads = [(out, _csv_text(rows, meta))]
        if summary:
            side = None if out is None else Path(out).with_suffix(".summary.csv")
            payloads.append((side, _csv_text(summary, meta)))
    written = []
    if out is not None:
        for path, _ in payloads:
            if Path(path).exists() and not overwrite:
                raise FileExistsError(f"{path} exists; pass --overwrite to replace it")
    for path, text in payloads:
        if path is None:
            sys.stdout.write(text)
            if len(payloads) > 1:
                sys.stdout.write("\n")
        else:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
            written.append(Path(path))
    return written


# --- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0..9"), help="'a..b' inclusive or 'a,b,c'")
    p.add_argument("--full-scale", action="store_true", help="use the original problem sizes (slow)")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output file")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for the seed sweep")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mprp", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fmt-stats", help="Gaussian overflow/underflow probabilities and value counts")
    _common(p)
    p.add_argument("--formats", nargs="+", default=list(ex.STANDARD_FORMATS))
    p.add_argument("--s-min", type=int, default=0)
    p.add_argument("--s-max", type=int, default=2)
    p.add_argument("--no-variance", action="store_true", help="skip the rounded-Gaussian variance column")
    p.set_defaults(func=cmd_fmt_stats)

    p = sub.add_parser("mantissa-sweep", help="projection error versus omega mantissa length")
    _common(p)
    p.add_argument("--matrix", choices=("type1", "type2"), default="type2")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--p", type=int, default=20)
    p.add_argument("--s", type=int, default=10)
    p.add_argument("--mantissas", type=int, nargs="+", default=list(range(1, 24)))
    p.add_argument("--exp-bits", type=int, default=8)
    p.add_argument("--matrix-seed", type=int, default=0)
    p.set_defaults(func=cmd_mantissa_sweep)

    p = sub.add_parser("gemm-accuracy", help="relative error of emulated GEMMs against binary64")
    _common(p)
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--ks", type=int, nargs="+", default=[64, 256, 1024, 4096])
    p.add_argument("--backends", nargs="+", default=list(ex.GEMM_BACKENDS),
                   choices=("ref32", "shgemm_fp16", "shgemm_tf32", "shgemm_fp16_rz", "shgemm_tf32_rz",
                            "tcec_fp16", "tcec_tf32", "lowprec_tf32"))
    p.add_argument("--dists", nargs="+", default=["normal", "uniform"], choices=("normal", "uniform"))
    p.set_defaults(func=cmd_gemm_accuracy)

    p = sub.add_parser("rsvd", help="randomized SVD residuals per backend and test matrix")
    _common(p)
    p.add_argument("--matrices", nargs="+", default=["linear", "exp", "cauchy"],
                   choices=("linear", "exp", "poly", "cauchy"))
    p.add_argument("--backends", nargs="+", default=list(ex.RSVD_BACKENDS),
                   choices=("ref32", "tcec_fp16", "tcec_tf32", "shgemm_fp16", "shgemm_tf32", "lowprec_direct"))
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--s", type=int, default=10)
    p.add_argument("--sp-values", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
    p.add_argument("--power", type=int, default=0)
    p.set_defaults(func=cmd_rsvd)

    p = sub.add_parser("rphosvd", help="random-projection HOSVD residuals per backend")
    _common(p)
    p.add_argument("--dims", type=int, nargs="+", default=[64, 64, 64])
    p.add_argument("--ranks", type=int, nargs="+", default=[16, 16, 16])
    p.add_argument("--padding", type=int, default=4)
    p.add_argument("--backends", nargs="+", default=list(ex.HOSVD_BACKENDS),
                   choices=("ref32", "tcec_fp16", "tcec_tf32", "shgemm_fp16", "shgemm_tf32", "lowprec_direct"))
    p.set_defaults(func=cmd_rphosvd)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    sub = ap._subparsers._group_actions[0].choices[args.command]
    given = _given_flags(sub, argv[argv.index(args.command) + 1 :])
    if args.config:
        # file values override defaults but not flags typed on the command line
        values = _apply_config(sub, load_config(args.config))
        for k, v in values.items():
            if k not in given:
                setattr(args, k, v)
        given |= set(values)
    if args.full_scale:
        for k, v in FULL_SCALE.get(args.func.__name__[4:], {}).items():
            if k not in given:
                setattr(args, k, v)
    return args


def _given_flags(parser, argv) -> set[str]:
    """dests of options that appear literally in argv."""
    given = set()
    for act in parser._actions:
        for opt in act.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                given.add(act.dest)
    return given


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (ConfigError, OSError) as e:
        print(f"mprp: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    params = {k: v for k, v in vars(args).items() if k not in ("func",)}
    meta = {
        "command": args.command,
        "version": __version__,
        "config_hash": config_hash(params),
        "params": {k: v for k, v in params.items() if k not in _IO_KEYS},
    }
    t0 = time.perf_counter()
    try:
        rows, summary = args.func(args)
    except ValueError as e:
        print(f"mprp: error: {e}", file=sys.stderr)
        return 2
    meta["wall_seconds"] = round(time.perf_counter() - t0, 3)
    log.info("%s finished in %.2f s", args.command, meta["wall_seconds"])
    try:
        write_report(rows, summary, meta, args.out, args.format, args.overwrite)
    except FileExistsError as e:
        print(f"mprp: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
