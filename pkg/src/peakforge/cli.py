"""``peakforge`` command line: fit, recommend, generate, sweep-kappa."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import InputError, OutputBundle, ingest_csv, kv_text, read_kv, record_csv
from .harness import METHODS, ConfigError, RunConfig, kappa_sweep, parse_grid, recommend_method, run
from .report import write_report
from .synthetic import generate_synthetic
from .unimodal import ConvergenceError, NumericalError

logger = logging.getLogger("peakforge")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

# flag dest -> RunConfig field
_RUN_FLAGS = ("method", "q", "degree", "kappa", "lambda_policy", "threshold", "sigma2_policy",
              "components", "seed", "penalty", "n_g", "wave", "max_outer")


def _add_run_flags(p):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--input", help="CSV with columns x,y (header optional)")
    p.add_argument("--output-dir")
    p.add_argument("--q", type=int, help="number of inner knots")
    p.add_argument("--degree", type=int, help="spline degree k")
    p.add_argument("--kappa", type=float, help="L0 penalty weight")
    p.add_argument("--lambda-policy", help="reml or fixed:<value>")
    p.add_argument("--threshold", type=float, help="segmentation threshold (punireg)")
    p.add_argument("--sigma2-policy",
                   help="fixed:<v>, iterate:<init>:<abstol>, window:<lo>:<hi> or diff")
    p.add_argument("--components", help="number of additive components, or aic:<Lmax>")
    p.add_argument("--seed", type=int)
    p.add_argument("--penalty", choices=("ridge", "d2"))
    p.add_argument("--n-g", type=int, help="peak shape length in samples")
    p.add_argument("--wave", help="wave parameters U0:xi1:xi2")
    p.add_argument("--max-outer", type=int, help="outer iteration cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peakforge",
                                     description="Unimodal and multimodal spline regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one method to a CSV series")
    _add_run_flags(p)
    p.add_argument("--no-figure", action="store_true", help="skip the PNG figure")

    p = sub.add_parser("sweep-kappa", help="deconvolution peak counts over a kappa grid")
    _add_run_flags(p)
    p.add_argument("--kappa-grid", required=True, help="comma-separated ascending values")

    p = sub.add_parser("recommend", help="suggest a method for a data situation")
    p.add_argument("--identical", choices=("yes", "no", "unknown"), required=True,
                   help="do all peaks share one shape?")
    p.add_argument("--shape-known", choices=("yes", "no"), default="no")
    p.add_argument("--overlap", choices=("yes", "no"), required=True)

    p = sub.add_parser("generate", help="write a synthetic series and its ground truth")
    p.add_argument("--archetype", choices=("dive", "pulses", "spectrum"), required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, help="number of dives or pulses")
    p.add_argument("--noise", type=float, help="noise level")
    p.add_argument("--n", type=int, help="series length (pulses, spectrum)")
    return parser


def _resolve(args) -> tuple[RunConfig, Path, Path]:
    items = read_kv(args.config) if args.config else {}
    for name in _RUN_FLAGS:
        val = getattr(args, name)
        if val is not None:
            items[name] = str(val)
    if args.input:
        items["input"] = args.input
    if args.output_dir:
        items["output_dir"] = args.output_dir
    input_path = items.pop("input", None)
    output_dir = items.pop("output_dir", None)
    if not input_path:
        raise ConfigError("--input is required")
    if not output_dir:
        raise ConfigError("--output-dir is required")
    if "method" not in items:
        raise ConfigError("--method is required")
    return RunConfig.from_mapping(items), Path(input_path), Path(output_dir)


def _cmd_fit(args) -> int:
    cfg, input_path, out = _resolve(args)
    data = ingest_csv(input_path)
    res = run(cfg, data)
    write_report(res, out, figure=not args.no_figure)
    print(f"{res.method}: peak_count={res.summary.get('peak_count')} rss={res.rss!r} "
          f"converged={str(res.converged).lower()} -> {out}")
    if not res.converged:
        logger.warning("not converged: %s", "; ".join(res.flags))
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg, input_path, out = _resolve(args)
    grid = parse_grid(args.kappa_grid)
    data = ingest_csv(input_path)
    rows = kappa_sweep(cfg, data, grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kappa", "peak_count", "rss", "converged", "error"])
    for r in rows:
        w.writerow([repr(r["kappa"]), r["peak_count"], repr(r["rss"]),
                    "true" if r["converged"] else "false", r["error"]])
    bundle = OutputBundle(out)
    bundle.add("kappa_sweep.csv", buf.getvalue())
    bundle.commit()
    sys.stdout.write(buf.getvalue())
    if any(r["error"] for r in rows) or not all(r["converged"] for r in rows):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_recommend(args) -> int:
    identical = {"yes": True, "no": False, "unknown": None}[args.identical]
    rec = recommend_method(identical, args.shape_known == "yes", args.overlap == "yes")
    sys.stdout.write(kv_text({"method": rec.method, "alternatives": rec.alternatives or "none",
                              "rationale": rec.rationale}))
    return EXIT_OK


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}_{k}" if prefix else k, v, out)
    elif isinstance(obj, list) and obj and isinstance(obj[0], dict):
        for i, v in enumerate(obj, start=1):
            _flatten(f"{prefix}{i}", v, out)
    else:
        out[prefix] = obj
    return out


def _cmd_generate(args) -> int:
    params = {}
    if args.count is not None:
        if args.archetype == "spectrum":
            raise ConfigError("--count applies to dive and pulses only")
        params["n_dives" if args.archetype == "dive" else "n_pulses"] = args.count
    if args.noise is not None:
        params["noise_frac" if args.archetype == "pulses" else "noise"] = args.noise
    if args.n is not None:
        if args.archetype == "dive":
            raise ConfigError("--n applies to pulses and spectrum only")
        params["n"] = args.n
    syn = generate_synthetic(args.archetype, seed=args.seed, **params)
    truth = _flatten("", syn.truth, {"seed": args.seed})
    bundle = OutputBundle(args.output_dir)
    bundle.add("data.csv", record_csv(syn.record))
    bundle.add("truth.txt", kv_text(truth))
    bundle.commit()
    print(f"{args.archetype}: n={len(syn.record)} count={syn.truth['count']} -> {args.output_dir}")
    return EXIT_OK


_COMMANDS = {"fit": _cmd_fit, "sweep-kappa": _cmd_sweep, "recommend": _cmd_recommend,
             "generate": _cmd_generate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (NumericalError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"peakforge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ConfigError, ValueError, OSError) as exc:
        print(f"peakforge: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as exc:
        print(f"peakforge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
