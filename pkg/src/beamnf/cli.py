"""Command line entry point.

One verb per experiment kind plus `dump-hamiltonian` for inspecting the
truncated interaction polynomial.  Every experiment verb reads its
section from an INI config (all keys optional unless noted), runs, and
writes record.json, the delimited outputs, and figures into the output
directory.

Exit codes: 0 success (including a rejected-but-recorded normalization
gate), 2 invalid config or arguments, 3 exhausted iteration budget,
4 numerical blow-up.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .dynamics import build_R0, NonlinearitySpec
from .errors import BeamnfError
from .experiments import (
    ExperimentConfig,
    ExperimentKind,
    atomic_write_text,
    run,
)
from .hamiltonian import dumps_hamiltonian

_VERB_TO_KIND = {
    "audit-divisors": ExperimentKind.DIVISOR_AUDIT,
    "scan-mass": ExperimentKind.MASS_SCAN,
    "bnf": ExperimentKind.BNF,
    "lifespan": ExperimentKind.LIFESPAN,
    "fit": ExperimentKind.FIT,
    "predict-times": ExperimentKind.PREDICT_TIMES,
}


def _config_for(kind: ExperimentKind, args) -> ExperimentConfig:
    overrides = {}
    if kind is ExperimentKind.FIT and getattr(args, "input", None):
        overrides["input"] = args.input
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config, kind, seed=args.seed, out_dir=args.out)
        cfg.params.update(overrides)
        return cfg
    return ExperimentConfig.default(
        kind,
        seed=args.seed if args.seed is not None else 0,
        out_dir=args.out,
        overrides=overrides,
    )


def _run_experiment(kind: ExperimentKind, args) -> int:
    cfg = _config_for(kind, args)
    if kind is ExperimentKind.BNF and args.override_gates:
        cfg.params["gate"] = "empirical"
    record = run(cfg)
    out = Path(cfg.out_dir)
    print(f"wrote {out / 'record.json'}")
    for name in record.outputs:
        print(f"wrote {out / name}")
    print(f"payload digest {record.payload_digest[:16]}")
    if record.error is not None:
        print(
            f"error [{record.error['type']}]: {record.error['message']}",
            file=sys.stderr,
        )
        return int(record.error["exit_code"])
    if kind is ExperimentKind.BNF and record.payload.get("report", {}).get("rejected"):
        reason = record.payload["report"].get("rejection_reason")
        print(f"gate rejected: {reason}", file=sys.stderr)
    return 0


def _dump_hamiltonian(args) -> int:
    # shares the [bnf] section: same model keys (m, M, nonlinearity, ...)
    out_dir = args.out if args.out is not None else "runs/dump-hamiltonian"
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config, ExperimentKind.BNF, out_dir=out_dir)
    else:
        cfg = ExperimentConfig.default(ExperimentKind.BNF, out_dir=out_dir)
    p = cfg.params
    spec = NonlinearitySpec(dict(p["nonlinearity"]), R=float(p["radius"]))
    cutoff = int(p["degree_cutoff"]) or spec.max_degree
    R0 = build_R0(spec, float(p["m"]), int(p["M"]), cutoff)
    text = dumps_hamiltonian(R0)
    path = Path(cfg.out_dir) / "hamiltonian.txt"
    atomic_write_text(path, text)
    print(text, end="" if text.endswith("\n") else "\n")
    print(f"wrote {path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamnf",
        description="spectral normal-form experiments for the beam equation",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="INI config file")
        sp.add_argument("--seed", type=int, metavar="N", help="override the seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")

    sp = sub.add_parser("audit-divisors", help="check lower bounds on |omega . l|")
    common(sp)
    sp = sub.add_parser("scan-mass", help="smallest divisor across the mass range")
    common(sp)
    sp = sub.add_parser("bnf", help="run the normalization iteration")
    common(sp)
    sp.add_argument(
        "--override-gates",
        action="store_true",
        help="replace the budget gate with the measured-norm gate",
    )
    sp = sub.add_parser("lifespan", help="measure escape times by simulation")
    common(sp)
    sp = sub.add_parser("fit", help="fit a power law to escape times")
    common(sp)
    sp.add_argument("--input", metavar="CSV", help="summary CSV to fit")
    sp = sub.add_parser("predict-times", help="evaluate the stability-time bounds")
    common(sp)
    sp = sub.add_parser(
        "dump-hamiltonian", help="print the truncated interaction polynomial"
    )
    common(sp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "dump-hamiltonian":
            return _dump_hamiltonian(args)
        return _run_experiment(_VERB_TO_KIND[args.verb], args)
    except BeamnfError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
