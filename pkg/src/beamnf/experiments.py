"""Config-driven experiment runner.

An experiment is a section in an INI-style config file ([divisor-audit],
[mass-scan], [bnf], [lifespan], [fit], [predict-times]) plus an optional
[common] section for shared keys.  Every run resolves all defaults into
the record it writes, hashes the resolved config and the result payload,
and persists JSON + CSV atomically (write to a temp file in the target
directory, then rename).  Figures are rendered next to each CSV.

Reproducibility contract: identical resolved config and seed produce an
identical payload digest; volatile fields (wall-clock durations) are
stripped before hashing.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .divisors import (
    LatticeVector,
    bad_set_measure,
    check_diophantine,
    divisor_grid,
    enumerate_lattice,
    mass_grid,
    vander_check,
    write_audit_csv,
)
from .dynamics import (
    BeamState,
    NonlinearitySpec,
    stability_time,
    write_trajectory_csv,
)
from .errors import BeamnfError, InsufficientDataError, ValidationError
from .hamiltonian import dump_hamiltonian, dumps_hamiltonian
from .normal_form import (
    LifespanParams,
    ParamSchedule,
    bnf_iterate,
    predicted_times,
)
from .divisors import FrequencyVector
from .dynamics import build_R0
from .rng import generator
from .weights import SeqState, Weight, WeightKind, seq_norm

__all__ = [
    "ExperimentKind",
    "ExperimentConfig",
    "RunRecord",
    "run",
    "fit_exponent",
    "FitResult",
    "optimal_p",
    "atomic_write_text",
]


# -- atomic persistence -----------------------------------------------


def atomic_write_text(path, text: str) -> None:
    """Write text so that the final path never holds a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_via(path, writer: Callable[[str], None]) -> None:
    """Run a path-consuming writer against a temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- config schema ----------------------------------------------------


class ExperimentKind(Enum):
    DIVISOR_AUDIT = "divisor-audit"
    MASS_SCAN = "mass-scan"
    BNF = "bnf"
    LIFESPAN = "lifespan"
    FIT = "fit"
    PREDICT_TIMES = "predict-times"


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"expected a number, got {text!r}") from None


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"expected an integer, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> Tuple[float, ...]:
    vals = tuple(
        _parse_float(tok) for tok in text.replace(",", " ").split() if tok
    )
    if not vals:
        raise ValidationError("expected at least one number")
    return vals


def _parse_taylor(text: str) -> Tuple[Tuple[int, float], ...]:
    """Taylor data like "3:1.0, 5:-0.2" mapping degree to coefficient."""
    out = []
    for tok in text.replace(",", " ").split():
        if ":" not in tok:
            raise ValidationError(f"bad Taylor entry {tok!r}; use degree:coeff")
        d, c = tok.split(":", 1)
        out.append((_parse_int(d), _parse_float(c)))
    if not out:
        raise ValidationError("empty Taylor data")
    return tuple(out)


def _parse_str(text: str) -> str:
    return text.strip()


# per-kind schema: key -> (parser, default); None default means required
_COMMON_KEYS = {
    "m": (_parse_float, 1.37),
    "gamma": (_parse_float, 1e-2),
    "seed": (_parse_int, 0),
}

_SCHEMAS: Dict[ExperimentKind, Dict[str, Tuple[Callable, object]]] = {
    ExperimentKind.DIVISOR_AUDIT: {
        "M": (_parse_int, 6),
        "max_l1": (_parse_int, 4),
        "use_reduced": (_parse_bool, False),
        "keep_rows": (_parse_bool, True),
    },
    ExperimentKind.MASS_SCAN: {
        "M": (_parse_int, 6),
        "max_l1": (_parse_int, 4),
        "grid_size": (_parse_int, 1024),
        "measure_samples": (_parse_int, 0),
        "measure_threshold": (_parse_str, "diophantine"),
        "use_reduced": (_parse_bool, False),
        "vander_l": (_parse_str, ""),
    },
    ExperimentKind.BNF: {
        "M": (_parse_int, 4),
        "weight": (_parse_str, "subexp"),
        "K": (_parse_int, 2),
        "r0": (_parse_float, 1e-3),
        "p": (_parse_float, 1.5),
        "q": (_parse_float, 2.0),
        "s0": (_parse_float, 1.0),
        "rbar": (_parse_float, 0.0),
        "C": (_parse_float, 1.0),
        "tail_buffer": (_parse_int, 2),
        "gate": (_parse_str, "theoretical"),
        "nonlinearity": (_parse_taylor, ((3, 1.0),)),
        "radius": (_parse_float, 1.0),
        "degree_cutoff": (_parse_int, 0),
    },
    ExperimentKind.LIFESPAN: {
        "M": (_parse_int, 5),
        "deltas": (_parse_floats, (0.05, 0.02, 0.01)),
        "weight": (_parse_str, "subexp"),
        "p": (_parse_float, 1.5),
        "s": (_parse_float, 1.0),
        "q": (_parse_float, 2.0),
        "dt": (_parse_float, 1e-2),
        "horizon": (_parse_float, 1e3),
        "sample_every": (_parse_int, 10),
        "scheme": (_parse_str, "strang"),
        "nonlinearity": (_parse_taylor, ((3, 1.0),)),
        "radius": (_parse_float, 1.0),
        "fit": (_parse_bool, True),
    },
    ExperimentKind.FIT: {
        "input": (_parse_str, None),
    },
    ExperimentKind.PREDICT_TIMES: {
        "deltas": (_parse_floats, (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)),
        "p": (_parse_float, 2.0),
        "q": (_parse_float, 2.0),
        "s": (_parse_float, 1.0),
        "c": (_parse_float, 1.0),
        "C1": (_parse_float, 1.0),
        "C2": (_parse_float, 1.0),
        "C3": (_parse_float, 1.0),
        "nonlinearity": (_parse_taylor, ((3, 1.0),)),
        "radius": (_parse_float, 1.0),
    },
}


@dataclass
class ExperimentConfig:
    """A fully resolved experiment: kind, parameters, seed, output dir."""

    kind: ExperimentKind
    params: Dict[str, object]
    seed: int = 0
    out_dir: str = "runs"

    @classmethod
    def load(
        cls,
        path,
        kind,
        seed: Optional[int] = None,
        out_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Read one experiment section (plus [common]) from an INI file."""
        kind = ExperimentKind(kind) if not isinstance(kind, ExperimentKind) else kind
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        # keys are case sensitive: M is the mode cutoff, m is the mass
        parser.optionxform = str
        read = parser.read(str(path))
        if not read:
            raise ValidationError(f"config file {path} not found or unreadable")
        schema = dict(_SCHEMAS[kind])
        schema.update(_COMMON_KEYS)

        raw: Dict[str, str] = {}
        if parser.has_section("common"):
            raw.update(parser.items("common"))
        section = kind.value
        if parser.has_section(section):
            raw.update(parser.items(section))

        params: Dict[str, object] = {}
        for name, text in raw.items():
            if name not in schema:
                raise ValidationError(
                    f"unknown config key {name!r} for {section}; "
                    f"known keys: {sorted(schema)}"
                )
            parse, _ = schema[name]
            params[name] = parse(text)
        for key, (_, default) in schema.items():
            if key not in params:
                if default is None:
                    raise ValidationError(
                        f"config key {key!r} is required for {section}"
                    )
                params[key] = default

        cfg_seed = int(params.pop("seed"))
        if seed is not None:
            cfg_seed = int(seed)
        cfg = cls(
            kind=kind,
            params=params,
            seed=cfg_seed,
            out_dir=out_dir if out_dir is not None else f"runs/{kind.value}",
        )
        cfg.validate()
        return cfg

    @classmethod
    def default(
        cls,
        kind,
        seed: int = 0,
        out_dir: Optional[str] = None,
        overrides: Optional[Dict[str, object]] = None,
    ) -> "ExperimentConfig":
        """All-defaults config for a kind; fails if a key stays required."""
        kind = ExperimentKind(kind) if not isinstance(kind, ExperimentKind) else kind
        schema = dict(_SCHEMAS[kind])
        schema.update(_COMMON_KEYS)
        params: Dict[str, object] = {
            key: default for key, (_, default) in schema.items() if default is not None
        }
        for key, val in (overrides or {}).items():
            if key not in schema:
                raise ValidationError(
                    f"unknown config key {key!r} for {kind.value}"
                )
            params[key] = val
        for key in schema:
            if key not in params:
                raise ValidationError(
                    f"config key {key!r} is required for {kind.value}; "
                    "provide a config file"
                )
        params.pop("seed")
        cfg = cls(
            kind=kind,
            params=params,
            seed=int(seed),
            out_dir=out_dir if out_dir is not None else f"runs/{kind.value}",
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        p = self.params
        if "m" in p and not 1.0 <= p["m"] <= 2.0:
            raise ValidationError(f"mass must lie in [1, 2], got {p['m']}")
        if "gamma" in p and not 0.0 < p["gamma"] < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {p['gamma']}")
        if "q" in p and not 1.0 < p["q"] <= 2.0:
            raise ValidationError(f"q must lie in (1, 2], got {p['q']}")
        if "p" in p and p["p"] <= 0.5:
            raise ValidationError(f"p must exceed 1/2, got {p['p']}")
        if "M" in p and p["M"] < 1:
            raise ValidationError(f"M must be positive, got {p['M']}")
        if "deltas" in p and any(d <= 0 for d in p["deltas"]):
            raise ValidationError("all deltas must be positive")
        if "dt" in p and p["dt"] <= 0:
            raise ValidationError(f"dt must be positive, got {p['dt']}")
        if "horizon" in p and p["horizon"] <= 0:
            raise ValidationError(f"horizon must be positive, got {p['horizon']}")
        if "weight" in p and p["weight"] not in ("subexp", "sobolev"):
            raise ValidationError(
                f"weight must be subexp or sobolev, got {p['weight']!r}"
            )
        if "measure_threshold" in p and p["measure_threshold"] not in (
            "diophantine",
            "uniform",
        ):
            raise ValidationError(
                f"bad measure_threshold {p['measure_threshold']!r}"
            )
        if "gate" in p and p["gate"] not in ("theoretical", "empirical", "off"):
            raise ValidationError(f"bad gate mode {p['gate']!r}")
        if "scheme" in p:
            alias = str(p["scheme"]).strip().lower().replace("_", "").replace("-", "")
            try:
                p["scheme"] = {
                    "strang": "strang",
                    "strangsplit": "strang",
                    "rk4i": "rk4i",
                    "rk4interaction": "rk4i",
                }[alias]
            except KeyError:
                raise ValidationError(
                    f"bad scheme {p['scheme']!r}; use strang or rk4i"
                ) from None

    def echo(self) -> Dict[str, object]:
        """All resolved parameters, defaults included, JSON-ready."""
        out = {"kind": self.kind.value, "seed": self.seed}
        for key, val in sorted(self.params.items()):
            if isinstance(val, tuple):
                out[key] = list(
                    list(v) if isinstance(v, tuple) else v for v in val
                )
            else:
                out[key] = val
        return out


# -- run records ------------------------------------------------------


_VOLATILE_KEYS = {"wall_time_s", "started_at", "finished_at"}


def _strip_volatile(obj):
    if isinstance(obj, dict):
        return {
            k: _strip_volatile(v)
            for k, v in obj.items()
            if k not in _VOLATILE_KEYS
        }
    if isinstance(obj, (list, tuple)):
        return [_strip_volatile(v) for v in obj]
    return obj


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def _digest(obj) -> str:
    return hashlib.sha256(_canonical_json(obj).encode("utf8")).hexdigest()


@dataclass
class RunRecord:
    """Self-describing result of one experiment run."""

    schema: int
    kind: str
    config: Dict[str, object]
    seed: int
    config_hash: str
    payload: Dict[str, object]
    payload_digest: str
    error: Optional[Dict[str, object]]
    started_at: str
    finished_at: str
    tool_version: str
    outputs: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _utc(ts: float) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(ts))


# -- experiment bodies ------------------------------------------------


def _weight_of(params: Dict[str, object], M: int, s_key: str = "s") -> Weight:
    if params["weight"] == "subexp":
        return Weight.subexp(
            s=float(params.get(s_key, params.get("s0", 1.0))),
            p=float(params["p"]),
            q=float(params["q"]),
            M=M,
        )
    return Weight.sobolev(p=float(params["p"]), M=M)


def _seeded_profile(seed: int, index: int, M: int) -> np.ndarray:
    """Reproducible complex mode profile concentrated on low modes."""
    rng = generator(seed, "lifespan-profile", index)
    raw = rng.normal(size=2 * M + 1) + 1j * rng.normal(size=2 * M + 1)
    j = np.arange(-M, M + 1)
    return raw / (1.0 + j.astype(float) ** 2)


def _run_divisor_audit(cfg: ExperimentConfig, payload, out: Path, outputs):
    p = cfg.params
    report = check_diophantine(
        m=float(p["m"]),
        gamma=float(p["gamma"]),
        max_l1=int(p["max_l1"]),
        M=int(p["M"]),
        use_reduced=bool(p["use_reduced"]),
        keep_rows=bool(p["keep_rows"]),
    )
    payload["passed"] = report.passed
    payload["worst_ratio"] = _json_num(report.worst_ratio)
    payload["worst_vector"] = (
        report.worst_vector.encode() if report.worst_vector is not None else None
    )
    payload["n_enumerated"] = report.n_enumerated
    payload["n_checked"] = report.n_checked
    payload["n_shortcut"] = report.n_shortcut
    if report.rows:
        csv_path = out / "audit.csv"
        _atomic_via(csv_path, lambda tmp: write_audit_csv(tmp, report.rows))
        outputs.append(csv_path.name)
        from . import figures

        fig = figures.audit_figure(report.rows, out / "audit.png")
        outputs.append(Path(fig).name)


def _run_mass_scan(cfg: ExperimentConfig, payload, out: Path, outputs):
    p = cfg.params
    M = int(p["M"])
    family = enumerate_lattice(int(p["max_l1"]), M)
    grid = mass_grid(int(p["grid_size"]))
    best = np.full(len(grid), np.inf)
    argmin = [""] * len(grid)
    for l in family:
        vals = np.abs(divisor_grid(l, grid))
        mask = vals < best
        if np.any(mask):
            best = np.where(mask, vals, best)
            enc = l.encode()
            for idx in np.nonzero(mask)[0]:
                argmin[idx] = enc
    payload["n_vectors"] = len(family)
    payload["grid_size"] = len(grid)
    payload["global_min"] = _json_num(float(best.min()))
    payload["global_min_mass"] = _json_num(float(grid[int(best.argmin())]))
    payload["global_min_vector"] = argmin[int(best.argmin())]

    csv_path = out / "mass_scan.csv"

    def _write(tmp):
        with open(tmp, "w") as fh:
            fh.write("m,min_abs_divisor,argmin_l\n")
            for mval, dval, enc in zip(grid, best, argmin):
                fh.write(f"{mval:.17g},{dval:.17g},{enc}\n")

    _atomic_via(csv_path, _write)
    outputs.append(csv_path.name)

    if p["vander_l"]:
        l = LatticeVector.decode(str(p["vander_l"]))
        rep = vander_check(l, grid)
        payload["vander"] = {
            "l": l.encode(),
            "k_star": rep.k_star,
            "min_abs": _json_num(rep.min_abs),
            "bound": _json_num(rep.bound),
            "passed": rep.passed,
        }
    if int(p["measure_samples"]) > 0:
        est = bad_set_measure(
            family,
            float(p["gamma"]),
            int(p["measure_samples"]),
            seed=cfg.seed,
            use_reduced=bool(p["use_reduced"]),
            threshold=str(p["measure_threshold"]),
        )
        payload["measure"] = {
            "estimate": _json_num(est.estimate),
            "stderr": _json_num(est.stderr),
            "samples": est.samples,
            "threshold": p["measure_threshold"],
        }
    from . import figures

    fig = figures.mass_scan_figure(grid, best, out / "mass_scan.png")
    outputs.append(Path(fig).name)


def _run_bnf(cfg: ExperimentConfig, payload, out: Path, outputs):
    p = cfg.params
    M = int(p["M"])
    m = float(p["m"])
    spec = NonlinearitySpec(dict(p["nonlinearity"]), R=float(p["radius"]))
    cutoff = int(p["degree_cutoff"]) or spec.max_degree
    R0 = build_R0(spec, m, M, cutoff)
    freq = FrequencyVector(m=m, M=M)
    kind = WeightKind.SUBEXP if p["weight"] == "subexp" else WeightKind.SOBOLEV
    schedule = ParamSchedule(
        kind=kind,
        K=int(p["K"]),
        r0=float(p["r0"]),
        gamma=float(p["gamma"]),
        p=float(p["p"]),
        q=float(p["q"]),
        s0=float(p["s0"]),
        rbar=float(p["rbar"]) or None,
        C=float(p["C"]),
    )
    state, report, generators = bnf_iterate(
        R0,
        freq,
        schedule,
        tail_buffer=int(p["tail_buffer"]),
        gate_mode=str(p["gate"]),
    )
    payload["report"] = report.as_dict()
    payload["report"].pop("generators", None)
    payload["n_r0_terms"] = len(R0)

    for i, S in enumerate(generators):
        path = out / f"generator_{i}.txt"
        atomic_write_text(path, dumps_hamiltonian(S))
        outputs.append(path.name)
    z = state.normal_part()
    path = out / "normal_form.txt"
    atomic_write_text(path, dumps_hamiltonian(z))
    outputs.append(path.name)
    rem = state.remainder()
    path = out / "remainder.txt"
    atomic_write_text(path, dumps_hamiltonian(rem))
    outputs.append(path.name)

    csv_path = out / "bnf_steps.csv"

    def _write(tmp):
        with open(tmp, "w") as fh:
            fh.write(
                "k,degree,n_remainder_terms,n_generator_terms,min_abs_divisor,"
                "delta_k,gate_log_lhs_theoretical,gate_log_lhs_empirical,"
                "gate_log_rhs,gate_passed,generator_norm_upper,range_residual\n"
            )
            for s in report.steps:
                fh.write(
                    f"{s.k},{s.degree},{s.n_remainder_terms},"
                    f"{s.n_generator_terms},{s.min_abs_divisor:.17g},"
                    f"{s.delta_k:.17g},{s.gate_log_lhs_theoretical:.17g},"
                    f"{s.gate_log_lhs_empirical:.17g},{s.gate_log_rhs:.17g},"
                    f"{int(s.gate_passed)},{s.generator_norm_upper:.17g},"
                    f"{s.range_residual:.17g}\n"
                )

    _atomic_via(csv_path, _write)
    outputs.append(csv_path.name)
    from . import figures

    fig = figures.bnf_figure(report, out / "bnf.png")
    outputs.append(Path(fig).name)


def _run_lifespan(cfg: ExperimentConfig, payload, out: Path, outputs):
    p = cfg.params
    M = int(p["M"])
    m = float(p["m"])
    spec = NonlinearitySpec(dict(p["nonlinearity"]), R=float(p["radius"]))
    w = _weight_of(p, M)
    deltas = [float(d) for d in p["deltas"]]
    rows = payload.setdefault("results", [])
    for i, delta in enumerate(deltas):
        profile = _seeded_profile(cfg.seed, i, M)
        norm = seq_norm(SeqState(profile, M), w)
        u0 = BeamState(profile / norm * delta, m)
        result = stability_time(
            u0,
            spec,
            delta,
            w,
            horizon=float(p["horizon"]),
            dt=float(p["dt"]),
            sample_every=int(p["sample_every"]),
            scheme=str(p["scheme"]),
        )
        traj = out / f"trajectory_{i}.csv"
        _atomic_via(traj, lambda tmp: write_trajectory_csv(tmp, result))
        outputs.append(traj.name)
        rows.append(
            {
                "delta": delta,
                "escape_time": _json_num(result.escape_time),
                "censored": result.censored,
                "samples": len(result.times),
            }
        )

    csv_path = out / "lifespan_summary.csv"

    def _write(tmp):
        with open(tmp, "w") as fh:
            fh.write("delta,escape_time,censored\n")
            for row in rows:
                fh.write(
                    f"{row['delta']:.17g},{row['escape_time']:.17g},"
                    f"{int(row['censored'])}\n"
                )

    _atomic_via(csv_path, _write)
    outputs.append(csv_path.name)

    fit_payload = None
    if p["fit"]:
        try:
            fit = fit_exponent(
                [(r["delta"], r["escape_time"], r["censored"]) for r in rows]
            )
            fit_payload = {
                "slope": _json_num(fit.slope),
                "intercept": _json_num(fit.intercept),
                "r_squared": _json_num(fit.r_squared),
                "n_used": fit.n_used,
                "n_censored": fit.n_censored,
            }
        except InsufficientDataError as err:
            fit_payload = {"skipped": str(err)}
    payload["fit"] = fit_payload
    from . import figures

    fig = figures.lifespan_figure(rows, out / "lifespan.png")
    outputs.append(Path(fig).name)


def _run_fit(cfg: ExperimentConfig, payload, out: Path, outputs):
    path = Path(str(cfg.params["input"]))
    if not path.exists():
        raise ValidationError(f"fit input {path} does not exist")
    series = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = {name: i for i, name in enumerate(header)}
        if "delta" not in cols:
            raise ValidationError(f"fit input {path} lacks a delta column")
        t_col = "escape_time" if "escape_time" in cols else "T"
        if t_col not in cols:
            raise ValidationError(f"fit input {path} lacks an escape_time column")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 2 or not parts[0]:
                continue
            delta = float(parts[cols["delta"]])
            T = float(parts[cols[t_col]])
            cens = (
                bool(int(float(parts[cols["censored"]])))
                if "censored" in cols
                else False
            )
            series.append((delta, T, cens))
    fit = fit_exponent(series)
    payload["slope"] = _json_num(fit.slope)
    payload["intercept"] = _json_num(fit.intercept)
    payload["r_squared"] = _json_num(fit.r_squared)
    payload["n_used"] = fit.n_used
    payload["n_censored"] = fit.n_censored
    from . import figures

    fig = figures.fit_figure(series, fit, out / "fit.png")
    outputs.append(Path(fig).name)


def _run_predict_times(cfg: ExperimentConfig, payload, out: Path, outputs):
    p = cfg.params
    spec = NonlinearitySpec(dict(p["nonlinearity"]), R=float(p["radius"]))
    params = LifespanParams(
        F_norm=spec.F_norm,
        R=spec.R,
        gamma=float(p["gamma"]),
        p=float(p["p"]),
        q=float(p["q"]),
        s=float(p["s"]),
        c=float(p["c"]),
        C1=float(p["C1"]),
        C2=float(p["C2"]),
        C3=float(p["C3"]),
    )
    deltas = [float(d) for d in p["deltas"]]
    rows = payload.setdefault("results", [])
    for delta in deltas:
        est = predicted_times(delta, params)
        row = {"delta": delta, "p_of_delta": _json_num(est["p_of_delta"])}
        for key in ("T_sobolev", "T_coro", "T_subexp"):
            te = est[key]
            row[key] = {
                "log10_threshold": _json_num(te.log10_threshold),
                "within_threshold": te.within_threshold,
                "log10_time": _json_num(te.log10_time),
            }
        rows.append(row)

    csv_path = out / "predict_times.csv"

    def _write(tmp):
        with open(tmp, "w") as fh:
            fh.write(
                "delta,p_of_delta,log10_T_sobolev,log10_T_coro,log10_T_subexp,"
                "within_sobolev,within_coro,within_subexp\n"
            )
            for row in rows:
                p_d = row["p_of_delta"]
                fh.write(
                    f"{row['delta']:.17g},"
                    f"{p_d if isinstance(p_d, str) else format(p_d, '.17g')},"
                    f"{_csv_num(row['T_sobolev']['log10_time'])},"
                    f"{_csv_num(row['T_coro']['log10_time'])},"
                    f"{_csv_num(row['T_subexp']['log10_time'])},"
                    f"{int(row['T_sobolev']['within_threshold'])},"
                    f"{int(row['T_coro']['within_threshold'])},"
                    f"{int(row['T_subexp']['within_threshold'])}\n"
                )

    _atomic_via(csv_path, _write)
    outputs.append(csv_path.name)
    from . import figures

    fig = figures.predict_times_figure(rows, out / "predict_times.png")
    outputs.append(Path(fig).name)


_RUNNERS = {
    ExperimentKind.DIVISOR_AUDIT: _run_divisor_audit,
    ExperimentKind.MASS_SCAN: _run_mass_scan,
    ExperimentKind.BNF: _run_bnf,
    ExperimentKind.LIFESPAN: _run_lifespan,
    ExperimentKind.FIT: _run_fit,
    ExperimentKind.PREDICT_TIMES: _run_predict_times,
}


def _json_num(x):
    """JSON-safe float: inf and nan become strings."""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
    return x


def _csv_num(x) -> str:
    if isinstance(x, str):
        return x
    return format(x, ".17g")


def run(config: ExperimentConfig) -> RunRecord:
    """Execute one experiment and persist its record atomically.

    Module errors are captured into the record (with any partial payload
    kept); everything else propagates.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    payload: Dict[str, object] = {}
    outputs: List[str] = []
    error: Optional[Dict[str, object]] = None
    try:
        _RUNNERS[config.kind](config, payload, out, outputs)
    except BeamnfError as err:
        error = {
            "type": type(err).__name__,
            "message": str(err),
            "exit_code": err.exit_code,
        }
    finished = time.time()

    echo = config.echo()
    record = RunRecord(
        schema=1,
        kind=config.kind.value,
        config=echo,
        seed=config.seed,
        config_hash=_digest({"config": echo, "seed": config.seed}),
        payload=payload,
        payload_digest=_digest(_strip_volatile(payload)),
        error=error,
        started_at=_utc(started),
        finished_at=_utc(finished),
        tool_version=__version__,
        outputs=outputs,
    )
    atomic_write_text(out / "record.json", record.to_json())
    return record


# -- fitting ----------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_used: int
    n_censored: int


def fit_exponent(series: Sequence) -> FitResult:
    """Least-squares exponent a of T ~ C delta^{-a} on log-log axes.

    Accepts (delta, T) or (delta, T, censored) rows; censored rows are
    excluded and counted.  Needs at least three uncensored points.
    """
    used = []
    n_censored = 0
    for row in series:
        if len(row) == 3:
            delta, T, cens = row
        else:
            delta, T = row
            cens = False
        if cens:
            n_censored += 1
            continue
        if delta <= 0 or T <= 0:
            raise ValidationError(
                f"fit needs positive (delta, T), got ({delta}, {T})"
            )
        used.append((math.log(delta), math.log(T)))
    if len(used) < 3:
        raise InsufficientDataError(
            f"need at least 3 uncensored points, have {len(used)} "
            f"({n_censored} censored)"
        )
    x = np.array([u[0] for u in used])
    y = np.array([u[1] for u in used])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(
        slope=float(-slope),
        intercept=float(intercept),
        r_squared=r2,
        n_used=len(used),
        n_censored=n_censored,
    )


def optimal_p(delta: float, gamma: float, delta_S: float, c: float) -> float:
    """The regularity maximizing the fixed-p stability bound.

    p(delta) = 1 + (ln(delta_S/delta) / (24 c^2 ln(1/gamma)))^{3/5};
    strictly decreasing in delta, defined for delta < delta_S.
    """
    if not 0.0 < gamma < 1.0:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    if delta_S <= 0:
        raise ValidationError(f"delta_S must be positive, got {delta_S}")
    if c <= 0:
        raise ValidationError(f"c must be positive, got {c}")
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    if delta >= delta_S:
        raise ValidationError(
            f"delta must lie strictly below delta_S = {delta_S:.6g}, got {delta}"
        )
    ratio = math.log(delta_S / delta)
    return 1.0 + (ratio / (24.0 * c * c * math.log(1.0 / gamma))) ** 0.6
