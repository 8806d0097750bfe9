"""Command line interface: design, simulate, verify.

``design`` solves the offline pipeline and writes a JSON report (regulator
maps, integer matrices, characteristic coefficients, validation table, and
the modulus bound).  ``simulate`` runs the encrypted closed loop, writing a
CSV trace, a JSON summary, and the two companion figures.  ``verify`` replays
a recorded trace: it reruns the configuration from scratch (same seed, same
key derivation), regenerates every row, and fails on the first byte that
differs; the rerun itself re-asserts all loop invariants against the oracle.

Exit codes: 0 success, 2 configuration or usage error, 3 verification
mismatch, 4 design infeasibility.

The RNG seed comes from, in order: the --seed flag, the config's sim.seed,
the CIPHERLOOP_SEED environment variable, and finally 0.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, he
from .design import (
    DesignArtifacts,
    DesignError,
    PlantSpec,
    RegulatorSolution,
    compute_modulus_bound,
    default_initial_reference,
    default_initial_state,
    integerize,
    solve_regulator,
    validate_design,
)
from .exactmath import fraction_to_str, frac
from .simloop import (
    SCHEMES,
    LoopConfig,
    LoopError,
    NonIntegerInitialStateError,
    RunResult,
    TraceRecord,
    run_closed_loop,
)

__all__ = ["ConfigError", "ConfigFile", "parse_config", "write_trace",
           "execute_command", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_DESIGN = 4

TRACE_COLUMNS = (
    "k",
    "y_err_inf",
    "restoration_exact",
    "figure4_norm",
    "internal_state_inf",
    "l_k",
    "overflow_detected",
    "y_err_float",
    "figure4_float",
    "internal_state_float",
)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ConfigFile:
    spec: PlantSpec
    gamma: Fraction
    s: Fraction
    l0: Fraction
    horizon: int
    scheme: str
    backend: str
    q: Optional[int]
    seed: Optional[int]
    x_p0: Optional[list]
    v_p0: Optional[list]
    xhat0: Optional[list]
    vhat0: Optional[list]
    trace_path: str
    report_path: str


def _require_keys(obj: dict, where: str, required: Sequence[str],
                  optional: Sequence[str] = ()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"missing field(s) in {where}: {', '.join(missing)}")


def parse_config(path) -> ConfigFile:
    """Load and strictly validate a JSON run configuration."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    _require_keys(raw, "config", ["plant", "exosystem", "gains", "initial_bounds",
                                  "design", "sim"], ["output"])
    _require_keys(raw["plant"], "plant", ["A", "B", "C"])
    _require_keys(raw["exosystem"], "exosystem", ["S"])
    _require_keys(raw["gains"], "gains", ["K", "L"])
    _require_keys(raw["initial_bounds"], "initial_bounds", ["c_xp0", "c_vp0"])
    _require_keys(raw["design"], "design", ["gamma", "s", "l0"])
    _require_keys(raw["sim"], "sim", ["horizon", "scheme", "backend"],
                  ["q", "seed", "x_p0", "v_p0", "xhat0", "vhat0"])
    output = raw.get("output", {})
    _require_keys(output, "output", [], ["trace_path", "report_path"])

    try:
        spec = PlantSpec(
            A=raw["plant"]["A"],
            B=raw["plant"]["B"],
            C=raw["plant"]["C"],
            S=raw["exosystem"]["S"],
            K=raw["gains"]["K"],
            L=raw["gains"]["L"],
            c_xp0=raw["initial_bounds"]["c_xp0"],
            c_vp0=raw["initial_bounds"]["c_vp0"],
        )
        gamma = frac(raw["design"]["gamma"])
        s = frac(raw["design"]["s"])
        l0 = frac(raw["design"]["l0"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad plant/design data: {exc}") from exc

    sim = raw["sim"]
    scheme = sim["scheme"]
    if scheme not in SCHEMES:
        raise ConfigError(f"sim.scheme must be one of {SCHEMES}, got {scheme!r}")
    backend = sim["backend"]
    if backend not in ("mock", "paillier"):
        raise ConfigError(f"sim.backend must be 'mock' or 'paillier', got {backend!r}")
    horizon = sim["horizon"]
    if not isinstance(horizon, int) or horizon < 0:
        raise ConfigError(f"sim.horizon must be a nonnegative integer, got {horizon!r}")
    q = sim.get("q")
    if q is not None and (not isinstance(q, int) or q < 2):
        raise ConfigError(f"sim.q must be an integer >= 2, got {q!r}")
    seed = sim.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"sim.seed must be an integer, got {seed!r}")

    stem = path.stem
    return ConfigFile(
        spec=spec,
        gamma=gamma,
        s=s,
        l0=l0,
        horizon=horizon,
        scheme=scheme,
        backend=backend,
        q=q,
        seed=seed,
        x_p0=sim.get("x_p0"),
        v_p0=sim.get("v_p0"),
        xhat0=sim.get("xhat0"),
        vhat0=sim.get("vhat0"),
        trace_path=output.get("trace_path", f"out/{stem}_trace.csv"),
        report_path=output.get("report_path", f"out/{stem}_report.json"),
    )


def resolve_seed(flag_seed: Optional[int], cfg: ConfigFile) -> int:
    if flag_seed is not None:
        return flag_seed
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get("CIPHERLOOP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"CIPHERLOOP_SEED must be an integer, got {env!r}") from exc
    return 0


def apply_overrides(cfg: ConfigFile, args: argparse.Namespace) -> ConfigFile:
    updates = {}
    for field in ("scheme", "backend", "q", "horizon"):
        value = getattr(args, field, None)
        if value is not None:
            updates[field] = value
    if updates.get("scheme") is not None and updates["scheme"] not in SCHEMES:
        raise ConfigError(f"--scheme must be one of {SCHEMES}")
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _matrix_json(mat) -> list:
    return [[fraction_to_str(Fraction(v)) for v in row] for row in mat]


def build_design(cfg: ConfigFile):
    spec = cfg.spec
    reg = solve_regulator(spec)
    artifacts = integerize(spec, reg, cfg.gamma, cfg.s, l0=cfg.l0)
    return spec, reg, artifacts


def _initial_vectors(cfg: ConfigFile):
    spec = cfg.spec
    x_p0 = cfg.x_p0 if cfg.x_p0 is not None else default_initial_state(spec)
    v_p0 = cfg.v_p0 if cfg.v_p0 is not None else default_initial_reference(spec)
    xhat0 = cfg.xhat0 if cfg.xhat0 is not None else [0] * spec.n
    vhat0 = cfg.vhat0 if cfg.vhat0 is not None else [0] * spec.v
    return x_p0, v_p0, xhat0, vhat0


def make_he_params(cfg: ConfigFile, seed: int, bits: int,
                   keys_path: Optional[str] = None) -> he.HEParams:
    if keys_path is not None:
        return he.import_params(Path(keys_path).read_text())
    if cfg.backend == "mock":
        if cfg.q is None:
            raise ConfigError("mock backend needs sim.q (or --q)")
        return he.keygen("mock", q=cfg.q, seed=seed)
    return he.keygen("paillier", bits=bits, seed=seed)


def run_from_config(cfg: ConfigFile, seed: int, bits: int = 256,
                    keys_path: Optional[str] = None) -> tuple[RunResult, he.HEParams]:
    spec, reg, artifacts = build_design(cfg)
    params = make_he_params(cfg, seed, bits, keys_path)
    x_p0, v_p0, xhat0, vhat0 = _initial_vectors(cfg)
    loop = LoopConfig(
        spec=spec, reg=reg, artifacts=artifacts, scheme=cfg.scheme,
        he_params=params, horizon=cfg.horizon,
        x_p0=x_p0, v_p0=v_p0, xhat0=xhat0, vhat0=vhat0,
    )
    return run_closed_loop(loop), params


def render_trace(records: Sequence[TraceRecord]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for r in records:
        lines.append(",".join([
            str(r.k),
            fraction_to_str(r.y_err_inf),
            "true" if r.restoration_exact else "false",
            fraction_to_str(r.figure4_norm),
            fraction_to_str(r.internal_state_inf),
            fraction_to_str(r.l_k),
            "true" if r.overflow_detected else "false",
            repr(float(r.y_err_inf)),
            repr(float(r.figure4_norm)),
            repr(float(r.internal_state_inf)),
        ]))
    return "\n".join(lines) + "\n"


def write_trace(records: Sequence[TraceRecord], path) -> str:
    """Write the CSV trace and return the exact text written."""
    text = render_trace(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return text


def _cmd_design(cfg: ConfigFile, args) -> int:
    spec, reg, artifacts = build_design(cfg)
    x_p0, v_p0, xhat0, vhat0 = _initial_vectors(cfg)
    bound = compute_modulus_bound(
        spec, reg, artifacts, horizon=cfg.horizon,
        x_p0=x_p0, v_p0=v_p0, xhat0=xhat0, vhat0=vhat0,
    )
    artifacts = artifacts.with_bound(bound)
    report = validate_design(spec, reg, artifacts, xhat0=xhat0, vhat0=vhat0)

    body = {
        "version": __version__,
        "gamma": fraction_to_str(artifacts.gamma),
        "s": fraction_to_str(artifacts.s),
        "l0": fraction_to_str(artifacts.zoom.l0),
        "regulator": {
            "state_map": _matrix_json(reg.state_map),
            "input_map": _matrix_json(reg.input_map),
            "unique": reg.unique,
        },
        "integer_matrices": {
            name: [[int(v) for v in row] for row in mat]
            for name, mat in artifacts.integer_matrix_table().items()
        },
        "innov_gain": artifacts.innov_gain,
        "cayley": {
            "coeffs": list(artifacts.cayley.coeffs),
            "coeffs_ext": list(artifacts.cayley.coeffs_ext),
        },
        "stability": {
            "rho_fb": artifacts.rho_fb,
            "rho_obs": artifacts.rho_obs,
            "waiver": artifacts.stability_waiver,
        },
        "bound": bound.to_dict(),
        "validation": report.to_dict(),
    }
    out = Path(args.out if args.out else cfg.report_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    print(f"design report written to {out}")
    print(f"bound: method={bound.method} q_min={bound.q_min} "
          f"c_pe={float(bound.c_pe):.6g}")
    for row in report.rows:
        if row["status"] != "pass":
            print(f"  [{row['status']}] {row['check']}: {row['detail']}")
    if not report.ok:
        print("design validation failed", file=sys.stderr)
        return EXIT_DESIGN
    return EXIT_OK


def _cmd_simulate(cfg: ConfigFile, args) -> int:
    seed = resolve_seed(args.seed, cfg)
    result, params = run_from_config(cfg, seed, bits=args.bits)
    trace_path = Path(args.trace if args.trace else cfg.trace_path)
    text = write_trace(result.records, trace_path)

    figures: list[str] = []
    if not args.no_figures:
        from .plots import render_figures  # deferred: pulls in matplotlib

        paths = render_figures(result.records, trace_path.parent,
                               trace_path.stem, q=result.q)
        figures = [str(p) for p in paths]

    if args.export_keys:
        key_path = Path(args.export_keys)
        key_path.parent.mkdir(parents=True, exist_ok=True)
        key_path.write_text(he.export_params(params) + "\n")

    summary = result.summary_dict()
    summary["version"] = __version__
    summary["trace_path"] = str(trace_path)
    summary["trace_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    summary["figures"] = figures
    summary_path = Path(args.summary) if args.summary else trace_path.with_suffix(".summary.json")
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    print(f"trace written to {trace_path} ({len(result.records)} rows)")
    print(f"summary written to {summary_path}")
    for fig in figures:
        print(f"figure written to {fig}")
    print(f"final tracking error: {float(result.final_tracking_error):.6g}")
    if result.first_restoration_failure is not None:
        print(f"restoration first failed at step {result.first_restoration_failure}")
    return EXIT_OK


def _cmd_verify(cfg: ConfigFile, args) -> int:
    trace_path = Path(args.trace if args.trace else cfg.trace_path)
    try:
        recorded = trace_path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {trace_path}: {exc}") from exc

    seed = resolve_seed(args.seed, cfg)
    result, _ = run_from_config(cfg, seed, bits=args.bits, keys_path=args.keys)
    fresh = render_trace(result.records)
    if fresh == recorded:
        print(f"verify: {trace_path} matches a fresh run "
              f"({len(result.records)} rows, oracle invariants held)")
        return EXIT_OK

    recorded_lines = recorded.splitlines()
    fresh_lines = fresh.splitlines()
    for i, (a, b) in enumerate(zip(recorded_lines, fresh_lines)):
        if a != b:
            print(f"verify: mismatch at line {i + 1}:", file=sys.stderr)
            print(f"  recorded: {a}", file=sys.stderr)
            print(f"  fresh:    {b}", file=sys.stderr)
            return EXIT_VERIFY
    print(f"verify: length mismatch ({len(recorded_lines)} recorded vs "
          f"{len(fresh_lines)} fresh lines)", file=sys.stderr)
    return EXIT_VERIFY


def execute_command(command: str, cfg: ConfigFile, args) -> int:
    try:
        if command == "design":
            return _cmd_design(cfg, args)
        if command == "simulate":
            return _cmd_simulate(cfg, args)
        if command == "verify":
            return _cmd_verify(cfg, args)
        raise ConfigError(f"unknown command {command!r}")
    except (DesignError, NonIntegerInitialStateError) as exc:
        print(f"design failure: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    except he.HEError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LoopError as exc:
        # Invariant violations are internal bugs and propagate; anything else
        # from loop setup is a configuration problem.
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cipherloop",
        description="Encrypted tracking-control design, simulation, and trace verification.",
    )
    parser.add_argument("--version", action="version", version=f"cipherloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to a JSON run configuration")
        p.add_argument("--scheme", choices=SCHEMES, default=None,
                       help="override sim.scheme")
        p.add_argument("--backend", choices=("mock", "paillier"), default=None,
                       help="override sim.backend")
        p.add_argument("--q", type=int, default=None, help="override sim.q (mock modulus)")
        p.add_argument("--horizon", type=int, default=None, help="override sim.horizon")
        p.add_argument("--seed", type=int, default=None,
                       help="override the RNG seed (else sim.seed, else CIPHERLOOP_SEED)")
        p.add_argument("--bits", type=int, default=256,
                       help="paillier modulus size in bits (default 256)")

    p_design = sub.add_parser("design", help="solve the offline design and write a report")
    common(p_design)
    p_design.add_argument("--out", default=None, help="report path (default: output.report_path)")

    p_sim = sub.add_parser("simulate", help="run the encrypted loop and write trace/summary/figures")
    common(p_sim)
    p_sim.add_argument("--trace", default=None, help="trace CSV path (default: output.trace_path)")
    p_sim.add_argument("--summary", default=None, help="summary JSON path")
    p_sim.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p_sim.add_argument("--export-keys", default=None, help="write key material (JSON) here")

    p_verify = sub.add_parser("verify", help="replay a recorded trace and compare")
    common(p_verify)
    p_verify.add_argument("--trace", default=None, help="recorded trace path")
    p_verify.add_argument("--keys", default=None, help="replay with exported key material")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        cfg = apply_overrides(cfg, args)
        if args.horizon is not None and args.horizon < 0:
            raise ConfigError("--horizon must be >= 0")
        return execute_command(args.command, cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
