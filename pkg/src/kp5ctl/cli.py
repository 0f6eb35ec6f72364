"""Batch experiment runner: ``kp5ctl <subcommand> --config cfg.json --out DIR``.

Every artifact is JSON (sorted keys, no timestamps) or CSV (shortest
round-trip floats) and embeds the resolved config, the seed and a format
version, so identical ``(config, seed)`` pairs give byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .control import CGStagnationError, ContractionError, HUMProblem, solve_linear_hum, solve_nonlinear_hum
from .linear_flow import bona_smith_sweep, smoothing_ratio
from .nonlinear_flow import BlowupError, NonlinearRun, SmallDataError, solve_global
from .norms import NormKind, norm
from .operators import DampingProfile, ModelParams
from .spectral import (GridSpec, SpectralField, hermitian_symmetrize, random_field,
                       write_trajectory_csv)
from .stability import decay_rate, eps_uniformity_sweep, gramian_scan
from .ucp import resonance_groups, restriction_scan, ucp_flow_check

__all__ = ["FORMAT_VERSION", "CONFIG_SCHEMA", "DEFAULTS", "resolve_config", "main"]

FORMAT_VERSION = 1
PRNG = "PCG64"

log = logging.getLogger("kp5ctl")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_field_spec = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["zero", "random", "mode"]},
        "kmax": {"type": "integer", "minimum": 1},
        "eta_max": {"type": "number", "minimum": 0},
        "decay": _num,
        "norm": {"type": "number", "minimum": 0},
        "xs_norm": {"type": "number", "minimum": 0},
        "k": {"type": "integer"},
        "j": {"type": "integer"},
        "amplitude": _num,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "beta": {"type": "number", "not": {"const": 0}},
        "gamma": {"enum": [-1, 1]},
        "eps": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "s": _num,
        "K": {"type": "integer", "minimum": 1},
        "M": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "Ly": _pos,
        "dt": _pos,
        "T": _pos,
        "scheme": {"enum": ["etdrk2", "etdrk4"]},
        "store_every": {"type": "integer", "minimum": 1},
        "feedback_on": {"type": "boolean"},
        "nonlinearity_on": {"type": "boolean"},
        "g_spec": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"x0": _num, "w": {"type": "number", "exclusiveMinimum": 0,
                                             "maximum": math.pi}},
        },
        "u0_spec": _field_spec,
        "u1_spec": _field_spec,
        "gramian_method": {"enum": ["exact", "lyapunov", "trapezoid"]},
        "eps_list": {"type": "array", "minItems": 1,
                     "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
        "sigma_list": {"type": "array", "items": _num},
        "T_list": {"type": "array", "minItems": 1, "items": _pos},
        "eta2": {"type": ["number", "string"]},
        "resonance_K": {"type": "integer", "minimum": 1},
        "restriction_size": {"type": "integer", "minimum": 1},
        "norm_s_list": {"type": "array", "items": _num},
        "cg_tol": _pos,
        "only": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 15}},
    },
}

DEFAULTS: dict[str, Any] = {
    "beta": 1.0,
    "gamma": 1,
    "eps": 0.0,
    "s": 2.5,
    "K": 32,
    "M": 128,
    "Ly": 32.0 * math.pi,
    "dt": 1.0 / 256,
    "T": 1.0,
    "scheme": "etdrk2",
    "store_every": 16,
    "feedback_on": True,
    "nonlinearity_on": False,
    "g_spec": {"x0": math.pi, "w": math.pi / 2},
    "u0_spec": {"kind": "random", "kmax": 4, "xs_norm": 1e-2},
    "u1_spec": {"kind": "zero"},
    "gramian_method": "exact",
    "eps_list": [1e-1, 1e-2, 1e-3, 1e-4],
    "sigma_list": [1.0, 2.5],
    "T_list": [0.25, 0.5, 1.0, 2.0],
    "eta2": "62",
    "resonance_K": 8,
    "restriction_size": 5,
    "norm_s_list": [0.0, 2.5, 5.0],
    "cg_tol": 1e-10,
    "only": [],
}


class ConfigError(ValueError):
    """Config file missing, malformed or rejected by the schema."""


def resolve_config(user: dict) -> dict:
    """Validate ``user`` against :data:`CONFIG_SCHEMA` and fill defaults."""
    try:
        jsonschema.validate(user, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config error at {path}: {exc.message}") from None
    cfg = json.loads(json.dumps(DEFAULTS))
    for key, val in user.items():
        if key in ("g_spec",) and isinstance(val, dict):
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = val
    return cfg


def _load_config(path: str | None) -> dict:
    if path is None:
        return resolve_config({})
    try:
        user = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    return resolve_config(user)


def _jsonable(x):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return {"re": _jsonable(x.real), "im": _jsonable(x.imag)}
    return x if x is None or isinstance(x, str) else str(x)


class Context:
    """Resolved config plus the output directory and seeded generator."""

    def __init__(self, command: str, cfg: dict, out: Path, seed: int):
        self.command, self.cfg, self.out, self.seed = command, cfg, out, seed
        self.rng = np.random.Generator(np.random.PCG64(seed))

    @property
    def params(self) -> ModelParams:
        c = self.cfg
        return ModelParams(c["beta"], c["gamma"], c["eps"], c["s"])

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.cfg["K"], self.cfg["M"], self.cfg["Ly"])

    @property
    def damping(self) -> DampingProfile:
        gs = self.cfg["g_spec"]
        return DampingProfile.raised_cosine(self.cfg["K"], gs["x0"], gs["w"])

    def field(self, key: str) -> SpectralField:
        spec, grid = self.cfg[key], self.grid
        if spec["kind"] == "zero":
            return SpectralField.zeros(grid)
        if spec["kind"] == "mode":
            k, j, a = spec.get("k", 1), spec.get("j", 0), spec.get("amplitude", 1.0)
            if k == 0:
                raise ValueError("mode data needs k != 0")
            c = SpectralField.from_modes(grid, {(k, j): a}, real=False).coeffs
            return SpectralField(grid, hermitian_symmetrize(c), True)
        f = random_field(grid, self.rng, kmax=spec.get("kmax"), eta_max=spec.get("eta_max"),
                         decay=spec.get("decay", 0.0), norm=spec.get("norm"))
        if "xs_norm" in spec:
            n = norm(NormKind("Xs", self.cfg["s"]), f)
            f = f * (spec["xs_norm"] / n) if n > 0 else f
        return f

    def write_json(self, name: str, result: Any) -> Path:
        doc = {"format_version": FORMAT_VERSION, "subcommand": self.command, "seed": self.seed,
               "prng": PRNG, "config": self.cfg, "result": result}
        path = self.out / name
        path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n")
        log.info("wrote %s", path)
        return path

    def comments(self) -> list[str]:
        return [f"format_version={FORMAT_VERSION}", f"subcommand={self.command}", f"seed={self.seed}",
                f"prng={PRNG}", "config=" + json.dumps(_jsonable(self.cfg), sort_keys=True)]


def cmd_simulate(ctx: Context) -> int:
    cfg = ctx.cfg
    u0 = ctx.field("u0_spec")
    g = ctx.damping if cfg["feedback_on"] else None
    run = solve_global(NonlinearRun(ctx.params, g, u0, cfg["T"], cfg["dt"], cfg["scheme"],
                                    cfg["nonlinearity_on"], cfg["store_every"]))
    write_trajectory_csv(run.snapshots, ctx.out / "trajectory.csv", ctx.comments())
    ctx.write_json("simulate.json", {**run.report(), "times": run.times[::cfg["store_every"]],
                                     "xs_norm": run.xs_norms[::cfg["store_every"]],
                                     "l2_norm": run.l2_norms[::cfg["store_every"]]})
    return 0


def cmd_decay(ctx: Context) -> int:
    rep = decay_rate(ctx.params, ctx.damping, ctx.grid, ctx.rng)
    ctx.write_json("decay.json", {**rep.to_dict(), "slowest_eta": rep.slowest_eta})
    return 0


def cmd_gramian(ctx: Context) -> int:
    cfg = ctx.cfg
    scan = gramian_scan(ctx.params, ctx.damping, ctx.grid, cfg["T"], cfg["gramian_method"], cfg["dt"])
    ctx.write_json("gramian.json", scan.to_dict())
    return 0


def cmd_ucp(ctx: Context) -> int:
    cfg = ctx.cfg
    g = ctx.damping
    eta2 = cfg["eta2"]
    exact = isinstance(eta2, str)
    table = resonance_groups(ctx.params, None if exact else math.sqrt(eta2), cfg["resonance_K"],
                             eta2=eta2 if exact else None, exact=exact)
    scan = restriction_scan(cfg["K"], cfg["restriction_size"], g.support[0])
    flows = [ucp_flow_check(ctx.params, g, T, ctx.grid).to_dict() for T in cfg["T_list"]]
    ctx.write_json("ucp.json", {"resonance": table.to_dict(),
                                "resonant_groups": [list(gr.modes) for gr in table.nontrivial()],
                                "restriction": scan.to_dict(), "flow": flows})
    return 0


def cmd_hum(ctx: Context) -> int:
    cfg = ctx.cfg
    prob = HUMProblem(ctx.params, ctx.damping, ctx.field("u0_spec"), ctx.field("u1_spec"),
                      cfg["T"], cfg["s"], cfg["cg_tol"], nonlinear=cfg["nonlinearity_on"], dt=cfg["dt"])
    res = solve_nonlinear_hum(prob) if prob.nonlinear else solve_linear_hum(prob)
    write_trajectory_csv(res.q, ctx.out / "control.csv", ctx.comments())
    ctx.write_json("hum.json", res.to_dict())
    return 0


def cmd_sweep_eps(ctx: Context) -> int:
    cfg = ctx.cfg
    eps = cfg["eps_list"] if cfg["eps_list"][0] == 0 else [0.0] + list(cfg["eps_list"])
    sw = eps_uniformity_sweep(ctx.params, ctx.damping, ctx.grid, eps, cfg["T"])
    ctx.write_json("sweep_eps.json", {"rows": sw.rows(), "C_T_ratio": sw.C_T_ratio,
                                      "lambda_ratio": sw.lam_ratio,
                                      "lambda_nondecreasing": sw.lam_nondecreasing,
                                      "uniform_2x": sw.uniform(2.0)})
    return 0


def cmd_bona_smith(ctx: Context) -> int:
    cfg = ctx.cfg
    v0 = ctx.field("u0_spec")
    g = ctx.damping if cfg["feedback_on"] else None
    eps = [e for e in cfg["eps_list"] if e > 0]
    ratios = {repr(float(sg)): [smoothing_ratio(v0, e, sg, cfg["s"]) for e in eps]
              for sg in cfg["sigma_list"]}
    rep = bona_smith_sweep(ctx.params, g, v0, eps, cfg["T"], cfg["dt"])
    ctx.write_json("bona_smith.json", {"smoothing_ratios": ratios, "records": rep.records(),
                                       "monotone": rep.monotone, "rate_fit": rep.rate_fit})
    return 0


def cmd_norms(ctx: Context) -> int:
    f = ctx.field("u0_spec")
    rows = [{"tag": tag, "s": s, "value": norm(NormKind(tag, s), f)}
            for tag in ("Hs", "Hs_aniso", "Xs") for s in ctx.cfg["norm_s_list"]]
    ctx.write_json("norms.json", {"norms": rows, "mean_zero": f.is_mean_zero()})
    return 0


def cmd_acceptance(ctx: Context) -> int:
    from .acceptance import run_all

    results = run_all(ctx.seed, ctx.cfg["only"] or None)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    ctx.write_json("acceptance.json", {"passed": ok, "criteria": [r.to_dict() for r in results]})
    return 0 if ok else 1


COMMANDS: dict[str, Callable[[Context], int]] = {
    "simulate": cmd_simulate,
    "decay": cmd_decay,
    "gramian": cmd_gramian,
    "ucp": cmd_ucp,
    "hum": cmd_hum,
    "sweep-eps": cmd_sweep_eps,
    "bona-smith": cmd_bona_smith,
    "norms": cmd_norms,
    "acceptance": cmd_acceptance,
}

NUMERICAL_ERRORS = (BlowupError, SmallDataError, CGStagnationError, ContractionError,
                    np.linalg.LinAlgError, FloatingPointError, OverflowError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kp5ctl", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file (defaults are used when omitted)")
    p.add_argument("--out", help="output directory (env KP5CTL_OUT, default ./kp5ctl_out)")
    p.add_argument("--seed", type=int, default=0, help="64-bit seed for random fields")
    p.add_argument("--threads", type=int, help="BLAS thread cap (env KP5CTL_THREADS)")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def _error(out: Path, kind: str, exc: BaseException) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"format_version": FORMAT_VERSION, "error": kind, "type": type(exc).__name__,
           "message": str(exc)}
    (out / "error.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    out = Path(args.out or os.environ.get("KP5CTL_OUT") or "kp5ctl_out")
    threads = args.threads or (int(os.environ["KP5CTL_THREADS"]) if os.environ.get("KP5CTL_THREADS")
                               else None)
    if not 0 <= args.seed < 2**64:
        print("kp5ctl: seed must be a 64-bit unsigned integer", file=sys.stderr)
        return 2
    try:
        cfg = _load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(args.command, cfg, out, args.seed)
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        _error(out, "config", exc)
        print(f"kp5ctl: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        _error(out, "numerical", exc)
        print(f"kp5ctl: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        _error(out, "config", exc)
        print(f"kp5ctl: invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
