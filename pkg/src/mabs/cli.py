"""Command-line interface: ``mabs <subcommand> [options]``.

Exit status: 0 success, 2 invalid input, 3 capacity exceeded,
4 recovery or estimation failure. Errors are printed to stderr as a short
message followed by a JSON object ``{"error", "message", "exit_code"}``.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .constructions import (
    asb_limit_constants,
    asb_upper_bound,
    calibrate_asb,
    hyperrectangle_bound,
    hyperrectangle_perturbation,
    lemma_delta,
    omega_extend,
    omega_star_quadratic,
)
from .core import (
    SeparationParams,
    as_alphabet,
    asb,
    is_delta_separable,
    normalize_alphabet,
    wsb,
)
from .estimation import METHODS, estimate
from .exceptions import (
    CapacityError,
    DegenerateFitError,
    InfeasibleConfigError,
    MabsError,
    RecoveryError,
    SamplingError,
    ValidationError,
)
from .io import (
    SCHEMA_VERSION,
    dump_json,
    instance_to_dict,
    load_instance,
    read_matrix_csv,
    write_matrix_csv,
)
from .recovery import recover
from .simulation import GridPoint, SweepConfig, run_sweep, simulate_instance

EXIT_OK, EXIT_VALIDATION, EXIT_CAPACITY, EXIT_FAILURE = 0, 2, 3, 4

# config-file keys accepted per subcommand (flags override)
_KEYS = {
    "check": {"input", "out"},
    "construct": {"kind", "alphabet", "m", "M", "delta", "target", "eps", "input", "out"},
    "recover": {"input", "alphabet", "m", "delta", "lam", "epsilon", "out"},
    "estimate": {"input", "alphabet", "m", "delta", "lam", "method", "restarts",
                 "resolution", "seed", "out"},
    "simulate": {"alphabet", "m", "n", "M", "sigma", "delta", "lam", "seed", "out"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _alphabet_arg(text):
    try:
        return [float(v) for v in str(text).split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad alphabet {text!r}") from exc


def _build_parser():
    p = _Parser(prog="mabs", description="Finite-alphabet blind separation toolkit")
    p.add_argument("--version", action="version",
                   version=f"mabs {__version__} (schema {SCHEMA_VERSION})")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values; flags override it")
        sp.add_argument("--out", help="output path (stdout if omitted)")
        return sp

    sp = common(sub.add_parser("check", help="separability diagnostics for an instance"))
    sp.add_argument("--input", help="instance JSON")

    sp = common(sub.add_parser("construct", help="emit a constructed weight matrix"))
    sp.add_argument("--kind", choices=["quadratic", "extend", "calibrate", "perturb", "limits"])
    sp.add_argument("--alphabet", type=_alphabet_arg)
    sp.add_argument("--m", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--target", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--input", help="weights CSV (calibrate, perturb)")

    for name, help_ in (("recover", "recover sources and weights"),
                        ("estimate", "least squares estimate")):
        sp = common(sub.add_parser(name, help=help_))
        sp.add_argument("--input", help="observations CSV")
        sp.add_argument("--alphabet", type=_alphabet_arg)
        sp.add_argument("--m", type=int)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--lambda", dest="lam", type=float)
        if name == "recover":
            sp.add_argument("--epsilon", type=float)
        else:
            sp.add_argument("--method", choices=METHODS)
            sp.add_argument("--restarts", type=int)
            sp.add_argument("--resolution", type=float)
            sp.add_argument("--seed", type=int)

    sp = common(sub.add_parser("simulate", help="draw one random instance"))
    sp.add_argument("--alphabet", type=_alphabet_arg)
    for flag in ("m", "n", "M"):
        sp.add_argument(f"--{flag}", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--seed", type=int)

    sp = common(sub.add_parser("rates", help="run a Monte Carlo sweep from a config"))
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
    return p


def _merge_config(args):
    """Fill unset options from the ``--config`` JSON file."""
    if not getattr(args, "config", None):
        return {}
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if args.command == "rates":
        return cfg
    cfg = {("lam" if k == "lambda" else k): v for k, v in cfg.items()}
    unknown = set(cfg) - _KEYS[args.command]
    if unknown:
        raise ValidationError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    for key, val in cfg.items():
        if getattr(args, key, None) is None:
            if key == "alphabet" and isinstance(val, str):
                val = _alphabet_arg(val)
            setattr(args, key, val)
    return cfg


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + ("lambda" if n == "lam" else n) for n in missing)
        raise ValidationError(f"{args.command}: missing required option(s) {flags}")


def _alphabet(raw):
    """Normalized alphabet plus the affine map applied to observations."""
    alphabet = as_alphabet(raw, require_normalized=False)
    return alphabet if alphabet.normalized else normalize_alphabet(raw)


def _emit(payload, out):
    if out:
        with open(out, "w") as fh:
            dump_json(payload, fh)
    else:
        dump_json(payload, sys.stdout)


def _cmd_check(args):
    _require(args, "input")
    inst = load_instance(args.input)
    report = is_delta_separable(inst.weights, inst.labels, inst.params, inst.alphabet)
    payload = {
        "schema": SCHEMA_VERSION,
        "alphabet": list(inst.alphabet.values),
        "delta": inst.params.delta,
        "lambda": inst.params.lam,
        **report.to_dict(),
    }
    _emit(payload, args.out)
    return EXIT_OK


def _cmd_construct(args):
    _require(args, "kind")
    out = {"schema": SCHEMA_VERSION, "kind": args.kind}
    if args.kind == "limits":
        _require(args, "alphabet", "m")
        A = _alphabet(args.alphabet)
        lim = asb_limit_constants(A, args.m)
        out.update(c_lower=lim.c_lower, C_upper=lim.C_upper,
                   asb_upper_bound=asb_upper_bound(A, args.m),
                   box_bound=hyperrectangle_bound(A, args.m))
        _emit(out, args.out)
        return EXIT_OK
    _require(args, "alphabet")
    A = _alphabet(args.alphabet)
    if args.kind in ("quadratic", "extend"):
        _require(args, "m")
        delta = args.delta if args.delta is not None else lemma_delta(A, args.m)
        W = omega_star_quadratic(A, args.m, delta)
        if args.kind == "extend":
            _require(args, "M")
            W = omega_extend(W, args.M)
        out["delta"] = delta
    else:
        _require(args, "input")
        W0 = read_matrix_csv(args.input)
        if args.kind == "calibrate":
            _require(args, "target")
            W, eps = calibrate_asb(W0, A, args.target, return_epsilon=True)
            out.update(target=args.target, path_epsilon=eps)
        else:
            _require(args, "eps")
            E = np.full((W0.shape[0] - 1, W0.shape[1]), args.eps)
            W = hyperrectangle_perturbation(W0, E, A)
            out["eps"] = args.eps
    out.update(asb=asb(W, A), wsb=wsb(W, A), omega=W.tolist(), shape=list(W.shape))
    if args.out:
        write_matrix_csv(args.out, W)
        with open(args.out + ".json", "w") as fh:
            dump_json(out, fh)
    else:
        dump_json(out, sys.stdout)
    return EXIT_OK


def _observations(args):
    A = _alphabet(args.alphabet)
    Y = A.normalize_observations(read_matrix_csv(args.input))
    return A, Y


def _cmd_recover(args):
    _require(args, "input", "alphabet", "m", "delta")
    A, Y = _observations(args)
    lam = args.lam if args.lam is not None else 1.0 / Y.shape[1]
    params = SeparationParams(args.delta, lam, args.epsilon or 0.0)
    res = recover(Y, A, args.m, params)
    _emit({"schema": SCHEMA_VERSION, "alphabet": A.to_dict(), **res.to_dict()}, args.out)
    return EXIT_OK


def _cmd_estimate(args):
    _require(args, "input", "alphabet", "m", "delta")
    A, Y = _observations(args)
    lam = args.lam if args.lam is not None else 1.0 / Y.shape[1]
    params = SeparationParams(args.delta, lam)
    res = estimate(
        Y, A, args.m, params,
        method=args.method or "lloyd",
        restarts=args.restarts if args.restarts is not None else 10,
        seed=args.seed if args.seed is not None else 0,
        resolution=args.resolution or 1e-3,
    )
    _emit({"schema": SCHEMA_VERSION, "alphabet": A.to_dict(), **res.to_dict()}, args.out)
    return EXIT_OK


def _cmd_simulate(args):
    _require(args, "alphabet", "m", "n", "M", "delta")
    A = _alphabet(args.alphabet)
    lam = args.lam if args.lam is not None else 1.0 / args.M
    seed = args.seed if args.seed is not None else 0
    point = GridPoint(A.values, args.m, args.n, args.M, args.sigma or 0.0, args.delta, lam)
    inst = simulate_instance(point, seed)
    inst.seed = seed
    _emit(instance_to_dict(inst), args.out)
    return EXIT_OK


def _cmd_rates(args):
    cfg = _merge_config(args)
    if not cfg:
        raise ValidationError("rates: --config sweep.json is required")
    config = SweepConfig.from_dict(cfg)
    if args.out:
        config.out = args.out
    if args.seed is not None:
        config.master_seed = args.seed
    if not config.out:
        raise InfeasibleConfigError("rates: an output CSV path is required (--out)")
    records = run_sweep(config, workers=args.workers)
    summary = [
        {"n": r.point.n, "M": r.point.M, "sigma": r.point.sigma, "delta": r.point.delta,
         **{k: v["mean"] for k, v in r.aggregates.items()}}
        for r in records
    ]
    dump_json({"schema": SCHEMA_VERSION, "out": config.out, "points": summary}, sys.stdout)
    return EXIT_OK


_COMMANDS = {
    "check": _cmd_check,
    "construct": _cmd_construct,
    "recover": _cmd_recover,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "rates": _cmd_rates,
}


def _fail(exc, code):
    print(f"mabs: {exc}", file=sys.stderr)
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code},
                     sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            raise ValidationError("a subcommand is required")
        if args.command != "rates":
            _merge_config(args)
        return _COMMANDS[args.command](args)
    except CapacityError as exc:
        return _fail(exc, EXIT_CAPACITY)
    except (RecoveryError, DegenerateFitError, SamplingError) as exc:
        return _fail(exc, EXIT_FAILURE)
    except (ValidationError, OSError) as exc:
        return _fail(exc, EXIT_VALIDATION)
    except MabsError as exc:
        return _fail(exc, EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
