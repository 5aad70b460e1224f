"""Command-line front end.

Exit codes: 0 feasible / verified, 2 infeasible / rejected, 3 unknown
(solver stalled), 1 malformed input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import lyap, multi, roa, sim
from .poly import Polynomial, SwitchedSystem, dumps
from .sosprog import (
    FORMULATIONS,
    GramCertificate,
    Infeasible,
    MatrixSosCertificate,
    check_sos,
    check_sosconvex,
    sosconvex_polynomial,
)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_UNKNOWN = 0, 1, 2, 3


class InputError(Exception):
    pass


def _read_json(path: str):
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text()
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_system(path: str) -> SwitchedSystem:
    data = _read_json(path)
    try:
        return SwitchedSystem.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a system file ({exc})") from exc


def _load_poly(path: str) -> Polynomial:
    data = _read_json(path)
    if isinstance(data, dict) and "poly" in data and "terms" not in data:
        data = data["poly"]
    try:
        return Polynomial.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a polynomial file ({exc})") from exc


def _emit(args, summary: dict, certificate: dict | None = None) -> None:
    if certificate is not None and args.out:
        Path(args.out).write_text(dumps(certificate))
        summary["certificate_file"] = args.out
    sys.stdout.write(dumps(summary))


def _verdict_code(res) -> tuple[str, int]:
    if getattr(res, "feasible", False):
        return "feasible", EXIT_OK
    if isinstance(res, Infeasible):
        return "infeasible", EXIT_INFEASIBLE
    return "unknown", EXIT_UNKNOWN


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SWITCHCERT_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError as exc:
        raise InputError(f"SWITCHCERT_THREADS={env!r} is not an integer") from exc


def _linear_matrices(system: SwitchedSystem) -> list[np.ndarray]:
    if not system.is_linear:
        raise InputError("this command needs linear modes")
    return system.matrices()


def _even(value: str) -> int:
    d = int(value)
    if d < 0 or d % 2:
        raise argparse.ArgumentTypeError(f"{value} is not an even nonnegative integer")
    return d


# subcommands ---------------------------------------------------------------


def cmd_check_sos(args) -> int:
    p = _load_poly(args.poly)
    res = check_sos(p)
    verdict, code = _verdict_code(res)
    cert = None
    if res.feasible:
        cert = {"kind": "sos", "poly": p.to_json(), "certificate": res.to_json()}
    _emit(args, {"command": "check-sos", "verdict": verdict}, cert)
    return code


def cmd_check_sosconvex(args) -> int:
    p = _load_poly(args.poly)
    formulation = {"lambda": "lambda_half"}.get(args.formulation, args.formulation)
    res = check_sosconvex(p, formulation)
    verdict, code = _verdict_code(res)
    cert = None
    if res.feasible:
        cert = {"kind": "sosconvex", "formulation": formulation, "poly": p.to_json(),
                "matrix": isinstance(res, MatrixSosCertificate), "certificate": res.to_json()}
    _emit(args, {"command": "check-sosconvex", "formulation": formulation, "verdict": verdict}, cert)
    return code


def cmd_synth(args) -> int:
    mats = _linear_matrices(_load_system(args.system))
    res = lyap.synth_common_lyapunov(mats, args.degree, args.convex, args.margin)
    verdict, code = _verdict_code(res)
    summary = {"command": "synth", "degree": args.degree, "convex": args.convex, "verdict": verdict}
    if res.feasible:
        summary["V"] = res.V.to_string()
    _emit(args, summary, res.to_json() if res.feasible else None)
    return code


def cmd_jsr(args) -> int:
    mats = _linear_matrices(_load_system(args.system))
    try:
        bound = lyap.jsr_upper_bound(mats, args.degree, args.convex, args.tol, args.margin)
    except RuntimeError as exc:
        _emit(args, {"command": "jsr", "verdict": "unknown", "reason": str(exc)})
        return EXIT_UNKNOWN
    summary = {"command": "jsr", "degree": args.degree, "convex": args.convex, "verdict": "feasible",
               "upper_bound": bound.upper, "lower_probe": bound.lower_probe, "lower_verdict": bound.lower_verdict}
    cert = bound.certificate.to_json()
    cert["gamma"] = bound.upper
    _emit(args, summary, cert)
    return EXIT_OK


def cmd_roa(args) -> int:
    system = _load_system(args.system)
    if args.deg_mult % 2:
        raise InputError("--deg-mult must be even")
    r = args.deg_mult // 2
    try:
        if args.v:
            V = _load_poly(args.v)
            if args.beta is not None:
                res = roa.roa_certify(system, V, args.beta, r, args.pruned, args.combine,
                                      method=args.method or "auto")
                verdict, code = _verdict_code(res)
                if not res.feasible:
                    _emit(args, {"command": "roa", "verdict": verdict, "beta": args.beta})
                    return code
                cert, beta = res, args.beta
            else:
                search = roa.roa_maximize_beta(system, V, r, args.tol, args.pruned, args.combine, cap=args.beta_max,
                                               method=args.method)
                cert, beta = search.certificate, search.beta
        else:
            analysis = roa.analyze(system, args.deg_v, r, args.deg_v_max, args.tol, args.combine, args.pruned,
                                   method=args.method, cap=args.beta_max)
            cert, beta, V = analysis.certificate, analysis.beta, analysis.V
    except roa.LinearizationNotCertifiedStable as exc:
        _emit(args, {"command": "roa", "verdict": "unknown", "reason": str(exc)})
        return EXIT_UNKNOWN
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    except roa.NoFeasibleBeta as exc:
        _emit(args, {"command": "roa", "verdict": "infeasible", "reason": str(exc)})
        return EXIT_INFEASIBLE
    if args.levelset:
        roa.write_levelset_csv(args.levelset, cert.V, beta)
    _emit(args, {"command": "roa", "verdict": "feasible", "beta": beta, "V": cert.V.to_string(),
                 "combine": cert.combine, "method": cert.method, "residual": cert.residual}, cert.to_json())
    return EXIT_OK


def cmd_multi(args) -> int:
    mats = _linear_matrices(_load_system(args.system))
    assignment = None
    if args.assignment not in (None, "enumerate"):
        try:
            assignment = multi.Assignment.from_json(_read_json(args.assignment))
            assignment.validate(len(mats), args.k)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad assignment: {exc}") from exc
    try:
        res = multi.synth_multi(mats, args.k, args.degree, assignment, args.margin, args.force, _threads(args))
    except multi.EnumerationTooLarge as exc:
        raise InputError(str(exc)) from exc
    except multi.EnumerationExhausted as exc:
        _emit(args, {"command": "multi", "verdict": "infeasible", "reason": str(exc)})
        return EXIT_INFEASIBLE
    verdict, code = _verdict_code(res)
    summary = {"command": "multi", "K": args.k, "degree": args.degree, "verdict": verdict}
    if res.feasible:
        summary["assignment"] = res.assignment.to_json()
    _emit(args, summary, res.to_json() if res.feasible else None)
    return code


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise InputError(f"cannot parse numbers from {text!r}") from exc


def cmd_simulate(args) -> int:
    system = _load_system(args.system)
    x0 = _parse_floats(" ".join(args.x0))
    V = _load_poly(args.monitor) if args.monitor else None
    weights = _parse_floats(args.weights) if args.weights else None
    try:
        policy = sim.make_policy(args.policy, system, args.seed, V, weights)
        traj = sim.simulate(system, x0, policy, max_steps=args.steps)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    summary = {"command": "simulate", "verdict": traj.verdict, "steps": traj.steps,
               "final": [float(v) for v in traj.final], "policy": traj.policy}
    if V is not None:
        rep = sim.monitor_decrease(traj, V)
        summary["strict_decrease"] = rep.strict
        summary["first_violation"] = rep.first_violation
    if args.out:
        traj.to_csv(args.out, V)
        summary["trajectory_file"] = args.out
    sys.stdout.write(dumps(summary))
    return EXIT_OK


# verification --------------------------------------------------------------


def verify_document(doc: dict, system: SwitchedSystem | None = None) -> tuple[bool, str]:
    """Re-check a certificate file; no SDP is solved."""
    kind = doc.get("kind")
    if kind == "sos":
        p = Polynomial.from_json(doc["poly"])
        ok = GramCertificate.from_json(doc["certificate"]).verify(p)
        return ok, "gram identity"
    if kind == "sosconvex":
        p = Polynomial.from_json(doc["poly"])
        formulation = doc.get("formulation", "hessian")
        if doc.get("matrix", formulation == "hessian"):
            return MatrixSosCertificate.from_json(doc["certificate"]).verify(p.to_float().hessian()), formulation
        g, _ = sosconvex_polynomial(p, formulation)
        return GramCertificate.from_json(doc["certificate"]).verify(g), formulation
    if kind == "lyapunov":
        cert = lyap.LyapunovCertificate.from_json(doc)
        if system is not None and not _same_matrices(system, cert.matrices, doc.get("gamma")):
            return False, "system does not match the certified matrices"
        return cert.verify(), "lyapunov"
    if kind == "multi":
        cert = multi.MultiLyapunovCertificate.from_json(doc)
        if system is not None and not _same_matrices(system, cert.matrices, None):
            return False, "system does not match the certified matrices"
        return cert.verify(), "multi"
    if kind == "roa":
        cert = roa.RoaCertificate.from_json(doc)
        if system is not None and system.to_json(as_matrices=False)["modes"] != cert.system.to_json(
                as_matrices=False)["modes"]:
            return False, "system does not match the certified system"
        return cert.verify(), "roa"
    raise InputError(f"unknown certificate kind {kind!r}")


def _same_matrices(system: SwitchedSystem, mats, gamma) -> bool:
    if not system.is_linear:
        return False
    ref = system.matrices()
    scale = float(gamma) if gamma else 1.0
    return len(ref) == len(mats) and all(
        np.allclose(np.asarray(A) * scale, B, rtol=1e-12, atol=1e-12) for A, B in zip(mats, ref))


def cmd_verify(args) -> int:
    doc = _read_json(args.certificate)
    system = _load_system(args.system) if args.system else None
    try:
        ok, what = verify_document(doc, system)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed certificate: {exc}") from exc
    sys.stdout.write(dumps({"command": "verify", "kind": doc.get("kind"), "verified": bool(ok), "check": what}))
    return EXIT_OK if ok else EXIT_INFEASIBLE


# parser --------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="switchcert", description=__doc__.splitlines()[0])
    ap.add_argument("--json-errors", action="store_true", help="errors as JSON on stderr")
    ap.add_argument("--threads", type=int, default=None, help="worker cap (default: $SWITCHCERT_THREADS or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    p = add("check-sos", cmd_check_sos, "search a Gram certificate")
    p.add_argument("poly")
    p.add_argument("--out")

    p = add("check-sosconvex", cmd_check_sosconvex, "sos-convexity test")
    p.add_argument("poly")
    p.add_argument("--formulation", choices=list(FORMULATIONS) + ["lambda"], default="hessian")
    p.add_argument("--out")

    for name, func, help_ in (("synth", cmd_synth, "common Lyapunov function"),
                              ("jsr", cmd_jsr, "JSR upper bound by bisection")):
        p = add(name, func, help_)
        p.add_argument("system")
        p.add_argument("--degree", type=_even, required=True)
        p.add_argument("--convex", action="store_true")
        p.add_argument("--margin", type=float, default=lyap.DEFAULT_MARGIN)
        p.add_argument("--out")
        if name == "jsr":
            p.add_argument("--tol", type=float, default=1e-3)

    p = add("roa", cmd_roa, "region-of-attraction certificate")
    p.add_argument("system")
    p.add_argument("--deg-v", type=_even, default=4)
    p.add_argument("--deg-v-max", type=_even, default=None)
    p.add_argument("--deg-mult", type=_even, default=4)
    p.add_argument("--v", help="fixed V (polynomial JSON); skips the Lyapunov step")
    p.add_argument("--beta", type=float, help="certify this beta only")
    p.add_argument("--beta-max", type=float, default=2.0 ** 16)
    p.add_argument("--tol", type=float, default=1e-2, help="relative beta gap")
    p.add_argument("--combine", choices=roa.COMBINE_MODES, default="per_mode")
    p.add_argument("--pruned", action="store_true")
    p.add_argument("--method", choices=roa.METHODS, default=None,
                   help="certificate search (default: sprocedure for per_mode, stengle for joint)")
    p.add_argument("--levelset")
    p.add_argument("--out")

    p = add("multi", cmd_multi, "multiple Lyapunov functions")
    p.add_argument("system")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--degree", type=_even, required=True)
    p.add_argument("--assignment", default="enumerate", help="JSON table file or 'enumerate'")
    p.add_argument("--margin", type=float, default=lyap.DEFAULT_MARGIN)
    p.add_argument("--force", action="store_true", help="allow more than 4096 assignments")
    p.add_argument("--out")

    p = add("simulate", cmd_simulate, "simulate a trajectory")
    p.add_argument("system")
    p.add_argument("--x0", nargs="+", required=True)
    p.add_argument("--policy", choices=["fixed", "hull", "hull2", "vertex", "greedy"], default="hull")
    p.add_argument("--weights", help="weights for the fixed policy, e.g. 0.5,0.5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=sim.MAX_STEPS)
    p.add_argument("--monitor", help="V (polynomial JSON) to track along the trajectory")
    p.add_argument("--out", help="trajectory CSV")

    p = add("verify", cmd_verify, "re-verify a certificate without solving")
    p.add_argument("certificate")
    p.add_argument("--system")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    json_errors = "--json-errors" in argv
    try:
        args = ap.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return args.func(args)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    except InputError as exc:
        if json_errors:
            sys.stderr.write(json.dumps({"error": "input", "message": str(exc)}) + "\n")
        else:
            sys.stderr.write(f"switchcert: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
