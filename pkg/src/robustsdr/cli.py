"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 infeasible instance,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .core import ProblemInstance
from .duality import verify_proposition1
from .formulations import RobustDesign, SolveError, build_wsp_sdr, solve_wsp_sdr
from .harness import WORKERS_ENV, SweepConfig, generate_instance, run_sweep, write_sweep
from .oracle import BeamformerSet, extract_beamformers, worst_case_sinr
from .sdp_solver import Status, dump_program

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_instance(path) -> ProblemInstance:
    d = _load_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected a JSON object")
    try:
        return ProblemInstance.from_dict(d)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _cmat(M):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.atleast_2d(M)]


def _from_pairs(x, what):
    try:
        a = np.asarray(x, dtype=float)
        if a.shape[-1] != 2:
            raise ValueError
    except (TypeError, ValueError):
        raise InputError(f"field '{what}': expected nested lists of [re, im] pairs") from None
    return a[..., 0] + 1j * a[..., 1]


def design_to_dict(design: RobustDesign, w: BeamformerSet | None = None, extra=None) -> dict:
    out = {
        "nt": int(design.W[0].shape[0]),
        "k": len(design.W),
        "power": design.objective,
        "lambda": [float(v) for v in design.lam],
        "W": [_cmat(W) for W in design.W],
    }
    if w is not None:
        out["w"] = _cmat(w.w)
    if extra:
        out.update(extra)
    return out


def load_beamformers(path, inst: ProblemInstance) -> tuple[BeamformerSet, str]:
    d = _load_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected a JSON object")
    if "w" in d:
        w = _from_pairs(d["w"], "w")
        if w.shape != (inst.k, inst.nt):
            raise InputError(f"{path}: field 'w': shape {w.shape}, expected ({inst.k}, {inst.nt})")
        return BeamformerSet(w), "w"
    if "W" in d:
        W = _from_pairs(d["W"], "W")
        if W.shape != (inst.k, inst.nt, inst.nt):
            raise InputError(f"{path}: field 'W': shape {W.shape}, "
                             f"expected ({inst.k}, {inst.nt}, {inst.nt})")
        lam = np.asarray(d.get("lambda", np.zeros(inst.k)), dtype=float)
        return extract_beamformers(RobustDesign(list(W), lam), inst).beamformers, "W"
    raise InputError(f"{path}: missing field 'w' or 'W'")


def _status_exit(status: str) -> int:
    if status == Status.OPTIMAL.value:
        return EXIT_OK
    if status in (Status.PRIMAL_INFEASIBLE.value, Status.DUAL_INFEASIBLE.value):
        return EXIT_INFEASIBLE
    return EXIT_NUMERICAL


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.dump_conic:
        dump_program(build_wsp_sdr(inst), args.dump_conic)
    try:
        design, _, sol = solve_wsp_sdr(inst)
    except SolveError as exc:
        print(f"robust SDR: {exc.status.value}: {exc.solution.message}", file=sys.stderr)
        return _status_exit(exc.status.value)
    ext = extract_beamformers(design, inst)
    extra = {"rank_profile": ext.rank_profile.tolist(), "fallback": ext.fallback,
             "iterations": sol.iterations}
    _emit(design_to_dict(design, ext.beamformers, extra), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    if args.dump_conic:
        dump_program(build_wsp_sdr(inst), args.dump_conic)
    rep = verify_proposition1(inst, probe=not args.no_probe)
    print(rep.to_json(indent=2 if args.pretty else None))
    return _status_exit(rep.status)


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    w, source = load_beamformers(args.design, inst)
    wc = [worst_case_sinr(inst, w, i) for i in range(inst.k)]
    margins = [a - g for a, g in zip(wc, inst.sinr_target)]
    _emit({
        "source": source,
        "power": w.power,
        "worst_case_sinr": wc,
        "sinr_target": inst.sinr_target.tolist(),
        "margins": margins,
        "min_margin": min(margins),
        "robust_feasible": bool(all(m >= -1e-6 * g for m, g in zip(margins, inst.sinr_target))),
    })
    return EXIT_OK


def cmd_sweep(args) -> int:
    d = _load_json(args.config)
    if not isinstance(d, dict):
        raise InputError(f"{args.config}: expected a JSON object")
    try:
        cfg = SweepConfig.from_dict(d)
    except ValueError as exc:
        raise InputError(f"{args.config}: {exc}") from None
    records, rows = run_sweep(cfg, workers=args.workers)
    rec_path, agg_path = write_sweep(args.out, cfg, records, rows)
    for row in rows:
        print(f"gamma {row['gamma_db']:6.2f} dB  feasible {row['feasibility_rate']:.2f}  "
              f"mean power {row['mean_power_db']:8.3f} dB")
    print(f"wrote {rec_path} and {agg_path}")
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        inst = generate_instance(args.nt, args.k, args.sigma2, args.radius, args.gamma_db, args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(inst.to_dict(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustsdr", description="Robust downlink beamforming by semidefinite "
                "relaxation, with duality and worst-case SINR checks.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve the robust SDR and print the design")
    s.add_argument("instance", help="instance JSON file")
    s.add_argument("--out", help="write the design JSON here instead of stdout")
    s.add_argument("--dump-conic", metavar="PATH", help="write the conic program in sparse text form")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("verify-duality", help="solve primal and dual and print the duality report")
    s.add_argument("instance")
    s.add_argument("--no-probe", action="store_true", help="skip the uniqueness probe")
    s.add_argument("--pretty", action="store_true", help="indent the JSON output")
    s.add_argument("--dump-conic", metavar="PATH", help="write the conic program in sparse text form")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("oracle", help="worst-case SINR of a design via the trust-region oracle")
    s.add_argument("instance")
    s.add_argument("--design", required=True,
                   help="design JSON with beamformers 'w' or covariance matrices 'W'")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("sweep", help="Monte Carlo sweep over target SINR",
                       epilog=f"The worker count can be overridden with ${WORKERS_ENV}.")
    s.add_argument("--config", required=True, help="sweep config JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int, help="worker processes (default: config, then CPU count)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gen", help="generate a random instance")
    s.add_argument("--nt", type=int, default=4)
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--sigma2", type=float, default=0.1)
    s.add_argument("--radius", type=float, default=0.1)
    s.add_argument("--gamma-db", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
