"""Command-line front end.  Exit codes: 0 valid, 1 verification failure, 2 input error."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys as _sys
from pathlib import Path

import numpy as np

from . import certificates as cf
from .blending import build_translation_family, default_spacing, verify_conley_moser, verify_covering
from .cones import Cone, verify_stable_cone, verify_unstable_cone
from .cycles import (
    TangentDirectionReport,
    build_cycle_scenario,
    certify_tangency,
    declared_system,
    detect_tangent_directions,
    find_transition,
    make_tangency_scenario,
    robustness_probe,
)
from .errors import InputError, ResourceError, SkewBlendError, VerificationFailure
from .grassmann import Plane, lift_system, lifted_lipschitz_empirical
from .intersect import HorizontalDisc, refine_intersection, verify_lambda_u
from .regions import Region
from .shift_space import TruncatedSequence, parse_word
from .skewproduct import FiberMap, SkewSystem


def emit_decay_csv(report: TangentDirectionReport, path) -> str:
    """Rows ``(n, vector, norm, bound)`` sorted by ``n`` then vector id."""
    if report.norms.size == 0:
        raise InputError("empty tangent-direction report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "vector", "norm", "bound"])
    for j, n in enumerate(report.ns):
        bound = report.C * report.lam ** abs(int(n))
        for v in range(report.norms.shape[0]):
            w.writerow([int(n), v, repr(float(report.norms[v, j])), repr(float(bound))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# -- argument helpers ----------------------------------------------------------------


def parse_region(text: str) -> Region:
    """``lo1,lo2:hi1,hi2`` (box), ``ball:c1,c2:r``, inline JSON, or a path to a JSON file."""
    t = text.strip()
    try:
        if t.startswith(("{", "[")):
            return Region.from_dict(json.loads(t))
        if Path(t).suffix == ".json":
            return Region.from_dict(cf.load_json(t, "region"))
        if t.startswith("ball:"):
            _, c, r = t.split(":")
            return Region.ball([float(v) for v in c.split(",")], float(r))
        lo, hi = t.split(":")
        return Region.box([float(v) for v in lo.split(",")], [float(v) for v in hi.split(",")])
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse region {text!r}: {exc}") from exc


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def load_config(path: str) -> tuple[SkewSystem, dict]:
    """A system description, optionally with extra keys (``B``, ``D``, ``symbols``, ``mode``...)."""
    data = cf.load_json(path, "config")
    if "system" in data and "maps" not in data:
        body = data["system"]
    else:
        body = data
    try:
        return SkewSystem.from_dict(body), data
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: malformed system description: {exc}") from exc


def _pick(flag, cfg: dict, key: str, parse=None, default=None):
    if flag is not None:
        return parse(flag) if parse else flag
    if key in cfg:
        v = cfg[key]
        if parse is parse_region:
            return Region.from_dict(v)
        return v
    if default is None:
        raise InputError(f"missing {key!r}: give --{key.replace('_', '-')} or a config field")
    return default


def _symbols(text, cfg, d: int):
    if text is not None:
        return list(parse_word(text))
    return list(cfg.get("symbols", range(1, d + 1)))


# -- subcommands -------------------------------------------------------------------------


def cmd_verify_blender(a):
    sys, cfg = load_config(a.system)
    mode = a.mode or cfg.get("mode", "cs")
    B = _pick(a.B, cfg, "B", parse_region)
    D = _pick(a.D, cfg, "D", parse_region)
    symbols = _symbols(a.symbols, cfg, sys.d)
    h = a.grid if a.grid is not None else cfg.get("grid", default_spacing(B))
    cert = verify_covering(sys, symbols, B, D, h, mode)
    return cf.make_document("covering", cert.to_dict(), cf.covering_inputs(cert), sys, a.seed)


def cmd_build_blender(a):
    if a.diag is None and a.matrix is None:
        raise InputError("give --diag or --matrix")
    A = np.diag(parse_floats(a.diag)) if a.diag else np.asarray(json.loads(a.matrix), dtype=float)
    c = A.shape[0]
    x_star = np.array(parse_floats(a.fixed_point)) if a.fixed_point else np.zeros(c)
    phi = FiberMap.affine(A, x_star - A @ x_star)
    fam = build_translation_family(phi, x_star, a.eps)
    sys = declared_system(fam.maps)
    h = a.grid if a.grid is not None else fam.delta / (200 if c == 1 else 40)
    cert = verify_covering(sys, range(1, sys.d + 1), fam.B, fam.D, h, "cs")
    res = {**cert.to_dict(), "family": {"delta": fam.delta, "offsets": fam.offsets.tolist(),
                                        "cs_coords": list(fam.cs_coords), "maps": sys.d}}
    return cf.make_document("covering", res, cf.covering_inputs(cert), sys, a.seed)


def cmd_verify_conley_moser(a):
    sys, cfg = load_config(a.system)
    D_cs = _pick(a.D_cs, cfg, "D_cs", parse_region)
    D_cu = _pick(a.D_cu, cfg, "D_cu", parse_region)
    dims = [int(v) for v in a.cs_dims.split(",")] if a.cs_dims else cfg.get("cs_dims")
    symbols = _symbols(a.symbols, cfg, sys.d)
    cert = verify_conley_moser(sys, symbols, D_cs, D_cu, dims)
    inputs = {"symbols": [[s] for s in symbols], "D_cs": D_cs.to_dict(), "D_cu": D_cu.to_dict(), "cs_dims": dims}
    return cf.make_document("conley_moser", cert.to_dict(), inputs, sys, a.seed)


def cmd_find_intersection(a):
    doc = cf.load_document(a.certificate)
    if doc["kind"] != "covering":
        raise InputError("find-intersection needs a covering certificate")
    sys = cf.system_of(doc)
    cert = cf.covering_from_inputs(sys, doc["inputs"])
    if a.disc:
        disc = HorizontalDisc.from_dict(cf.load_json(a.disc, "disc"))
    else:
        disc = HorizontalDisc.constant(TruncatedSequence(), cert.B.center, cert.lebesgue_lower / 4)
    depth = a.depth or 12
    trace = refine_intersection(cert, disc, depth)
    lu = verify_lambda_u(sys, (trace.sequence, trace.point), cert.B, min(depth, len(trace.sequence.past)),
                         boundaries=trace.boundaries) if cert.mode == "cs" else None
    res = trace.to_dict()
    if lu is not None:
        res["lambda_u"] = lu.to_dict()
        res["valid"] = bool(trace.valid and lu.ok)
    return cf.make_document("refinement", res, {"disc": disc.to_dict(), "depth": depth}, sys, a.seed)


def cmd_lift(a):
    sys, cfg = load_config(a.system)
    ell = int(_pick(a.ell, cfg, "ell"))
    lift = lift_system(sys, ell)
    region = _pick(a.region, cfg, "region", parse_region, default=False) or None
    emp = lifted_lipschitz_empirical(lift, a.trials or 1000, np.random.default_rng(a.seed), region)
    res = {**lift.to_dict(), "empirical_ratio": emp, "valid": bool(emp <= lift.upper_bound + 1e-6)}
    return cf.make_document("lift", res, {"ell": ell}, sys, a.seed)


def cmd_verify_cone(a):
    sys, cfg = load_config(a.system)
    cone_data = _pick(a.cone, cfg, "cone", lambda t: json.loads(t) if t.strip().startswith("{")
                      else cf.load_json(t, "cone"))
    C = Cone.from_dict(cone_data)
    region = _pick(a.region, cfg, "region", parse_region)
    lam = float(_pick(a.lam, cfg, "lambda"))
    kind = a.kind or cfg.get("kind", "unstable")
    fn = verify_unstable_cone if kind == "unstable" else verify_stable_cone
    symbols = list(parse_word(a.symbols)) if a.symbols else cfg.get("symbols")
    cert = fn(sys, C, region, lam, rng=np.random.default_rng(a.seed), raise_on_fail=False, symbols=symbols,
              sample=a.sample)
    inputs = {"kind": kind, "cone": C.to_dict(), "region": region.to_dict(), "lambda": lam,
              "symbols": symbols, "sample": a.sample}
    return cf.make_document("cone", cert.to_dict(), inputs, sys, a.seed)


def cmd_find_transition(a):
    sys, cfg = load_config(a.system)
    src_text = a.source if a.source is not None else cfg.get("source")
    if src_text is None:
        raise InputError("missing source: give --source or a config field")
    if isinstance(src_text, str) and ":" not in src_text and not src_text.strip().startswith("{"):
        source = np.atleast_2d(parse_floats(src_text))
        src_in = source.tolist()
    else:
        source = parse_region(src_text) if isinstance(src_text, str) else Region.from_dict(src_text)
        src_in = source.to_dict()
    target = _pick(a.target, cfg, "target", parse_region)
    depth = a.depth or int(cfg.get("max_depth", 3))
    w = find_transition(sys, source, target, depth)
    res = {**w.to_dict(), "valid": True}
    return cf.make_document("transition", res, {"source": src_in, "target": target.to_dict(), "max_depth": depth},
                            sys, a.seed)


def cmd_verify_cycle(a):
    if a.certificate:
        doc = cf.load_document(a.certificate)
        if doc["kind"] != "cycle":
            raise InputError("verify-cycle needs a cycle certificate")
        cert = cf.cycle_from_inputs(cf.system_of(doc), doc["inputs"])
        cf._check(doc["result"]["slack"], cert.slack, "cycle slack")
    else:
        _, cert = build_cycle_scenario(a.c, a.i1, a.i2, a.eps, max_depth=a.depth or 2)
    return cf.make_document("cycle", cert.to_dict(), cf.cycle_inputs(cert), cert.system, a.seed)


def _tangency_doc(cert, seed):
    return cf.make_document("tangency", cert.to_dict(), {"params": cert.source.params}, cert.source.system, seed,
                            valid=cert.valid)


def _scenario_kwargs(a) -> dict:
    kw = {}
    if a.horizon is not None:
        kw["horizon"] = a.horizon
    return kw


def cmd_build_scenario(a):
    scn = make_tangency_scenario(a.c, a.i1, a.i2, a.ell, a.eps, **_scenario_kwargs(a))
    cert = certify_tangency(scn)
    if a.csv and cert.report is not None:
        emit_decay_csv(cert.report, a.csv)
    return _tangency_doc(cert, a.seed)


def cmd_detect_tangency(a):
    doc = cf.load_document(a.certificate)
    if doc["kind"] != "tangency":
        raise InputError("detect-tangency needs a tangency certificate")
    res = doc["result"]
    if "point" not in res:
        raise InputError("certificate has no tangency point (failed at stage "
                         f"{res.get('failed_stage')!r})")
    sys = cf.system_of(doc)
    xi = TruncatedSequence.from_dict(res["point"]["sequence"])
    x = np.asarray(res["point"]["x"], dtype=float)
    E = Plane.from_dict(res["point"]["plane"])
    det = res["stages"]["tangency"]
    rng = np.random.default_rng(a.seed)
    cands = np.vstack([E.frame.T, E.complement().T, rng.standard_normal((2, sys.c))])
    N = a.horizon if a.horizon is not None else int(det["N"])
    rep = detect_tangent_directions(sys, (xi, x), cands, N, float(a.lam or det["lambda"]),
                                    float(a.C or det["C"]))
    if a.csv:
        emit_decay_csv(rep, a.csv)
    ell = E.ell
    body = {**rep.to_dict(), "expected_d_T": ell, "valid": bool(rep.d_T == ell and rep.passed[:ell].all())}
    return cf.make_document("tangent_directions", body, {"certificate": str(a.certificate), "N": N}, None,
                            a.seed)


def cmd_probe(a):
    if a.certificate:
        doc = cf.load_document(a.certificate)
        if doc["kind"] == "tangency":
            cert = certify_tangency(cf.scenario_from_document(doc))
            gamma = cert.source.system.gamma
        elif doc["kind"] == "cycle":
            cert = cf.cycle_from_inputs(cf.system_of(doc), doc["inputs"])
            gamma = cert.system.gamma
        else:
            raise InputError("probe needs a cycle or tangency certificate")
    else:
        cert = certify_tangency(make_tangency_scenario(a.c, a.i1, a.i2, a.ell, a.eps, **_scenario_kwargs(a)))
        gamma = cert.source.system.gamma
    if not cert.valid:
        raise VerificationFailure("the certificate to probe is not valid", {}, stage="probe")
    eta = a.eta if a.eta is not None else cert.slack * gamma / 4
    rep = robustness_probe(cert, eta, a.trials or 100, a.seed)
    body = {**rep.to_dict(), "original_slack": cert.slack, "valid": rep.all_passed}
    return cf.make_document("probe", body, {"eta": eta, "trials": rep.trials}, None, a.seed)


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--grid", type=float, help="grid spacing h")
    common.add_argument("--depth", type=int, help="refinement depth or search depth")
    common.add_argument("--horizon", type=int, help="tangent-direction horizon N")
    common.add_argument("--eta", type=float, help="probe perturbation size")
    common.add_argument("--trials", type=int, help="probe trials or sample count")
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="skewblend", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("verify-blender", cmd_verify_blender, "certify the covering property")
    sp.add_argument("--system", required=True)
    sp.add_argument("--mode", choices=("cs", "cu"))
    sp.add_argument("--symbols")
    sp.add_argument("--B")
    sp.add_argument("--D")

    sp = add("build-blender", cmd_build_blender, "translation family of an affine hyperbolic map")
    sp.add_argument("--diag")
    sp.add_argument("--matrix", help="JSON matrix")
    sp.add_argument("--fixed-point")
    sp.add_argument("--eps", type=float, default=0.2)

    sp = add("verify-conley-moser", cmd_verify_conley_moser, "block contraction checks")
    sp.add_argument("--system", required=True)
    sp.add_argument("--symbols")
    sp.add_argument("--D-cs", dest="D_cs")
    sp.add_argument("--D-cu", dest="D_cu")
    sp.add_argument("--cs-dims")

    sp = add("find-intersection", cmd_find_intersection, "refine a horizontal disc against a covering")
    sp.add_argument("--certificate", required=True)
    sp.add_argument("--disc")

    sp = add("lift", cmd_lift, "lift to the bundle of planes")
    sp.add_argument("--system", required=True)
    sp.add_argument("--ell", type=int)
    sp.add_argument("--region")

    sp = add("verify-cone", cmd_verify_cone, "certify a cone field")
    sp.add_argument("--system", required=True)
    sp.add_argument("--cone", help="JSON {rank, aperture, basis} or a file")
    sp.add_argument("--region")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--kind", choices=("unstable", "stable"))
    sp.add_argument("--symbols")
    sp.add_argument("--sample", action="store_true")

    sp = add("find-transition", cmd_find_transition, "shortest transition word between regions")
    sp.add_argument("--system", required=True)
    sp.add_argument("--source", help="region or a point x1,x2,...")
    sp.add_argument("--target")

    scenario_flags = argparse.ArgumentParser(add_help=False)
    scenario_flags.add_argument("--c", type=int, default=4)
    scenario_flags.add_argument("--i1", type=int, default=2)
    scenario_flags.add_argument("--i2", type=int, default=2)
    scenario_flags.add_argument("--ell", type=int, default=2)
    scenario_flags.add_argument("--eps", type=float, default=0.2)

    sp = sub.add_parser("verify-cycle", parents=[common], help="replay or build a robust cycle")
    sp.set_defaults(func=cmd_verify_cycle)
    sp.add_argument("--certificate")
    sp.add_argument("--c", type=int, default=2)
    sp.add_argument("--i1", type=int, default=1)
    sp.add_argument("--i2", type=int, default=1)
    sp.add_argument("--eps", type=float, default=0.2)

    sp = add("detect-tangency", cmd_detect_tangency, "tangent directions at a certified tangency point")
    sp.add_argument("--certificate", required=True)
    sp.add_argument("--csv")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--C", type=float)

    sp = sub.add_parser("build-scenario", parents=[common, scenario_flags], help="end-to-end tangency pipeline")
    sp.set_defaults(func=cmd_build_scenario)
    sp.add_argument("--csv")

    sp = sub.add_parser("probe", parents=[common, scenario_flags], help="robustness under random perturbations")
    sp.set_defaults(func=cmd_probe)
    sp.add_argument("--certificate")
    return p


def _summary(doc: dict) -> str:
    res = doc["result"]
    bits = [doc["kind"], "valid" if doc["valid"] else "INVALID"]
    for key in ("slack", "min_slack", "lebesgue_lower", "d_T", "c_T", "failed_stage"):
        if res.get(key) is not None:
            bits.append(f"{key}={res[key]}")
    if doc["kind"] == "probe":
        bits.append(f"passed={res['passed']}/{res['trials']}")
        if res["failures"]:
            bits.append("failing stages=" + ",".join(sorted({str(f["stage"]) for f in res["failures"]})))
    return " ".join(bits)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        doc = a.func(a)
    except (InputError, ResourceError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except VerificationFailure as exc:
        body = {"valid": False, "message": str(exc), "stage": exc.stage, "witness": exc.witness}
        doc = cf.make_document("failure", body, {"command": a.command}, None, a.seed, valid=False)
        cf.write_document(doc, a.out) if a.out else _sys.stdout.write(cf.dumps(doc))
        print(f"failure at stage {exc.stage}: {exc}", file=_sys.stderr)
        return 1
    except SkewBlendError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    text = cf.write_document(doc, a.out)
    if not a.out:
        _sys.stdout.write(text)
    if not a.quiet:
        print(_summary(doc), file=_sys.stderr)
    return 0 if doc["valid"] else 1


def main() -> None:
    raise SystemExit(run())
