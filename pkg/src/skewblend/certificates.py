"""Certificate files: JSON documents that carry enough data to be re-verified on their own."""

from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path

import numpy as np

from .blending import verify_conley_moser, verify_covering
from .cones import Cone, verify_stable_cone, verify_unstable_cone
from .cycles import (
    BlenderSpec,
    TransitionWitness,
    certify_tangency,
    find_transition,
    make_tangency_scenario,
    verify_cycle,
)
from .errors import CertificateInvalid, InputError
from .grassmann import lift_system
from .regions import Region
from .skewproduct import SkewSystem, word_map

SCHEMA_VERSION = 1
REPLAY_TOL = 1e-12


def jsonable(obj):
    """Plain JSON types; non-finite floats become strings so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _split_runtimes(obj, acc: list):
    # wall-clock numbers are the only nondeterministic content; they go to the timestamps block
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            if k in ("runtime_s", "runtime"):
                acc.append(float(v))
            else:
                out[k] = _split_runtimes(v, acc)
        return out
    if isinstance(obj, list):
        return [_split_runtimes(v, acc) for v in obj]
    return obj


def make_document(kind: str, result: dict, inputs: dict, system: SkewSystem | None = None, seed: int = 0,
                  valid: bool | None = None) -> dict:
    times: list = []
    body = _split_runtimes(jsonable(result), times)
    doc = {"schema": SCHEMA_VERSION, "kind": kind, "seed": int(seed),
           "valid": bool(body.get("valid", False) if valid is None else valid),
           "inputs": jsonable(inputs), "result": body}
    if system is not None:
        doc["system"] = jsonable(system.to_dict())
    doc["timestamps"] = {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                         "runtime_s": float(sum(times))}
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_document(doc: dict, path: str | Path | None) -> str:
    text = dumps(doc)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_json(path: str | Path, what: str = "file") -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be an object")
    return data


def load_document(path: str | Path) -> dict:
    doc = load_json(path, "certificate")
    if doc.get("schema") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema {doc.get('schema')!r}")
    for key in ("kind", "inputs", "result"):
        if key not in doc:
            raise InputError(f"{path}: missing field {key!r}")
    return doc


def system_of(doc: dict) -> SkewSystem:
    if "system" not in doc:
        raise InputError("certificate carries no system echo")
    return SkewSystem.from_dict(doc["system"])


# -- per-kind replay --------------------------------------------------------------------


def _check(stored: float, fresh: float, what: str):
    if isinstance(stored, str) or abs(float(stored) - float(fresh)) > REPLAY_TOL:
        raise CertificateInvalid(f"replayed {what} differs from the stored value",
                                 {"stored": stored, "replayed": float(fresh)}, stage="replay")


def covering_inputs(cert) -> dict:
    return {"mode": cert.mode, "symbols": [list(w) for w in cert.symbols], "B": cert.B.to_dict(),
            "D": cert.D.to_dict(), "h": cert.h}


def covering_from_inputs(sys: SkewSystem, inp: dict):
    return verify_covering(sys, [tuple(w) for w in inp["symbols"]], Region.from_dict(inp["B"]),
                           Region.from_dict(inp["D"]), float(inp["h"]), inp["mode"])


def witness_inputs(w: TransitionWitness) -> dict:
    return {"word": list(w.word), "source": w.source.tolist()}


def witness_from_inputs(sys: SkewSystem, inp: dict, src: Region, dst: Region) -> TransitionWitness:
    word = tuple(int(s) for s in inp["word"])
    x = np.asarray(inp["source"], dtype=float)
    T = word_map(sys, word)
    y = T(x)
    return TransitionWitness(word, T, x, y, float(dst.signed_distance(y)), float(src.signed_distance(x)))


def cycle_inputs(cert) -> dict:
    return {"cs": {**covering_inputs(cert.cs.cert), "index": cert.cs.index},
            "cu": {**covering_inputs(cert.cu.cert), "index": cert.cu.index},
            "t12": witness_inputs(cert.t12), "t21": witness_inputs(cert.t21)}


def cycle_from_inputs(sys: SkewSystem, inp: dict):
    cs = covering_from_inputs(sys, inp["cs"])
    cu = covering_from_inputs(sys, inp["cu"])
    t12 = witness_from_inputs(sys, inp["t12"], cs.B, cu.B)
    t21 = witness_from_inputs(sys, inp["t21"], cu.B, cs.B)
    return verify_cycle(BlenderSpec(cs, int(inp["cs"]["index"])), BlenderSpec(cu, int(inp["cu"]["index"])),
                        t12, t21)


def scenario_from_document(doc: dict):
    """Rebuild a tangency scenario and check it reproduces the echoed system."""
    params = dict(doc["inputs"]["params"])
    scn = make_tangency_scenario(**params)
    if "system" in doc:
        echo = doc["system"]["maps"]
        if len(echo) != scn.system.d:
            raise CertificateInvalid("scenario rebuild has a different alphabet",
                                     {"stored": len(echo), "rebuilt": scn.system.d}, stage="replay")
        for s in (1, scn.system.d):
            stored = np.asarray(echo[s - 1]["pieces"][0]["A"])
            if np.max(np.abs(stored - scn.system.symbol_map(s).A)) > REPLAY_TOL:
                raise CertificateInvalid("scenario rebuild differs from the echoed system", {"symbol": s},
                                         stage="replay")
    return scn


def replay(doc: dict) -> dict:
    """Re-verify a certificate document; returns the fresh result.

    Raises ``CertificateInvalid`` when a replayed slack differs from the
    stored one, and the usual verification errors when a check fails.
    """
    kind, inp, res = doc["kind"], doc["inputs"], doc["result"]
    if kind == "covering":
        cert = covering_from_inputs(system_of(doc), inp)
        _check(res["slack"], cert.slack, "covering slack")
        return cert.to_dict()
    if kind == "cycle":
        cert = cycle_from_inputs(system_of(doc), inp)
        _check(res["slack"], cert.slack, "cycle slack")
        return cert.to_dict()
    if kind == "tangency":
        cert = certify_tangency(scenario_from_document(doc))
        if res.get("failed_stage") != cert.failed_stage:
            raise CertificateInvalid("replay fails at a different stage",
                                     {"stored": res.get("failed_stage"), "replayed": cert.failed_stage},
                                     stage="replay")
        if cert.margins:
            _check(res["slack"], cert.slack, "tangency slack")
        return cert.to_dict()
    if kind == "cone":
        sys = system_of(doc)
        fn = verify_unstable_cone if inp["kind"] == "unstable" else verify_stable_cone
        cert = fn(sys, Cone.from_dict(inp["cone"]), Region.from_dict(inp["region"]), float(inp["lambda"]),
                  rng=np.random.default_rng(doc["seed"]), raise_on_fail=False, symbols=inp.get("symbols"),
                  sample=bool(inp.get("sample", False)))
        _check(res["min_margin"], cert.min_margin, "cone margin")
        return cert.to_dict()
    if kind == "lift":
        lift = lift_system(system_of(doc), int(inp["ell"]))
        _check(res["lifted_upper_bound"], lift.upper_bound, "lifted bound")
        return lift.to_dict()
    if kind == "transition":
        sys = system_of(doc)
        src = inp["source"]
        src = Region.from_dict(src) if isinstance(src, dict) else np.asarray(src, dtype=float)
        w = find_transition(sys, src, Region.from_dict(inp["target"]), int(inp["max_depth"]))
        if list(w.word) != list(res["word"]):
            raise CertificateInvalid("replayed transition word differs",
                                     {"stored": res["word"], "replayed": list(w.word)}, stage="replay")
        return w.to_dict()
    if kind == "conley_moser":
        cert = verify_conley_moser(system_of(doc), [tuple(w) for w in inp["symbols"]],
                                   Region.from_dict(inp["D_cs"]), Region.from_dict(inp["D_cu"]),
                                   inp.get("cs_dims"))
        _check(res["slack"], cert.slack, "Conley-Moser slack")
        return cert.to_dict()
    raise InputError(f"certificates of kind {kind!r} are not replayable")
