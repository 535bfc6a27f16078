import json
from pathlib import Path

import numpy as np
import pytest

from skewblend import certificates as cf
from skewblend.cli import emit_decay_csv, run
from skewblend.cycles import detect_tangent_directions
from skewblend.errors import CertificateInvalid, InputError
from skewblend.shift_space import TruncatedSequence
from skewblend.skewproduct import FiberMap, one_step_system

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
REF = str(CONFIGS / "reference_1d.json")
BLOCK = str(CONFIGS / "block_2d.json")
TRANS = str(CONFIGS / "transition_1d.json")


def cli(*argv, out=None):
    args = list(argv) + ["-q"]
    if out is not None:
        args += ["--out", str(out)]
    code = run(args)
    doc = json.loads(Path(out).read_text()) if out is not None and Path(out).exists() else None
    return code, doc


def strip_time(doc):
    return {k: v for k, v in doc.items() if k != "timestamps"}


def test_verify_blender_reference(tmp_path):
    code, doc = cli("verify-blender", "--system", REF, "--grid", "0.001", out=tmp_path / "c.json")
    assert code == 0 and doc["valid"]
    assert doc["result"]["lebesgue_lower"] >= 0.52
    assert doc["system"]["nu"] == 0.5
    fresh = cf.replay(doc)
    assert fresh["slack"] == pytest.approx(doc["result"]["slack"], abs=1e-12)


def test_verify_blender_failure_writes_a_witness(tmp_path):
    code, doc = cli("verify-blender", "--system", REF, "--B=-1:1", "--D=-1.5:1.5", "--grid", "0.01",
                    out=tmp_path / "f.json")
    assert code == 1
    assert doc["kind"] == "failure" and "point" in doc["result"]["witness"]


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"maps": [\n  {"A": [[1]]},,\n]}')
    assert run(["verify-blender", "--system", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    nomaps = tmp_path / "nomaps.json"
    nomaps.write_text('{"nu": 0.5}')
    assert run(["verify-blender", "--system", str(nomaps)]) == 2
    assert run(["verify-blender", "--system", str(tmp_path / "missing.json")]) == 2
    assert run(["no-such-command"]) == 2


def test_determinism(tmp_path):
    a = cli("verify-blender", "--system", REF, out=tmp_path / "a.json")[1]
    b = cli("verify-blender", "--system", REF, out=tmp_path / "b.json")[1]
    assert strip_time(a) == strip_time(b)


def test_find_transition_and_replay(tmp_path):
    code, doc = cli("find-transition", "--system", TRANS, "--source", "0", "--depth", "3", out=tmp_path / "t.json")
    assert code == 0 and doc["result"]["word"] == [2, 2]
    assert cf.replay(doc)["word"] == [2, 2]
    code, doc = cli("find-transition", "--system", TRANS, "--source", "0", "--target", "ball:10:0.3",
                    "--depth", "3", out=tmp_path / "u.json")
    assert code == 1 and "near_miss_distance" in doc["result"]["witness"]


def test_block_commands(tmp_path):
    code, doc = cli("verify-conley-moser", "--system", BLOCK, out=tmp_path / "cm.json")
    assert code == 0 and doc["result"]["cs_index"] == 1
    cf.replay(doc)
    code, doc = cli("verify-cone", "--system", BLOCK, out=tmp_path / "cone.json")
    assert code == 0 and doc["result"]["min_margin"] > 0
    cf.replay(doc)
    assert cli("verify-cone", "--system", BLOCK, "--kind", "stable", out=tmp_path / "s.json")[0] == 1
    code, doc = cli("lift", "--system", BLOCK, "--ell", "1", out=tmp_path / "lift.json")
    assert code == 0 and doc["result"]["empirical_ratio"] <= doc["result"]["lifted_upper_bound"] + 1e-6
    cf.replay(doc)


def test_find_intersection(tmp_path):
    cli("verify-blender", "--system", REF, out=tmp_path / "c.json")
    code, doc = cli("find-intersection", "--certificate", str(tmp_path / "c.json"), "--depth", "12",
                    out=tmp_path / "i.json")
    assert code == 0 and doc["result"]["lambda_u"]["ok"]


def test_cycle_build_and_replay(tmp_path):
    code, built = cli("verify-cycle", "--c", "2", "--i1", "1", "--i2", "1", "--eps", "0.2", out=tmp_path / "cy.json")
    assert code == 0 and built["result"]["co_index"] == 0
    code, again = cli("verify-cycle", "--certificate", str(tmp_path / "cy.json"), out=tmp_path / "cy2.json")
    assert code == 0
    assert again["result"] == built["result"]


def test_scenario_csv_and_detection(tmp_path):
    csv1 = tmp_path / "a.csv"
    code, doc = cli("build-scenario", "--c", "2", "--i1", "1", "--i2", "1", "--ell", "1", "--csv", str(csv1),
                    out=tmp_path / "s.json")
    assert code == 0 and doc["result"]["c_T"] == 1
    rows = csv1.read_text().splitlines()
    assert rows[0] == "n,vector,norm,bound" and len(rows) == 1 + 4 * 41
    csv2 = tmp_path / "b.csv"
    code, det = cli("detect-tangency", "--certificate", str(tmp_path / "s.json"), "--csv", str(csv2),
                    out=tmp_path / "d.json")
    assert code == 0 and det["result"]["d_T"] == 1
    assert csv1.read_bytes() == csv2.read_bytes()
    csv3 = tmp_path / "c.csv"
    cli("detect-tangency", "--certificate", str(tmp_path / "s.json"), "--horizon", "0", "--csv", str(csv3),
        out=tmp_path / "d0.json")
    assert len(csv3.read_text().splitlines()) == 1 + 4
    assert cf.replay(doc)["valid"]


def test_probe_exit_codes(tmp_path):
    code, doc = cli("probe", "--c", "2", "--i1", "1", "--i2", "1", "--ell", "1", "--trials", "3",
                    out=tmp_path / "p.json")
    assert code == 0 and doc["result"]["passed"] == 3
    code, doc = cli("probe", "--c", "2", "--i1", "1", "--i2", "1", "--ell", "1", "--trials", "3", "--eta", "0.05",
                    out=tmp_path / "q.json")
    assert code == 1
    assert all(f["stage"] for f in doc["result"]["failures"])
    assert cli("build-scenario", "--c", "2", "--i1", "1", "--i2", "1", "--ell", "1", "--eps", "0",
               out=tmp_path / "z.json")[0] == 2
    assert cli("build-scenario", "--c", "3", "--i1", "1", "--i2", "2", "--ell", "1",
               out=tmp_path / "e.json")[0] == 2


def test_csv_is_stable():
    sys = one_step_system([FiberMap.affine(np.diag([0.5, 2.0])), FiberMap.affine(np.diag([2.0, 0.5]))], nu=0.1)
    xi = TruncatedSequence((2,) * 6, (1,) * 6)
    rep = detect_tangent_directions(sys, (xi, np.zeros(2)), np.eye(2), 6, 0.5, 1.0)
    a, b = emit_decay_csv(rep, None), emit_decay_csv(rep, None)
    assert a == b
    ns = [int(r.split(",")[0]) for r in a.splitlines()[1:]]
    assert ns == sorted(ns) and len(ns) == 2 * 13


def test_replay_catches_tampering(tmp_path):
    doc = cli("verify-blender", "--system", REF, out=tmp_path / "c.json")[1]
    doc["result"]["slack"] += 1e-6
    with pytest.raises(CertificateInvalid):
        cf.replay(doc)
    doc["schema"] = 99
    (tmp_path / "x.json").write_text(json.dumps(doc))
    with pytest.raises(InputError):
        cf.load_document(tmp_path / "x.json")
