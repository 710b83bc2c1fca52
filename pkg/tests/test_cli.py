import json
import subprocess
import sys

import pytest

from cibend.cli import ConfigError, build_config, main, parse_config, parse_value

ALL = "bending, system_S, hypersurface, triviality, theta, decompose, lightcone, nullity, " \
      "rigidity, variation"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_value_parsing():
    assert parse_value("3") == 3 and parse_value("1e-9") == 1e-9
    assert parse_value("1, 1.3 2") == [1, 1.3, 2]
    assert parse_value("true") is True and parse_value("sphere") == "sphere"


def test_config_grammar_errors_are_line_precise():
    with pytest.raises(ConfigError, match=r"cfg:2: expected 'key = value'"):
        parse_config("seed = 1\njunk\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:3: duplicate key 'seed' \(first set on line 1\)"):
        parse_config("seed = 1\n# c\nseed = 2\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:1: malformed key"):
        parse_config("a..b = 1\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:2: points: must be >= 1"):
        build_config(parse_config("seed = 1\npoints = 0\n", "cfg"))
    with pytest.raises(ConfigError, match=r"cfg:1: tol.bending: tolerance"):
        build_config(parse_config("tol.bending = -1\n", "cfg"))
    with pytest.raises(ConfigError, match=r"cfg:1: suites: unknown suite"):
        build_config(parse_config("suites = bending, magic\n", "cfg"))
    with pytest.raises(ConfigError, match=r"cfg:1: what.ever: unknown key"):
        build_config(parse_config("what.ever = 1\n", "cfg"))


def test_comments_and_dotted_keys():
    raw = parse_config("# header\ngallery.name = ellipsoid  # trailing\n"
                       "gallery.axes = 1, 1.3, 1.7, 2.1\ntol.bending = 1e-10\n")
    cfg = build_config(raw)
    assert cfg.gallery == "ellipsoid"
    assert cfg.gallery_params == {"axes": (1, 1.3, 1.7, 2.1)}
    assert cfg.tolerances["bending"] == 1e-10


def test_sphere_rotation_all_suites_pass(tmp_path, capsys):
    cfg = write(tmp_path, f"gallery.name = sphere\ngallery.n = 3\nbending.name = rotation\n"
                          f"suites = {ALL}\npoints = 2\n")
    out = tmp_path / "r.json"
    assert main(["verify", "--config", cfg, "--no-timestamp", "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["report_version"] == 1
    assert rep["global"]["triviality"]["verdict"] == "trivial"
    assert set(rep["summary"]["suites"]) == set(s.strip() for s in ALL.split(","))
    assert "fail" not in rep["summary"]["suites"].values()


def test_sphere_x1sq_triviality_fails(tmp_path):
    cfg = write(tmp_path, "gallery.name = sphere\ngallery.n = 3\nbending.name = phi_f_x1sq\n"
                          "suites = triviality\n")
    out = tmp_path / "r.json"
    assert main(["verify", "--config", cfg, "--no-timestamp", "--output", str(out)]) == 1
    tri = json.loads(out.read_text())["global"]["triviality"]
    assert tri["verdict"] == "nontrivial" and tri["residual_beta"] > 1e-3


def test_empty_suites_is_a_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "gallery.name = sphere\nbending.name = rotation\n")
    assert main(["verify", "--config", cfg]) == 2
    assert "suites" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    ("gallery.name = sphere\ngallery.n = 9\nbending.name = zero\nsuites = bending\n",
     "run.cfg:2: gallery.n"),
    ("gallery.name = sphere\nbending.name = nope\nsuites = bending\n", "bending.name"),
    ("gallery.name = torus\nbending.name = zero\nsuites = bending\n", "run.cfg:1: gallery.name"),
    ("gallery.name = sphere\nbending.name = zero\nsuites = bending\npoints = x\n",
     "run.cfg:4: points"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, needle):
    assert main(["verify", "--config", write(tmp_path, text)]) == 2
    assert needle in capsys.readouterr().err


def test_flag_errors(tmp_path, capsys):
    cfg = write(tmp_path, "gallery.name = sphere\nbending.name = zero\nsuites = bending\n")
    assert main(["verify", "--config", cfg, "--tol", "nope=1"]) == 2
    assert main(["verify", "--config", cfg, "--suite", "magic"]) == 2
    assert main(["verify", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_flags_override_config(tmp_path):
    cfg = write(tmp_path, "gallery.name = ellipsoid\nbending.name = inversion\n"
                          "suites = theta\npoints = 5\n")
    out = tmp_path / "r.json"
    assert main(["verify", "--config", cfg, "--points", "2", "--seed", "4", "--suite", "bending",
                 "--suite", "system_S", "--tol", "bending=1e-10", "--no-timestamp",
                 "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["points"]) == 2 and rep["config"]["seed"] == 4
    assert rep["config"]["suites"] == ["bending", "system_S"]
    assert rep["config"]["tolerances"]["bending"] == 1e-10


def test_tight_tolerance_turns_into_verdict_failure(tmp_path):
    cfg = write(tmp_path, "gallery.name = ellipsoid\nbending.name = inversion\n"
                          "suites = system_S\ntol.system_S = 1e-30\n")
    assert main(["verify", "--config", cfg, "--output", str(tmp_path / "r.json")]) == 1


def test_determinism_and_worker_pool(tmp_path):
    cfg = write(tmp_path, f"gallery.name = ellipsoid\ngallery.axes = 1, 1.2, 1.5, 1.9, 2.4, 2.8\n"
                          f"bending.name = conformal_killing\nbending.seed = 3\nsuites = {ALL}\n"
                          f"points = 3\nseed = 5\n")
    outs = []
    for extra in ([], [], ["--workers", "2"]):
        out = tmp_path / f"r{len(outs)}.json"
        assert main(["verify", "--config", cfg, "--no-timestamp", "--output", str(out)]
                    + extra) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    rep = json.loads(outs[0])
    assert all(p["suites"]["rigidity"]["rigidity_verdict"] == "trivial with certificate"
               for p in rep["points"])


def test_timestamp_present_by_default(tmp_path):
    cfg = write(tmp_path, "gallery.name = sphere\nbending.name = zero\nsuites = bending\n")
    out = tmp_path / "r.json"
    main(["verify", "--config", cfg, "--output", str(out)])
    assert "timestamp" in json.loads(out.read_text())


def test_other_verbs(tmp_path, capsys):
    assert main(["list-gallery"]) == 0
    names = [e["name"] for e in json.loads(capsys.readouterr().out)["gallery"]]
    assert "ellipsoid" in names
    cfg = write(tmp_path, "gallery.name = cylinder\ngallery.n = 3\npoints = 2\n")
    assert main(["nullity", "--config", cfg]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert all(p["nullities"]["1"]["estimate"] == 2 for p in rep["points"])
    cfg = write(tmp_path, "form.p = 4\nform.ell = 2\nform.rank = 2\n", "f.cfg")
    assert main(["decompose", "--config", cfg]) == 0
    assert json.loads(capsys.readouterr().out)["ell"] == 2
    cfg = write(tmp_path, "isometry.N = 7\nisometry.k = 3\n", "i.cfg")
    assert main(["extend-isometry", "--config", cfg]) == 0
    checks = json.loads(capsys.readouterr().out)["checks"]
    assert checks["orthogonality"] <= 1e-10 and checks["minus_one_gap"] > 1e-6
    cfg = write(tmp_path, "form.p = 2\nform.ell = 3\n", "bad.cfg")
    assert main(["decompose", "--config", cfg]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cibend", "list-gallery"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and '"report_version": 1' in r.stdout
