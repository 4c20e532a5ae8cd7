import json
import subprocess
import sys

import pytest

from maff import __version__
from maff.cli import run

from conftest import kilombero_dataset
from maff.data import write_survey_csv


def _call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _csv_body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


@pytest.fixture(scope="module")
def survey(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "survey.csv"
    assert run(["simulate", "-o", str(path), "--n", "300", "--q", "0.2", "--beta", "0.5", "--seed", "3"]) == 0
    return path


@pytest.fixture
def kilombero_csv(tmp_path):
    path = tmp_path / "kilombero.csv"
    with open(path, "w") as fh:
        write_survey_csv(kilombero_dataset(), fh)
    return path


def test_version(capsys):
    code, out, _ = _call(capsys, "--version")
    assert code == 0 and __version__ in out


def test_summary_kilombero(capsys, kilombero_csv):
    code, out, _ = _call(capsys, "summary", str(kilombero_csv))
    assert code == 0
    rows = _csv_body(out)
    assert rows[0] == "group,zero,positive,total,positive_share"
    assert rows[1].startswith("afebrile,160,1698,1858,")
    assert rows[2].startswith("febrile,16,121,137,")


def test_simulate_writes_truth(survey):
    truth = json.loads((survey.parent / "truth.json").read_text())
    assert truth["truth"]["true_maff"] == pytest.approx(0.5)
    assert truth["options"]["n"] == 300
    assert "threads" not in truth["options"]


def test_simulate_requires_output(capsys):
    code, _, err = _call(capsys, "simulate")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == 2


def test_fit_json(capsys, survey, tmp_path):
    dens = tmp_path / "dens.csv"
    basis = tmp_path / "basis.csv"
    code, out, _ = _call(capsys, "fit", str(survey), "--beta", "0.5",
                         "--dump-densities", str(dens), "--dump-basis", str(basis))
    assert code == 0
    d = json.loads(out)
    assert 0 < d["result"]["maff_hat"] < 1 and d["result"]["converged"]
    assert d["fit_config"]["beta"] == 0.5
    assert "threads" not in d["options"]
    lines = dens.read_text().splitlines()
    assert "component,grid_value,mass" in lines
    assert basis.read_text().count("\n") > 100


def test_fit_exact_unpenalized(capsys, tmp_path):
    path = tmp_path / "exact.csv"
    assert run(["simulate", "-o", str(path), "--n", "400", "--kernel", "exact", "--seed", "5"]) == 0
    code, out, _ = _call(capsys, "fit", str(path), "--kernel", "exact", "--c0", "0")
    assert code == 0
    assert 0 <= json.loads(out)["result"]["maff_hat"] <= 1


def test_fit_bootstrap_csv(capsys, survey, tmp_path):
    reps = tmp_path / "reps.csv"
    code, out, _ = _call(capsys, "fit", str(survey), "--beta", "0.5", "--k", "41",
                         "--bootstrap", "4", "--bootstrap-csv", str(reps))
    assert code == 0
    assert json.loads(out)["bootstrap"]["B"] == 4
    body = _csv_body(reps.read_text())
    assert body[0] == "estimator,replicate,estimate" and len(body) == 5


def test_baselines_table(capsys, survey):
    code, out, _ = _call(capsys, "baselines", str(survey))
    assert code == 0
    rows = _csv_body(out)
    assert rows[0] == "estimator,estimate,out_of_range,se,failures,error"
    assert [r.split(",")[0] for r in rows[1:]] == ["RR", "OR", "L", "P"]


def test_sweep_beta_note(capsys, survey):
    code, out, _ = _call(capsys, "sweep-beta", str(survey), "--kernels", "m1,m2",
                         "--killing-max", "0.2", "--killing-step", "0.1", "--k", "41")
    assert code == 0
    assert "# note: fever killing above 50%" in out
    rows = _csv_body(out)
    assert rows[0] == "fever_killing,beta,maff_m1,converged_m1,maff_m2,converged_m2"
    assert len(rows) == 4
    m1 = [float(r.split(",")[2]) for r in rows[1:]]
    assert m1 == sorted(m1)


def test_sensitivity_csv(capsys, survey):
    code, out, _ = _call(capsys, "sensitivity", str(survey), "--beta", "0.5", "--steps", "2", "--k", "41")
    assert code == 0
    rows = _csv_body(out)
    assert rows[0] == "delta1,delta1_scaled,tau,maff,converged,infeasible,error"
    assert len(rows) == 5


def test_dispersion_json(capsys, tmp_path):
    path = tmp_path / "fn.csv"
    path.write_text("mean_density,negatives,slides\n40,10,25\n400,1,25\n100,5,25\n")
    code, out, _ = _call(capsys, "dispersion", str(path))
    assert code == 0
    d = json.loads(out)
    assert d["n_records"] == 3 and d["r_hat"] > 0


@pytest.mark.parametrize("argv,code", [
    (["fit"], 2),
    (["nosuch"], 2),
    (["fit", "x.csv", "--bogus"], 2),
    (["fit", "{survey}", "--k", "abc"], 4),
    (["fit", "/nonexistent/file.csv"], 3),
    (["fit", "{survey}", "--kernel", "gauss"], 4),
    (["fit", "{survey}", "--beta", "1.5"], 4),
    (["fit", "{survey}", "--config", "/nonexistent.toml"], 3),
])
def test_exit_codes(capsys, survey, argv, code):
    argv = [a.replace("{survey}", str(survey)) for a in argv]
    got, out, err = _call(capsys, *argv)
    assert got == code
    diag = json.loads(err.strip().splitlines()[-1])
    assert diag["level"] == "error" and diag["exit_code"] == code


def test_malformed_input_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("fever,density\n0,-3\n")
    code, _, err = _call(capsys, "summary", str(bad))
    assert code == 3
    assert "line" in err


def test_toml_precedence(capsys, survey, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("beta = 0.5\nk = 41\n")
    _, out, _ = _call(capsys, "fit", str(survey), "--config", str(cfg))
    assert json.loads(out)["fit_config"]["k"] == 41
    assert json.loads(out)["fit_config"]["beta"] == 0.5
    _, out, _ = _call(capsys, "fit", str(survey), "--config", str(cfg), "--k", "31")
    assert json.loads(out)["fit_config"]["k"] == 31
    cfg.write_text("bogus = 1\n")
    code, _, _ = _call(capsys, "fit", str(survey), "--config", str(cfg))
    assert code == 4


def test_byte_identical_reruns(capsys, survey, tmp_path):
    for argv in (["fit", str(survey), "--beta", "0.5"],
                 ["sensitivity", str(survey), "--beta", "0.5", "--steps", "2", "--k", "41"]):
        _, a, _ = _call(capsys, *argv)
        _, b, _ = _call(capsys, *argv, "--threads", "2")
        assert a == b
    payloads = []
    for _ in range(2):
        run(["simulate", "-o", str(tmp_path / "s.csv"), "--n", "200", "--seed", "9"])
        payloads.append((tmp_path / "s.csv").read_bytes() + (tmp_path / "truth.json").read_bytes())
    assert payloads[0] == payloads[1]


def test_module_entry_point(survey):
    proc = subprocess.run([sys.executable, "-m", "maff", "summary", str(survey)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "group,zero,positive" in proc.stdout
