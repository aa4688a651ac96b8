import io
import json

import numpy as np
import pytest

from proxsampler import cli
from proxsampler.config import ConfigError, parse_config

BOX10 = """
[run]
command = sample-uniform
q = 2
M = 1
eps = 0.5
lambda = 1
seed = 7
replicas = 20
start = exact
iterations = 5

[target]
kind = box
half_widths = 1, 1, 1, 1, 1, 1, 1, 1, 1, 1
"""

SQUARE = """
[run]
command = sample-uniform
q = 2
M = 2
eps = 0.1
seed = 11
replicas = {replicas}
start = {start}
iterations = 2

[target]
kind = box
half_widths = 1, 1
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_sample_uniform_runs(tmp_path):
    cfg = write(tmp_path, BOX10)
    out = tmp_path / "o.csv"
    buf = io.StringIO()
    assert cli.run(cfg, out=out, stdout=buf) == 0
    X = cli.load_samples(out)
    assert X.shape == (20, 10) and np.all(np.abs(X) <= 1)
    summary = json.loads((tmp_path / "o.csv.summary.json").read_text())
    assert summary["pass"] and summary["derived"]["tau"] == 3
    assert summary["ledger"]["iterations_completed"] == 100
    assert "[PASS] budget" in buf.getvalue()
    header = out.read_text().splitlines()[:4]
    assert header[0].startswith("# proxsampler-csv schema=1")
    assert "run.seed=7" in header[2]


def test_missing_key_is_reported(tmp_path, capsys):
    cfg = write(tmp_path, BOX10.replace("q = 2\n", ""))
    assert cli.run(cfg, out=tmp_path / "o.csv") == 1
    err = capsys.readouterr().err
    assert "missing required keys" in err and "q" in err


def test_unknown_key_is_reported(tmp_path, capsys):
    cfg = write(tmp_path, BOX10.replace("seed = 7", "seed = 7\nstepsize = 3"))
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == 1
    assert "unknown keys: stepsize" in capsys.readouterr().err


@pytest.mark.parametrize("bad, msg", [
    ("command = sample-uniform", "command must be"),
    ("kind = box", "kind must be"),
    ("start = exact", "start must be"),
])
def test_config_rejects_bad_values(bad, msg):
    text = BOX10.replace(bad, bad.split("=")[0] + "= nonsense")
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_config_target_kind_must_match_command():
    text = BOX10.replace("kind = box\nhalf_widths = 1, 1, 1, 1, 1, 1, 1, 1, 1, 1", "kind = norm\ndim = 2")
    with pytest.raises(ConfigError, match="needs a body"):
        parse_config(text)


def test_dry_run_prints_params_without_queries(tmp_path):
    cfg = write(tmp_path, BOX10.replace("iterations = 5\n", "").replace("start = exact", "start = warm-start"))
    buf = io.StringIO()
    assert cli.run(cfg, dry_run=True, stdout=buf) == 0
    text = buf.getvalue()
    assert "h: 0.01\n" in text and "tau: 3\n" in text and "N: 320\n" in text
    assert "sigma2_schedule: 0.1," in text
    assert "'membership_calls': 0" in text
    assert not list(tmp_path.glob("*.csv"))


def test_dry_run_logconcave_plan(tmp_path):
    text = """
[run]
command = warm-start-logconcave
q = 2
R = 4
lambda = 1
seed = 1

[target]
kind = quadratic
dim = 4
"""
    table = cli.echo_derived_params(parse_config(text), io.StringIO())
    counts = table["warm_start"]["phase_counts"]
    assert counts["I"] == 4 and counts["init"] == 1
    assert table["ledger"]["evaluation_calls"] == 0


def test_diagnose_writes_one_row_per_check(tmp_path):
    cfg = write(tmp_path, "[run]\ncommand = diagnose\nseed = 3\nn = 2000\n")
    out = tmp_path / "d.csv"
    assert cli.run(cfg, out=out, stdout=io.StringIO()) == 0
    rows = cli.csv_payload(out)
    summary = json.loads((tmp_path / "d.csv.summary.json").read_text())
    assert rows[0] == "check_id,claim,parameters,measured,bound,pass"
    assert len(rows) - 1 == len(summary["checks"])
    ids = {json.loads(json.dumps(c))["check_id"] for c in summary["checks"]}
    assert {"hypercontractivity", "sdpi_chiq", "budget", "stationarity", "concentration"} <= ids


def test_determinism_across_runs_and_workers(tmp_path):
    cfg = write(tmp_path, SQUARE.format(replicas=cli.CHUNK + 50, start="exact"))
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert cli.run(cfg, out=a, stdout=io.StringIO()) == 0
    assert cli.run(cfg, out=b, stdout=io.StringIO()) == 0
    assert cli.run(cfg, out=c, workers=2, stdout=io.StringIO()) == 0
    pa = cli.csv_payload(a)
    assert len(pa) == cli.CHUNK + 51
    assert pa == cli.csv_payload(b) == cli.csv_payload(c)
    d = tmp_path / "d.csv"
    cli.run(cfg, out=d, seed=12, stdout=io.StringIO())
    assert cli.csv_payload(d) != pa


def test_warm_start_phases_file(tmp_path):
    cfg = write(tmp_path, SQUARE.format(replicas=100, start="warm-start"))
    out = tmp_path / "w.csv"
    assert cli.run(cfg, out=out, stdout=io.StringIO()) == 0
    lines = (tmp_path / "w.csv.phases.csv").read_text().splitlines()
    assert lines[0].startswith("phase,sigma2") and lines[1].startswith("init,")
    assert lines[-1].startswith("boost,")


def test_seed_override_validated(tmp_path, capsys):
    cfg = write(tmp_path, BOX10)
    assert cli.run(cfg, seed=-1, out=tmp_path / "o.csv") == 1
    assert "unsigned" in capsys.readouterr().err
