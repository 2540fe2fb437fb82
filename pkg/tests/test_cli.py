import io
import json
import subprocess
import sys

import pytest

from slpkit import corpus
from slpkit.cli import main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue().splitlines()


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("progs")
    paths = {}
    for name in ("S1", "S2", "S4", "toy_prior"):
        p = d / f"{name}.slp"
        p.write_text(corpus.read_text(f"{name}.slp"))
        paths[name] = str(p)
    (d / "data.txt").write_text(corpus.read_text("s4_data.txt"))
    paths["data"] = str(d / "data.txt")
    (d / "bad.slp").write_text("1 : p(a")
    paths["bad"] = str(d / "bad.slp")
    (d / "unnorm.slp").write_text("0.3 : p(a). 0.6 : p(b).")
    paths["unnorm"] = str(d / "unnorm.slp")
    return paths


def test_check(files):
    code, lines = run("check", files["S1"])
    assert code == 0
    header = json.loads(lines[0])
    assert len(header["sha256"]) == 64 and "limits" in header
    assert "s/2\tsum=1\tok" in lines
    assert lines[-1] == "pure=yes\tstatus=ok"


def test_check_reports_bad_sums(files):
    code, lines = run("check", files["unnorm"])
    assert code == 3
    assert any("BAD" in line for line in lines)


def test_parse_error_exit(files, capsys):
    code, _ = run("check", files["bad"])
    assert code == 2
    assert "expected" in capsys.readouterr().err


def test_exact_s2(files):
    code, lines = run("exact", "--goal", "s(A,[])", files["S2"])
    assert code == 0
    assert lines[1] == "#Z=0.52"
    rows = [line.split("\t") for line in lines[3:]]
    assert len(rows) == 4
    probs = {y: float(p) for y, p, _ in rows}
    assert probs["s([joe,sees,joe],[])"] == pytest.approx(0.048 / 0.52, abs=1e-12)


def test_exact_undetermined(files):
    code, lines = run("exact", "--goal", "s(A,[])", "--max-depth", "2", files["S1"])
    assert code == 4
    assert lines[1] == "#Z=undetermined"


def test_exact_approx_depth(files):
    code, lines = run("exact", "--goal", "s(A,[])", "--approx-depth", "3", files["S1"])
    assert code == 0
    assert lines[1].startswith("#Z>=0.0") and "truncated=yes" in lines[1]


def test_exact_needs_pure_program(files):
    code, _ = run("exact", "--goal", "model(M)", files["S4"])
    assert code == 3


def test_renormalize(files):
    assert run("exact", "--goal", "p(X)", files["unnorm"])[0] == 3
    code, lines = run("exact", "--goal", "p(X)", "--renormalize", files["unnorm"])
    assert code == 0 and lines[1] == "#Z=1.0"


def test_sample_zero(files):
    code, lines = run("sample", "--method", "loglinear", "-n", "0", "--goal", "s(A,[])",
                      files["S2"])
    assert code == 0
    assert len(lines) == 1
    assert isinstance(json.loads(lines[0])["seed"], int)


def test_sample_records(files):
    code, lines = run("sample", "--method", "unif_constrained", "-n", "20", "--seed", "4",
                      "--goal", "s(A,[])", files["S2"])
    assert code == 0
    recs = [json.loads(line) for line in lines[1:]]
    assert len(recs) == 20
    for r in recs:
        assert set(r) == {"method", "status", "yield", "psi", "psi_u", "iw", "depth", "seed"}
        assert r["seed"] == 4
        assert abs(r["psi"] - r["psi_u"] * r["iw"]) <= 1e-12 * r["psi"]


def test_sample_is_byte_identical(files):
    argv = ("sample", "-n", "200", "--seed", "7", "--goal", "s(A,[])", files["S2"])
    assert run(*argv) == run(*argv)


def test_sharded_output_independent_of_jobs(files):
    argv = ["sample", "-n", "300", "--seed", "7", "--shards", "3", "--goal", "s(A,[])",
            files["S2"]]
    one = run(*argv)
    two = run(*argv, "--jobs", "2")
    assert one == two and len(one[1]) == 301


def test_sample_depth_limit_exit(files):
    code, lines = run("sample", "-n", "30", "--seed", "1", "--max-depth", "5",
                      "--goal", "model(M)", files["S4"])
    assert code == 4
    assert any('"depth_exceeded"' in line for line in lines[1:])


def test_unknown_goal_predicate(files):
    assert run("sample", "--goal", "t(X)", files["S1"])[0] == 3


def test_estimate(files):
    code, lines = run("estimate", "--goal", "s(A,[])", "--event", "s([joe,sees,joe],[])",
                      "-n", "5000", "--seed", "2", files["S2"])
    assert code == 0
    est = json.loads(lines[1])
    assert abs(est["value"] - 0.048 / 0.52) <= 4 * est["std_error"]


def test_mcmc_uniform(files):
    code, lines = run("mcmc", "--prior", files["toy_prior"], "--goal", "model(M)",
                      "--steps", "100", "--seed", "5")
    assert code == 0
    trace = [json.loads(line) for line in lines[1:-1]]
    assert len(trace) == 100
    assert set(trace[0]) == {"step", "model", "accepted", "alpha", "n_back", "n_fwd"}
    summary = json.loads(lines[-1])["summary"]
    assert {"acceptances", "rate", "distinct_models", "wall_time"} <= set(summary)


def test_mcmc_noisy(files):
    code, lines = run("mcmc", "--prior", files["S4"], "--goal", "model(M)",
                      "--likelihood", "noisy", "--noise", "0.1", "--data", files["data"],
                      "--steps", "50", "-p", "0.8", "--seed", "6", "--no-trace")
    assert code == 0 and len(lines) == 2
    assert json.loads(lines[0])["noise"] == 0.1
    assert "mean_log_likelihood" in json.loads(lines[1])["summary"]


def test_mcmc_noisy_needs_data(files):
    assert run("mcmc", "--prior", files["toy_prior"], "--goal", "model(M)",
               "--likelihood", "noisy")[0] == 3


def test_mcmc_chains_reproducible(files):
    argv = ("mcmc", "--prior", files["toy_prior"], "--goal", "model(M)", "--steps", "50",
            "--seed", "8", "--chains", "2")
    a = run(*argv)
    b = run(*argv, "--jobs", "2")
    assert a[1][1:-2] == b[1][1:-2]
    assert {json.loads(line)["chain"] for line in a[1][1:-2]} == {0, 1}


def test_console_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "slpkit.cli", "check", files["S2"]],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[-1] == "pure=yes\tstatus=ok"
