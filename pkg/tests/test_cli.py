import csv
import io
import json
import math
import shutil
import subprocess

import pytest

from ldpm import channel as ch
from ldpm.cli import main


def run(capsys, *argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_cfg(tmp_path, text):
    path = tmp_path / "plan.cfg"
    path.write_text(text)
    return str(path)


MINIMAL = """\
# smallest useful sweep
protocol = rr_mean
n = 200
trials = 1
seed = 4
"""


def test_simulate_missing_config_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", str(tmp_path / "nope.cfg"))
    assert code == 2
    assert "cannot read config" in err


def test_simulate_minimal_config_one_row(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", write_cfg(tmp_path, MINIMAL))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1
    assert rows[0]["n"] == "200"


def test_simulate_rejects_unknown_key(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", write_cfg(tmp_path, MINIMAL + "colour = blue\n"))
    assert code == 2
    assert "colour" in err


def test_simulate_assert_exit_3(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "protocol = rr_mean\nn = 20\ntrials = 200\nbeta = 1e-9\n")
    code, _, err = run(capsys, "simulate", cfg, "--assert")
    assert code == 3
    assert "exceeds beta" in err


def test_simulate_overrides_and_outputs(capsys, tmp_path):
    csv_path = tmp_path / "out.csv"
    json_path = tmp_path / "out.json"
    cfg = write_cfg(tmp_path, MINIMAL + f"csv = {csv_path}\njson = {json_path}\n")
    code, out, _ = run(capsys, "simulate", cfg, "--set", "n=100,400", "--set", "trials=3")
    assert code == 0 and out == ""
    assert len(list(csv.DictReader(csv_path.open()))) == 2
    assert json.loads(json_path.read_text())["plan"]["trials"] == 3


def test_simulate_seed_determines_output(capsys, tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL.replace("trials = 1", "trials = 5"))
    _, a, _ = run(capsys, "simulate", cfg, "--seed", "9")
    _, b, _ = run(capsys, "simulate", cfg, "--seed", "9")
    _, c, _ = run(capsys, "simulate", cfg, "--seed", "10")
    assert a == b != c


def test_verify_binomial(capsys):
    code, out, _ = run(capsys, "verify", "binomial", "--n", "931", "--m", "116")
    assert code == 0
    doc = json.loads(out)
    assert doc["pass"] and doc["margin_or_fraction"] <= 0
    code, out, _ = run(capsys, "verify", "binomial", "--n", "10", "--m", "0")
    assert code == 0
    assert "out-of-range" in json.loads(out)["details"]["note"]


def test_verify_kov(capsys):
    code, out, _ = run(capsys, "verify", "kov", "--eps", "1", "--trials", "100")
    assert code == 0
    assert json.loads(out)["margin_or_fraction"] < 1e-9


def test_verify_amplification(capsys):
    code, out, _ = run(capsys, "verify", "amplification", "--d", "64", "--eps", "0.5", "--num-h", "10")
    assert code == 0
    assert json.loads(out)["margin_or_fraction"] == 1.0


def test_verify_unknown_claim_exits_2(capsys):
    code, _, _ = run(capsys, "verify", "foo")
    assert code == 2


def test_channel_rr(capsys):
    code, out, _ = run(capsys, "channel", "rr", "--eps", "0")
    assert code == 0
    doc = json.loads(out)
    assert doc["matrix"] == [[0.5, 0.5], [0.5, 0.5]]


def test_channel_measure_from_stdin(capsys, monkeypatch):
    code, out, _ = run(capsys, "channel", "measure", stdin=ch.rr_channel(1.0).to_json(),
                       monkeypatch=monkeypatch)
    assert code == 0
    assert json.loads(out)["epsilon"] == pytest.approx(1.0, abs=1e-12)


def test_channel_embed_on_kary_rr(capsys, monkeypatch):
    code, out, _ = run(capsys, "channel", "kary", "--d", "8", "--eps", "0.5")
    code, out, _ = run(capsys, "channel", "embed", "--d", "8", "--H", "1,2,3,4", stdin=out,
                       monkeypatch=monkeypatch)
    assert code == 0
    assert json.loads(out)["privacy"]["epsilon"] == pytest.approx(0.15029782511280559294, abs=1e-12)


def test_channel_round_trip_through_decompose_and_compose(capsys, monkeypatch, tmp_path):
    code, out, _ = run(capsys, "channel", "rr", "--eps", "0.5")
    rr_weak = tmp_path / "weak.json"
    rr_weak.write_text(out)
    code, post, _ = run(capsys, "channel", "decompose", "--eps", "1", "-i", str(rr_weak))
    assert code == 0
    post_path = tmp_path / "post.json"
    post_path.write_text(post)
    code, out, _ = run(capsys, "channel", "rr", "--eps", "1")
    base_path = tmp_path / "base.json"
    base_path.write_text(out)
    code, out, _ = run(capsys, "channel", "compose", "--post", str(post_path), "--base", str(base_path))
    assert code == 0
    back = ch.Channel.from_json(out)
    assert back.allclose(ch.rr_channel(0.5), atol=1e-12)


def test_channel_errors(capsys, monkeypatch):
    code, _, err = run(capsys, "channel", "rr")
    assert code == 2 and "--eps" in err
    code, _, _ = run(capsys, "channel", "decompose", "--eps", "0.5",
                     stdin=ch.rr_channel(1.0).to_json(), monkeypatch=monkeypatch)
    assert code == 2


def test_attack_dumps_game_result(capsys):
    code, out, _ = run(capsys, "attack", "--protocol", "hst", "--n", "500", "--m", "20", "--d", "8",
                       "--seed", "3")
    assert code == 0
    doc = json.loads(out)
    assert len(doc["corrupt"]) == 20
    c = 1 / math.tanh(0.5)
    assert max(abs(x) for x in doc["manipulation_term"]) <= 2 * c * 20 / 500 + 1e-12


def test_attack_bad_arguments(capsys):
    code, _, _ = run(capsys, "attack", "--protocol", "est_inf", "--n", "10", "--d", "3")
    assert code == 2


def test_console_script():
    exe = shutil.which("ldpm")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "verify", "binomial", "--n", "931"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["claim"] == "binomial"
