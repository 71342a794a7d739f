import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from kcx.cli import run
from kcx.io import load_annotations, load_record
from kcx.synth import SynthSpec, generate

SPEC = {"seed": 4, "duration_s": 90.0, "channel_count": 5,
        "events": {"count": 6, "min_separation_s": 5.0}}


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.json").write_text(json.dumps(SPEC))
    assert run(["synth", "--spec", str(d / "spec.json"), "--out", str(d / "c")]) == 0
    return d


def test_synth_files_match_in_memory(corpus):
    mem = generate(SynthSpec.from_dict(SPEC))
    assert load_record(corpus / "c.eegbin") == mem.record
    assert load_annotations(corpus / "c.txt") == mem.truth
    assert SynthSpec.from_dict(json.loads((corpus / "c.spec.json").read_text())) == mem.spec


def test_synth_requires_out(capsys):
    code, _, err = call(capsys, "synth", "--seed", 1)
    assert code == 1 and "--out" in err


def test_eval_worked_example(tmp_path, capsys):
    truth = np.arange(10) * 10 + 5.3
    det = np.concatenate([truth + 0.2, np.arange(10) * 10 + 7.5])
    (tmp_path / "t.txt").write_text("\n".join(map(str, truth)))
    (tmp_path / "d.json").write_text(json.dumps({"events": [{"t": float(t)} for t in det]}))
    code, out, _ = call(capsys, "eval", "--truth", tmp_path / "t.txt",
                        "--detections", tmp_path / "d.json", "--duration", 100)
    assert code == 0
    res = json.loads(out)
    assert res["tpr_pct"] == 100.0 and res["ppv_pct"] == 50.0
    assert res["fpr_pct"] == pytest.approx(11.1, abs=0.05)


def test_eval_needs_duration(tmp_path, capsys):
    (tmp_path / "t.txt").write_text("1.0\n")
    code, _, err = call(capsys, "eval", "--truth", tmp_path / "t.txt", "--detections", tmp_path / "t.txt")
    assert code == 1 and "--duration" in err


def test_detect_kbp_echoes_defaults(corpus, capsys):
    code, out, _ = call(capsys, "detect", "--algo", "kbp", "--record", corpus / "c.eegbin")
    assert code == 0
    res = json.loads(out)
    p = res["params"]
    assert (p["p_t_p1"], p["p_t_p2"], p["p_t_p3"], p["p_t_p4"], p["p_t_s"], p["v_t"]) == (
        0.81, 0.86, 0.98, 0.89, 0.7, 2)
    assert res["realized_window"] == {"length_samples": 256, "step_samples": 26}
    assert res["provenance"]["tool"] == "kcx"
    assert all("t" in e and "support" in e for e in res["events"])


def test_detect_output_is_byte_identical(corpus, capsys):
    argv = ["detect", "--algo", "kbp", "--record", corpus / "c.eegbin", "--v-t", 3]
    _, a, _ = call(capsys, *argv)
    _, b, _ = call(capsys, *argv, "--threads", 1)
    assert a == b


def test_params_file_and_flag_precedence(corpus, tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"v_t": 1, "p_t_s": 0.9}))
    code, out, _ = call(capsys, "detect", "--algo", "kbp", "--record", corpus / "c.eegbin",
                        "--params", tmp_path / "p.json", "--v-t", 3)
    p = json.loads(out)["params"]
    assert code == 0 and p["v_t"] == 3 and p["p_t_s"] == 0.9


def test_unknown_param_key_is_usage_error(corpus, tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"v_tt": 1}))
    code, _, err = call(capsys, "detect", "--algo", "kbp", "--record", corpus / "c.eegbin",
                        "--params", tmp_path / "p.json")
    assert code == 1 and "v_tt" in err


def test_unknown_flag_and_command(capsys):
    assert call(capsys, "detect", "--bogus")[0] == 1
    assert call(capsys, "frobnicate")[0] == 1


def test_missing_file_is_data_error(tmp_path, capsys):
    code, _, err = call(capsys, "detect", "--algo", "kbp", "--record", tmp_path / "none.eegbin")
    assert code == 2 and "no such file" in err


def test_malformed_record_is_data_error(tmp_path, capsys):
    (tmp_path / "bad.eegbin").write_bytes(b"XXXX" + bytes(40))
    assert call(capsys, "features", "--record", tmp_path / "bad.eegbin")[0] == 2


def test_features_csv(corpus, tmp_path, capsys):
    assert call(capsys, "features", "--record", corpus / "c.eegbin", "--out", tmp_path / "f.csv")[0] == 0
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["channel", "window_index", "center_time_s", "p1", "p2", "p3", "p4", "s"]
    n_windows = (90 * 250 - 256) // 26 + 1
    assert len(rows) == 1 + 5 * n_windows
    assert float(rows[1][2]) == pytest.approx(128 / 250)


def test_thresholds_and_histogram(corpus, tmp_path, capsys):
    code, out, _ = call(capsys, "thresholds", "--record", corpus / "c.eegbin",
                        "--histogram-out", tmp_path / "h.csv", "--bins", 10)
    assert code == 0
    thr = json.loads(out)["thresholds"]
    assert set(thr) == {f"ch{i:02d}" for i in range(5)}
    assert set(thr["ch00"]) == {"p1", "p2", "p3", "p4", "s"}
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert len(rows) == 5 * 5 * 10
    last = [r for r in rows if r["channel"] == "ch00" and r["feature"] == "s"][-1]
    assert float(last["cumulative_fraction"]) == 1.0


def test_calibrate_then_detect_hcm(corpus, tmp_path, capsys):
    code, _, _ = call(capsys, "calibrate", "--algo", "hcm", "--record", corpus / "c.eegbin",
                      "--annotations", corpus / "c.txt", "--out", tmp_path / "store.json")
    assert code == 0
    store = json.loads((tmp_path / "store.json").read_text())
    assert store["spec"]["bins"] == [1, 2, 3, 4, 7] and store["boxes"]
    code, out, _ = call(capsys, "detect", "--algo", "hcm", "--record", corpus / "c.eegbin",
                        "--store", tmp_path / "store.json", "--p-t", 0.8, "--v-t", 2)
    res = json.loads(out)
    assert code == 0 and res["params"]["p_t"] == 0.8 and res["algo"] == "hcm"


def test_detect_hcm_requires_store(corpus, capsys):
    assert call(capsys, "detect", "--algo", "hcm", "--record", corpus / "c.eegbin")[0] == 1


def test_tune_with_holdout_and_trace(corpus, tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps(
        {"records": [{"record": str(corpus / "c.eegbin"), "annotations": str(corpus / "c.txt")}]}))
    grid = {"p_t_p1": [0.9], "p_t_p2": [0.9], "p_t_p3": [0.9], "p_t_p4": [0.9],
            "p_t_s": [0.9, 0.95], "v_t": [2, 3]}
    (tmp_path / "g.json").write_text(json.dumps(grid))
    code, out, _ = call(capsys, "tune", "--dataset", tmp_path / "m.json", "--grid", tmp_path / "g.json",
                        "--holdout", tmp_path / "m.json", "--trace", "--min-tpr", 80)
    assert code == 0
    res = json.loads(out)
    assert res["evaluated_count"] == 4 and len(res["trace"]) == 4
    assert res["evaluated_on"] == "tuning+holdout"
    # holdout on the tuning record reproduces the reported counts
    assert {k: res["holdout"][k] for k in ("tp", "fp", "fn", "tn")} == res["counts"]


def test_tune_bad_grid_key(corpus, tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps([[str(corpus / "c.eegbin"), str(corpus / "c.txt")]]))
    (tmp_path / "g.json").write_text(json.dumps({"nope": [1]}))
    assert call(capsys, "tune", "--dataset", tmp_path / "m.json", "--grid", tmp_path / "g.json")[0] == 1


def test_bench_reports_stages(corpus, capsys):
    code, out, _ = call(capsys, "bench", "--record", corpus / "c.eegbin", "--repetitions", 2)
    res = json.loads(out)
    assert code == 0 and res["repetitions"] == 2
    assert set(res["median_s"]) == {"features", "thresholds", "fusion", "vote", "end_to_end"}


def test_threads_env_fallback(corpus, monkeypatch, capsys):
    monkeypatch.setenv("KCX_THREADS", "3")
    _, out, _ = call(capsys, "bench", "--record", corpus / "c.eegbin", "--repetitions", 1)
    assert json.loads(out)["threads"] == 3
    _, out, _ = call(capsys, "bench", "--record", corpus / "c.eegbin", "--repetitions", 1,
                     "--threads", 2)
    assert json.loads(out)["threads"] == 2


def test_console_script_entry_point(capsys):
    proc = subprocess.run([sys.executable, "-m", "kcx.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "kcx" in proc.stdout
