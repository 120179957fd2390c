from __future__ import annotations

import json

import pytest

from medrl.cli import main
from medrl.records import read_jsonl, write_jsonl


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_gen_cases_deterministic(tmp_path, capsys):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    assert main(["gen-cases", "--n", "50", "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen-cases", "--n", "50", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_jsonl(a)) == 50


def test_score_rubric_golden(tmp_path, capsys):
    rubrics = tmp_path / "rubrics.jsonl"
    write_jsonl(rubrics, [
        {"id": "a", "text": "criterion a", "weight": 2},
        {"id": "b", "text": "criterion b", "weight": 3},
        {"id": "c", "text": "criterion c", "weight": -5},
    ])
    sample = tmp_path / "sample.txt"
    sample.write_text("some dialogue", encoding="utf-8")
    code, out, _err = run(
        ["score-rubric", "--rubrics", str(rubrics), "--sample", str(sample),
         "--judge", "double:constant:1"],
        capsys,
    )
    assert code == 0
    body = json.loads(out)
    assert body["task_reward"] == pytest.approx(0.5)


def test_score_fact_golden(tmp_path, capsys):
    traj = tmp_path / "traj.jsonl"
    write_jsonl(traj, [{
        "id": "t1",
        "response": "agent1 blocks target1. agent2 blocks target2.",
        "verdicts": [
            {"claim_text": "agent1 blocks target1", "label": "supported"},
            {"claim_text": "agent2 blocks target2", "label": "refuted"},
        ],
    }])
    code, out, _err = run(
        ["score-fact", "--in", str(traj), "--r-task", "0.9"], capsys
    )
    assert code == 0
    body = json.loads(out.strip())
    assert body["id"] == "t1"
    assert body["r_total"] == pytest.approx(0.4379, abs=1e-3)
    assert body["lambda"] == pytest.approx(0.9241, abs=1e-4)


def test_score_fact_missing_file_exits_1(tmp_path, capsys):
    code, _out, err = run(
        ["score-fact", "--in", str(tmp_path / "nope.jsonl"), "--r-task", "0.9"],
        capsys,
    )
    assert code == 1
    assert "error" in err


def test_advantage_golden(tmp_path, capsys):
    groups = tmp_path / "groups.jsonl"
    write_jsonl(groups, [{
        "group_id": "g1",
        "rollouts": [
            {"r_global": 0.9, "steps": [
                {"index": 0, "violations": []},
                {"index": 1, "violations": ["repetition"]},
            ]},
            {"r_global": 0.5, "steps": [{"index": 0, "violations": []}]},
            {"r_global": 0.1, "steps": [{"index": 0, "violations": []}]},
        ],
    }])
    code, out, _err = run(["advantage", "--in", str(groups)], capsys)
    assert code == 0
    body = json.loads(out.strip())
    adv = body["rollouts"][0]["advantages"]
    assert adv[0] == pytest.approx(1.2247, abs=1e-4)
    assert adv[1] == pytest.approx(-1.2554, abs=1e-4)


def test_distill_loss_golden(tmp_path, capsys):
    records = tmp_path / "logprobs.jsonl"
    write_jsonl(records, [
        {"id": "s1", "student": [-2.0, -0.5], "teacher": [-1.0, -1.0]},
    ])
    code, out, _err = run(
        ["distill-loss", "--in", str(records), "--advantage", "1.0", "--beta", "1.0"],
        capsys,
    )
    assert code == 0
    body = json.loads(out.strip())
    assert body["clip_fkl"] == pytest.approx(1.0)
    assert "mopd" in body and "forward_kl" in body


def test_cache_stats_and_flush(tmp_path, capsys):
    cache_dir = tmp_path / "cache"
    from medrl.factcache import TableVerifier, VerifyCache

    cache = VerifyCache(verifier=TableVerifier(default_label="supported"),
                        persist_dir=cache_dir)
    cache.verify_claim("this claim is persisted")

    code, out, _err = run(["cache", "stats", "--dir", str(cache_dir)], capsys)
    assert code == 0
    assert json.loads(out)["l1_entries"] == 1

    code, out, _err = run(
        ["cache", "flush", "--dir", str(cache_dir), "--level", "both"], capsys
    )
    assert code == 0
    code, out, _err = run(["cache", "stats", "--dir", str(cache_dir)], capsys)
    assert json.loads(out)["l1_entries"] == 0


def test_simulate_then_evaluate_flow(tmp_path, capsys):
    cases = tmp_path / "cases.jsonl"
    transcripts = tmp_path / "transcripts.jsonl"
    report_path = tmp_path / "report.json"
    summary_path = tmp_path / "summary.txt"
    assert main(["gen-cases", "--n", "12", "--seed", "3", "--out", str(cases)]) == 0
    assert main(["simulate", "--cases", str(cases), "--out", str(transcripts),
                 "--seed", "3"]) == 0
    code, out, _err = run(
        ["evaluate", "--cases", str(cases), "--transcripts", str(transcripts),
         "--report", str(report_path), "--summary", str(summary_path)],
        capsys,
    )
    assert code == 0
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["case_count"] == 12
    assert set(report["stations"]) == {"inquiry", "lab_f1", "diagnosis"}
    assert "cases scored: 12" in summary_path.read_text(encoding="utf-8")


def test_pipeline_run_emits_trajectories_and_eval_records(tmp_path, capsys):
    cases = tmp_path / "cases.jsonl"
    traj = tmp_path / "traj.jsonl"
    eval_out = tmp_path / "eval.jsonl"
    assert main(["gen-cases", "--n", "10", "--seed", "5", "--out", str(cases)]) == 0
    code, out, _err = run(
        ["pipeline-run", "--cases", str(cases), "--out", str(traj),
         "--eval-out", str(eval_out), "--seed", "5"],
        capsys,
    )
    assert code == 0
    assert "injected=10" in out
    rows = read_jsonl(traj)
    assert all(r["outcome"] in ("completed", "discarded") for r in rows)
    completed = [r for r in rows if r["outcome"] == "completed"]
    eval_rows = read_jsonl(eval_out)
    assert len(eval_rows) == len(completed)
    if eval_rows:
        assert eval_rows[0]["predicted_icd"]
