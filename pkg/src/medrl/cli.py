"""Command-line entry points.

Exit codes: 0 on success, 1 on runtime failure (message on stderr), 2 on
usage errors. All randomness flows from an explicit --seed, so any command
run twice with the same arguments produces byte-identical output files.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .advantages import build_taxonomy, InteractionStep, step_advantages, violations_from_names
from .backends import resolve_judge
from .casegen import generate_cases, write_cases
from .claims import AtomicClaim, split_sentences
from .config import EngineConfig
from .distill import TokenLogProbs, clip_fkl_loss, forward_kl_loss, mopd_objective
from .embedding import HashEmbedder
from .errors import EngineError
from .factcache import CacheLevel, VerdictLabel, VerifyCache
from .factreward import cluster_claims, fact_aware_reward
from .pipeline import (
    CaseRoutingPolicy,
    ConsultPipeline,
    ScriptedConsultPolicy,
    SeededStageVerifier,
    eval_record_from_context,
    trajectory_record,
)
from .records import SCHEMA_VERSION, dumps_record, read_jsonl, write_jsonl
from .reporting import build_report, render_summary
from .rubric import RubricSet, evaluate_sample
from .scripted import run_scripted_session


def _load_config(args) -> EngineConfig:
    if getattr(args, "config", None):
        return EngineConfig.load(args.config)
    return EngineConfig.from_env()


def cmd_serve(args) -> int:
    from .service import serve

    config = _load_config(args)
    if args.seed is not None:
        config.seed = args.seed
    serve(config, host=args.host, port=args.port)
    return 0


def cmd_score_rubric(args) -> int:
    rubric_set = RubricSet.load(args.rubrics)
    if args.sample:
        sample = Path(args.sample).read_text(encoding="utf-8")
    else:
        sample = args.text or ""
    judge = resolve_judge(args.judge)
    decisions, reward = evaluate_sample(sample, rubric_set, judge,
                                        parallelism=args.parallelism)
    print(dumps_record({
        "schema_version": SCHEMA_VERSION,
        "task_reward": reward,
        "decisions": [
            {"clause_id": d.clause_id, "satisfied": d.satisfied} for d in decisions
        ],
    }))
    return 0


def cmd_score_fact(args) -> int:
    config = _load_config(args)
    embedder = HashEmbedder()
    out_lines = []
    for record in read_jsonl(args.in_path):
        verdicts = record.get("verdicts", [])
        claims = [
            AtomicClaim(text=v["claim_text"], source_span=(i, i + 1), order_index=i)
            for i, v in enumerate(verdicts)
        ]
        labels = [VerdictLabel(v["label"]) for v in verdicts]
        clusters = cluster_claims(
            claims, labels, split_sentences(record.get("response", "")),
            embedder, threshold=config.thresholds.claim_cluster,
        )
        r_task = record.get("r_task", args.r_task)
        if r_task is None:
            raise EngineError("no r_task on the record and no --r-task given")
        breakdown = fact_aware_reward(
            float(r_task), clusters,
            tau_min=config.thresholds.gate_tau_min,
            tau_max=config.thresholds.gate_tau_max,
            kappa=config.thresholds.gate_kappa,
            eps=config.thresholds.fact_eps,
        )
        out = {"schema_version": SCHEMA_VERSION, "id": record.get("id")}
        out.update(breakdown.as_record())
        out_lines.append(out)
    _emit(out_lines, args.out)
    return 0


def cmd_advantage(args) -> int:
    config = _load_config(args)
    taxonomy = build_taxonomy(config.violation_taxonomy)
    out_lines = []
    for record in read_jsonl(args.in_path):
        group = [r["r_global"] for r in record["rollouts"]]
        rollouts = []
        for rollout in record["rollouts"]:
            steps = [
                InteractionStep(
                    index=s.get("index", i),
                    user_turn=s.get("user_turn", ""),
                    assistant_turn=s.get("assistant_turn", ""),
                    violations=violations_from_names(
                        s.get("violations", []), taxonomy
                    ),
                )
                for i, s in enumerate(rollout["steps"])
            ]
            advantages = step_advantages(
                steps, rollout["r_global"], group,
                eps=config.thresholds.advantage_eps,
            )
            rollouts.append(
                {"r_global": rollout["r_global"], "advantages": advantages}
            )
        out_lines.append({
            "schema_version": SCHEMA_VERSION,
            "group_id": record.get("group_id"),
            "rollouts": rollouts,
        })
    _emit(out_lines, args.out)
    return 0


def cmd_pipeline_run(args) -> int:
    config = _load_config(args)
    cases = read_jsonl(args.cases)
    policies = {
        case["case_id"]: ScriptedConsultPolicy(case, seed=args.seed)
        for case in cases
    }
    pipeline = ConsultPipeline(
        policy=CaseRoutingPolicy(policies),
        verifier=SeededStageVerifier(base_seed=args.seed),
        tau=args.tau if args.tau is not None else config.thresholds.stage_gate_tau,
    )
    for case in cases:
        pipeline.inject_case(case["case_id"], f"Case {case['case_id']}: {case['intake']}")
    stats = pipeline.run(slots=args.slots)
    if not stats.balanced(pipeline.pool):
        raise EngineError("pipeline accounting is out of balance")

    trajectories = [trajectory_record(c.context, c.score, "completed")
                    for c in pipeline.completed]
    trajectories += [trajectory_record(d.context, d.score, "discarded")
                     for d in pipeline.discard_log]
    write_jsonl(args.out, trajectories)
    if args.eval_out:
        eval_records = [
            {"schema_version": SCHEMA_VERSION, **eval_record_from_context(c.context)}
            for c in pipeline.completed
        ]
        write_jsonl(args.eval_out, eval_records)
    print(f"injected={stats.injected} completed={stats.completed} "
          f"discarded={stats.discarded}")
    return 0


def cmd_simulate(args) -> int:
    cases = read_jsonl(args.cases)
    records = [run_scripted_session(case, seed=args.seed) for case in cases]
    write_jsonl(args.out, records)
    print(f"sessions={len(records)}")
    return 0


def cmd_evaluate(args) -> int:
    cases = read_jsonl(args.cases)
    transcripts = read_jsonl(args.transcripts)
    scan_rubrics = None
    judge = None
    if args.scan_rubrics:
        # JSON mapping of dimension name -> rubric file
        mapping = json.loads(Path(args.scan_rubrics).read_text(encoding="utf-8"))
        scan_rubrics = {dim: RubricSet.load(path) for dim, path in mapping.items()}
        judge = resolve_judge(args.judge)
    report = build_report(cases, transcripts, scan_rubrics=scan_rubrics, judge=judge)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    summary = render_summary(report)
    if args.summary:
        Path(args.summary).write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)
    return 0


def cmd_distill_loss(args) -> int:
    out_lines = []
    for record in read_jsonl(args.in_path):
        t = TokenLogProbs.from_lists(
            record["student"], record["teacher"], record.get("mask")
        )
        out = {
            "schema_version": SCHEMA_VERSION,
            "id": record.get("id"),
            "clip_fkl": clip_fkl_loss(t),
            "forward_kl": forward_kl_loss(t),
        }
        if args.advantage is not None:
            out["mopd"] = mopd_objective(t, args.advantage, args.beta)
        out_lines.append(out)
    _emit(out_lines, args.out)
    return 0


def cmd_cache(args) -> int:
    cache = VerifyCache(persist_dir=args.dir)
    if args.cache_cmd == "stats":
        stats = cache.cache_stats()
        print(dumps_record({
            "schema_version": SCHEMA_VERSION,
            "l1_entries": cache.l1_size,
            "l2_entries": cache.l2_size,
            "lookups": stats.lookups,
            "l1_hits": stats.l1_hits,
            "l2_hits": stats.l2_hits,
            "external_calls": stats.external_calls,
            "hit_rate": stats.hit_rate,
        }))
        return 0
    cache.cache_flush(CacheLevel(args.level))
    print(f"flushed {args.level}")
    return 0


def cmd_gen_cases(args) -> int:
    cases = generate_cases(args.n, args.seed)
    write_cases(args.out, cases)
    print(f"cases={len(cases)}")
    return 0


def _emit(lines: list[dict], out_path: str | None) -> None:
    if out_path:
        write_jsonl(out_path, lines)
    else:
        for line in lines:
            print(dumps_record(line))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medrl",
        description="Reward, verification, and orchestration engine for "
                    "multi-turn medical dialogue RL.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed_default=0):
        p.add_argument("--config", help="engine config file (YAML)")
        p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("serve", help="run the HTTP service")
    add_common(p, seed_default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("score-rubric", help="score a sample against a rubric file")
    add_common(p)
    p.add_argument("--rubrics", required=True)
    p.add_argument("--sample", help="file with the dialogue or response text")
    p.add_argument("--text", help="inline sample text")
    p.add_argument("--judge", default="double:constant:1")
    p.add_argument("--parallelism", type=int, default=8)
    p.set_defaults(func=cmd_score_rubric)

    p = sub.add_parser("score-fact", help="fact-aware reward over trajectory records")
    add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--r-task", dest="r_task", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score_fact)

    p = sub.add_parser("advantage", help="step advantages for rollout groups")
    add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_advantage)

    p = sub.add_parser("pipeline-run", help="run cases through the staged pipeline")
    add_common(p)
    p.add_argument("--cases", required=True)
    p.add_argument("--out", required=True, help="trajectory records file")
    p.add_argument("--eval-out", dest="eval_out", help="evaluation records file")
    p.add_argument("--slots", type=int, default=4)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_pipeline_run)

    p = sub.add_parser("simulate", help="scripted physician vs patient simulator")
    add_common(p)
    p.add_argument("--cases", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score transcripts against cases")
    add_common(p)
    p.add_argument("--cases", required=True)
    p.add_argument("--transcripts", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--summary")
    p.add_argument("--scan-rubrics", dest="scan_rubrics",
                   help="JSON file mapping scan dimension -> rubric file")
    p.add_argument("--judge", default="double:constant:1",
                   help="judge backend for scan dimension scoring")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("distill-loss", help="distillation losses over log-prob records")
    add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--advantage", type=float, default=None)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_distill_loss)

    p = sub.add_parser("cache", help="inspect or flush the persisted claim cache")
    p.add_argument("cache_cmd", choices=["stats", "flush"])
    p.add_argument("--dir", required=True)
    p.add_argument("--level", default="both", choices=["l1", "l2", "both"])
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("gen-cases", help="generate synthetic case files")
    add_common(p, seed_default=7)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_cases)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
