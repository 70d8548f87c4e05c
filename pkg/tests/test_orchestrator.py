import json
from dataclasses import replace

import pytest

from adaswitch.backends import AgentProfile, make_agent
from adaswitch.data import DatasetRecord
from adaswitch.orchestrator import InferenceConfig, Mode, run_batch, run_inference
from adaswitch.policy import Adaptive, Always, Confidence, Never, Sequential
from adaswitch.synthetic import gen_synthetic_tasks
from adaswitch.trajectory import Author, Outcome, serialize_trajectory
from helpers import cloud_profile, local_profile

TASKS = gen_synthetic_tasks(100, 5, seed=11)
RECORDS = [t.record() for t in TASKS]


def agents(local, cloud, seed=1):
    return make_agent(local, seed, seed), make_agent(cloud, seed + 1, seed)


def test_local_only_error_free():
    rec = gen_synthetic_tasks(1, 3, seed=2)[0].record()
    local, cloud = agents(local_profile(eps=0.0), cloud_profile())
    result = run_inference(rec, local, None, InferenceConfig(Mode.LOCAL_ONLY))
    assert result.trajectory.outcome is Outcome.CORRECT
    assert result.escalation_count == 0
    assert list(result.cost.agents) == ["local"]


def test_perfect_cloud_replaces_every_wrong_step():
    task = TASKS[0]
    local, cloud = agents(local_profile(eps=1.0, detect=1.0, false_alarm=0.0), cloud_profile(eps=0.0))
    result = run_inference(task.record(), local, cloud, InferenceConfig(Mode.ADASWITCH, Adaptive(0.5)))
    traj = result.trajectory
    assert traj.outcome is Outcome.CORRECT
    assert result.escalation_count == task.n_steps
    erased = [s for s in traj.steps if s.erased]
    assert len(erased) == task.n_steps and all(s.author is Author.LOCAL for s in erased)
    for pos, step in enumerate(traj.steps):
        if step.erased:
            nxt = traj.steps[pos + 1]
            assert (nxt.index, nxt.author, nxt.erased) == (step.index, Author.CLOUD, False)
    traj.validate()


def test_never_policy_matches_local_only():
    for rec in RECORDS[:20]:
        a = run_inference(rec, *agents(local_profile(), cloud_profile(), 3), InferenceConfig(Mode.LOCAL_ONLY))
        b = run_inference(rec, *agents(local_profile(), cloud_profile(), 3), InferenceConfig(Mode.ADASWITCH, Never()))
        assert serialize_trajectory(a.trajectory, True) == serialize_trajectory(b.trajectory, True)
        assert (a.trajectory.final_answer, a.trajectory.outcome) == (b.trajectory.final_answer, b.trajectory.outcome)
        assert b.escalation_count == 0


def test_self_reflection_retries_locally():
    local, _ = agents(local_profile(eps=1.0, detect=1.0, false_alarm=0.0), cloud_profile())
    cfg = InferenceConfig(Mode.SELF_REFLECTION, Adaptive(0.5), max_self_retries=2)
    result = run_inference(TASKS[0].record(), local, None, cfg)
    traj = result.trajectory
    assert all(s.author is Author.LOCAL for s in traj.steps)
    # every step, Finish included, is wrong: first try + two retries, the last kept
    n = TASKS[0].n_steps + 1
    assert sum(s.erased for s in traj.steps) == 2 * n
    assert result.generation_calls == 3 * n
    assert traj.outcome is Outcome.WRONG


def test_max_steps_leaves_run_unanswered():
    local, _ = agents(local_profile(eps=0.0), cloud_profile())
    result = run_inference(TASKS[0].record(), local, None, InferenceConfig(Mode.LOCAL_ONLY, max_steps=3))
    assert result.trajectory.outcome is Outcome.UNANSWERED
    assert result.trajectory.next_index == 3


def test_cloud_required():
    local, _ = agents(local_profile(), cloud_profile())
    with pytest.raises(ValueError):
        run_inference(RECORDS[0], local, None, InferenceConfig(Mode.ADASWITCH))


def script(tmp_path, name, rows):
    path = tmp_path / f"{name}.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def scripted(name, role, params, path):
    return AgentProfile(name, role, params, {"kind": "scripted", "fixture_path": str(path)})


def test_scripted_cost_is_hand_summed(tmp_path):
    local = scripted("small", "local", 1e9, script(tmp_path, "l", [
        {"question_id": "q", "step_index": 0, "thought": "a", "action": "Calculator(1+1)",
         "reflect_prob": 0.9, "token_logprobs": [-0.1, -0.1, -0.1]},
        {"question_id": "q", "step_index": 1, "thought": "b", "action": "Finish(2)",
         "reflect_prob": 0.0, "token_logprobs": [-0.1, -0.1]},
    ]))
    cloud = scripted("big", "cloud", 30e9, script(tmp_path, "c", [
        {"question_id": "q", "step_index": 0, "thought": "c", "action": "Calculator(1+1)", "token_logprobs": [-0.1] * 5},
    ]))
    rec = DatasetRecord("q", "What is 1+1?", "", "2")
    results, summary = run_batch(
        [rec], local, cloud, InferenceConfig(Mode.ADASWITCH, Adaptive(0.5)), estimator=lambda text: 10
    )
    cost = results[0].cost
    # local: gen 10+3, reflect 10+1, gen 10+2, reflect 10+1; cloud: gen 10+5
    assert cost.agents["small"].flops == 2 * 1e9 * (13 + 11 + 12 + 11)
    assert cost.agents["big"].flops == 2 * 30e9 * 15
    assert cost.total_flops == 9.94e11
    assert summary.total_flops == cost.total_flops
    assert results[0].trajectory.outcome is Outcome.CORRECT
    assert results[0].escalation_count == 1


def test_malformed_actions_use_retry_budget(tmp_path):
    local = scripted("small", "local", 1e9, script(tmp_path, "l", [
        {"question_id": "q", "step_index": 0, "thought": "a", "action": "Jump(1)"},
        {"question_id": "q", "step_index": 0, "thought": "a", "action": "Calculator(2+x)"},
        {"question_id": "q", "step_index": 0, "thought": "a", "action": "Count(a,,b)"},
        {"question_id": "q", "step_index": 1, "thought": "b", "action": "Finish(2)"},
    ]))
    rec = DatasetRecord("q", "What is 1+1?", "", "2")
    results, _ = run_batch([rec], local, None, InferenceConfig(Mode.LOCAL_ONLY, max_self_retries=2))
    traj = results[0].trajectory
    assert results[0].generation_calls == 4
    assert traj.steps[0].action_text == "Count(a,,b)"
    assert traj.steps[0].observation.startswith("tool error:")
    assert traj.outcome is Outcome.CORRECT


def test_backend_failure_is_isolated(tmp_path):
    rows = [
        {"question_id": r.question_id, "step_index": 0, "thought": "t", "action": f"Finish({r.answer})"}
        for r in RECORDS[:99]
    ]
    local = scripted("small", "local", 1e9, script(tmp_path, "l", rows))
    results, summary = run_batch(RECORDS, local, None, InferenceConfig(Mode.LOCAL_ONLY))
    assert len(results) == 100
    failed = [r for r in results if r.error]
    assert [r.trajectory.question_id for r in failed] == [RECORDS[99].question_id]
    assert failed[0].trajectory.outcome is Outcome.UNANSWERED
    assert summary.failures == 1 and summary.accuracy == 0.99


def test_missing_signal_aborts_run(tmp_path):
    local = scripted("small", "local", 1e9, script(tmp_path, "l", [
        {"question_id": "q", "step_index": 0, "thought": "a", "action": "Finish(2)"},
    ]))
    cloud = scripted("big", "cloud", 30e9, script(tmp_path, "c", []))
    rec = DatasetRecord("q", "x", "", "2")
    results, _ = run_batch([rec], local, cloud, InferenceConfig(Mode.ADASWITCH, Confidence(0.5)))
    assert results[0].error.startswith("MissingSignalError")
    assert results[0].trajectory.outcome is Outcome.UNANSWERED


def test_empty_batch():
    results, summary = run_batch([], local_profile(), cloud_profile(), InferenceConfig())
    assert results == [] and summary.total_flops == 0 and summary.n == 0


def test_parallelism_does_not_change_results():
    cfg = InferenceConfig(Mode.ADASWITCH, Adaptive(0.5))
    one, s1 = run_batch(RECORDS, local_profile(), cloud_profile(), cfg, seed=17, parallelism=1)
    eight, s8 = run_batch(RECORDS, local_profile(), cloud_profile(), cfg, seed=17, parallelism=8)
    assert [r.to_json() for r in one] == [r.to_json() for r in eight]
    assert s1 == s8


def test_degenerate_thresholds_match_always_and_never():
    base = InferenceConfig(Mode.ADASWITCH)
    cost = lambda policy: run_batch(RECORDS, local_profile(), cloud_profile(), replace(base, policy=policy), seed=5)[1]
    assert cost(Adaptive(0.0)).total_flops == cost(Always()).total_flops
    assert cost(Adaptive(1.01)).total_flops == cost(Never()).total_flops


def test_sequential_escalates_every_kth_decision():
    cfg = InferenceConfig(Mode.ADASWITCH, Sequential(2))
    results, _ = run_batch(RECORDS[:10], local_profile(), cloud_profile(), cfg, seed=1)
    for r in results:
        escalated = sorted(s.index for s in r.trajectory.steps if s.erased)
        assert escalated == [i for i in range(r.trajectory.next_index) if (i + 1) % 2 == 0]


def test_estimator_changes_cost_not_trajectories():
    cfg = InferenceConfig(Mode.ADASWITCH, Adaptive(0.5))
    a, _ = run_batch(RECORDS[:10], local_profile(), cloud_profile(), cfg)
    b, _ = run_batch(RECORDS[:10], local_profile(), cloud_profile(), cfg, estimator=lambda t: len(t))
    assert [r.trajectory for r in a] == [r.trajectory for r in b]
    assert [r.cost.total_flops for r in a] != [r.cost.total_flops for r in b]
