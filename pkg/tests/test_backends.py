import json
import math
import time
from fractions import Fraction

import pytest

from adaswitch.actions import ToolContext, execute, parse_action
from adaswitch.backends import (
    AgentProfile,
    BackendError,
    MalformedStepError,
    ReflectionError,
    SyntheticAgentConfig,
    api_key_env,
    load_script,
    make_agent,
    split_reply,
    verdict_probability,
)
from adaswitch.stub_server import StubServer, completion
from adaswitch.synthetic import gen_synthetic_tasks
from adaswitch.trajectory import Author, Step, Trajectory
from helpers import local_profile

TASK = gen_synthetic_tasks(1, 5, seed=4)[0]


def play(agent, task=TASK):
    """Let ``agent`` solve ``task`` alone; returns the trajectory."""
    traj = Trajectory(task.question_id, task.question)
    ctx = ToolContext()
    for _ in range(task.n_steps + 1):
        prop = agent.generate_step(traj)
        obs, ctx = execute(parse_action(prop.action_text), ctx)
        traj = traj.append(Step(traj.next_index, Author.LOCAL, prop.thought, prop.action_text, obs))
    return traj


def test_synthetic_error_free_follows_chain():
    traj = play(make_agent(local_profile(eps=0.0), seed=1))
    assert [Fraction(s.observation) for s in traj.steps[:-1]] == list(TASK.values[1:])
    assert traj.steps[-1].action_text == f"Finish({TASK.values[-1]})"


def test_synthetic_always_wrong():
    traj = play(make_agent(local_profile(eps=1.0), seed=1))
    for t, step in enumerate(traj.steps[:-1]):
        assert Fraction(step.observation) not in TASK.values
    assert Fraction(traj.steps[-1].observation) != TASK.answer


def test_synthetic_fresh_agents_replay_identically():
    a = play(make_agent(local_profile(), seed=5, episode_seed=9))
    b = play(make_agent(local_profile(), seed=5, episode_seed=9))
    assert a == b


def test_synthetic_perfect_detector():
    agent = make_agent(local_profile(eps=1.0, detect=1.0, false_alarm=0.0), seed=2)
    wrong = play(agent)
    good = play(make_agent(local_profile(eps=0.0), seed=2))
    for k in range(1, TASK.n_steps + 1):
        assert agent.reflect(Trajectory("q", TASK.question, wrong.steps[:k])).prob == 1.0
        assert agent.reflect(Trajectory("q", TASK.question, good.steps[:k])).prob == 0.0


def test_synthetic_detection_rates_monte_carlo():
    agent = make_agent(local_profile(eps=0.0, detect=0.8, false_alarm=0.1), seed=3)
    bad_agent = make_agent(local_profile(eps=1.0), seed=3)
    good = Trajectory("q", TASK.question, play(make_agent(local_profile(eps=0.0), seed=0)).steps[:1])
    bad = Trajectory("q", TASK.question, play(bad_agent).steps[:1])
    n = 10_000
    hits = sum(agent.reflect(bad).prob >= 0.5 for _ in range(n)) / n
    alarms = sum(agent.reflect(good).prob >= 0.5 for _ in range(n)) / n
    assert abs(hits - 0.8) <= 0.02
    assert abs(alarms - 0.1) <= 0.02


def test_graded_reflection_separates_at_one_half():
    agent = make_agent(local_profile(eps=1.0, detect=1.0, false_alarm=0.0, reflection="graded"), seed=3)
    traj = play(agent)
    probs = [agent.reflect(Trajectory("q", TASK.question, traj.steps[:1])).prob for _ in range(200)]
    assert min(probs) >= 0.5 and max(probs) < 1.0
    assert len(set(probs)) > 100


def test_synthetic_logprobs_reflect_correctness():
    good = make_agent(local_profile(eps=0.0), seed=1).generate_step(Trajectory("q", TASK.question))
    bad = make_agent(local_profile(eps=1.0), seed=1).generate_step(Trajectory("q", TASK.question))
    mean = lambda lps: math.exp(sum(lps) / len(lps))
    assert mean(good.token_logprobs) > mean(bad.token_logprobs)


def test_synthetic_rejects_foreign_questions():
    with pytest.raises(BackendError):
        make_agent(local_profile()).generate_step(Trajectory("q", "What is the capital of France?"))


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticAgentConfig(step_error_rate=1.5)
    with pytest.raises(ValueError):
        AgentProfile("x", "edge", 1e9)
    with pytest.raises(ValueError):
        AgentProfile("x", "local", 0)


def write_script(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_scripted_replays_and_exhausts(tmp_path):
    path = write_script(
        tmp_path / "s.jsonl",
        [
            {"question_id": "a", "step_index": 0, "thought": "t0", "action": "Calculator(1+1)", "reflect_prob": 0.7},
            {"question_id": "a", "step_index": 1, "thought": "t1", "action": "Finish(2)", "token_logprobs": [-0.1, -0.2]},
        ],
    )
    profile = AgentProfile("s", "local", 1e9, {"kind": "scripted", "fixture_path": str(path)})
    agent = make_agent(profile)
    traj = Trajectory("a", "q")
    first = agent.generate_step(traj)
    assert (first.thought, first.action_text) == ("t0", "Calculator(1+1)")
    assert agent.reflect(traj).prob == 0.7
    second = agent.generate_step(traj)
    assert second.token_logprobs == (-0.1, -0.2) and second.generated_token_count == 2
    assert agent.reflect(traj).prob == 0.0
    with pytest.raises(BackendError):
        agent.generate_step(traj)
    assert set(load_script(path)) == {"a"}


@pytest.mark.parametrize(
    "reply, thought, action",
    [
        ("Thought: add them\nAction: Calculator(1+2)", "add them", "Calculator(1+2)"),
        ("add them\nAction 3: Calculator(1+2)\nObservation: 3", "add them", "Calculator(1+2)"),
        ("Action: Finish(4)", "", "Finish(4)"),
    ],
)
def test_split_reply(reply, thought, action):
    assert split_reply(reply) == (thought, action)


def test_split_reply_malformed():
    with pytest.raises(MalformedStepError):
        split_reply("I think the answer is 4")


def test_verdict_probability_paths():
    body = completion("OK", [("OK", math.log(0.7))], [[("OK", math.log(0.7)), ("WRONG", math.log(0.25))]])
    assert verdict_probability(body["choices"][0]) == pytest.approx(0.25)
    body = completion("OK", [("OK", math.log(0.99))], [[("OK", math.log(0.99))]])
    assert verdict_probability(body["choices"][0]) == 0.0
    assert verdict_probability(completion("score: 0.35")["choices"][0]) == pytest.approx(0.35)
    with pytest.raises(ReflectionError):
        verdict_probability(completion("no idea")["choices"][0])


def remote(base_url, **backend):
    opts = {"kind": "remote", "base_url": base_url, "model": "m-1", "timeout": 1.0, "retries": 2, **backend}
    return make_agent(AgentProfile("edge-1", "local", 1e9, opts))


def test_remote_request_shape_and_extraction(monkeypatch):
    monkeypatch.setenv(api_key_env("edge-1"), "sekret")
    with StubServer() as srv:
        srv.enqueue(completion("Thought: double it\nAction: Calculator(2*3)", [("Action", -0.1), (":", -0.2), ("x", -0.3)]))
        srv.enqueue(completion("WRONG", [("WRONG", math.log(0.8))], [[("WRONG", math.log(0.8)), ("OK", math.log(0.2))]]))
        agent = remote(srv.base_url)
        traj = Trajectory("q", "What is 2*3?")
        prop = agent.generate_step(traj)
        assert (prop.thought, prop.action_text) == ("double it", "Calculator(2*3)")
        assert prop.token_logprobs == (-0.1, -0.2, -0.3)
        traj = traj.append(Step(0, Author.LOCAL, prop.thought, prop.action_text, "6"))
        assert agent.reflect(traj).prob == pytest.approx(0.8)

        gen, refl = srv.requests
        assert gen.path == "/v1/chat/completions"
        assert gen.headers["Authorization"] == "Bearer sekret"
        assert set(gen.body) == {"model", "messages", "temperature", "max_tokens", "logprobs"}
        assert gen.body["model"] == "m-1" and gen.body["logprobs"] is True
        assert [m["role"] for m in gen.body["messages"]] == ["system", "user"]
        assert gen.body["messages"][1]["content"] == "Question: What is 2*3?\nThought 0:"
        assert refl.body["top_logprobs"] == 5 and refl.body["max_tokens"] == 1
        assert refl.body["messages"][1]["content"].endswith("Observation 0: 6\nCheck 0:")


def test_remote_retries_server_errors():
    with StubServer() as srv:
        srv.enqueue({"error": "busy"}, status=503)
        srv.enqueue({"error": "slow down"}, status=429)
        srv.enqueue(completion("Action: Finish(1)"))
        prop = remote(srv.base_url).generate_step(Trajectory("q", "x"))
        assert prop.action_text == "Finish(1)"
        assert len(srv.requests) == 3


def test_remote_gives_up_after_retries():
    with StubServer() as srv:
        for _ in range(3):
            srv.enqueue({"error": "down"}, status=500)
        with pytest.raises(BackendError):
            remote(srv.base_url).generate_step(Trajectory("q", "x"))
        assert len(srv.requests) == 3


def test_remote_client_error_is_not_retried():
    with StubServer() as srv:
        srv.enqueue({"error": "bad"}, status=400)
        with pytest.raises(BackendError):
            remote(srv.base_url).generate_step(Trajectory("q", "x"))
        assert len(srv.requests) == 1


def test_remote_timeout_budget():
    with StubServer() as srv:
        for _ in range(5):
            srv.enqueue(completion("Action: Finish(1)"), delay=1.0)
        agent = remote(srv.base_url, timeout=0.2, retries=2)
        start = time.monotonic()
        with pytest.raises(BackendError):
            agent.generate_step(Trajectory("q", "x"))
        elapsed = time.monotonic() - start
        assert elapsed <= 0.2 * 3 + 0.3
        assert len(srv.requests) == 3


def test_remote_malformed_reply():
    with StubServer() as srv:
        srv.enqueue(completion("I would rather not."))
        with pytest.raises(MalformedStepError):
            remote(srv.base_url).generate_step(Trajectory("q", "x"))
