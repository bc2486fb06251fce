import numpy as np
import pytest

from pbcs.backplay import BackplayConfig, StepCounter, rollout_batch, sample_ball
from pbcs.maze_env import FormatError, open_room
from pbcs.skillchain import (ChainConstructionFailure, Skill, SkillChain, build_chain, chain_from_text,
                             chain_to_text, default_budget, evaluate_chain, execute_chain, run_chain_batch)


def test_single_skill_chain_on_straight_line():
    spec = open_room(2)
    states = np.array([(0.5 + 0.08 * i, 1.0) for i in range(11)])
    chain = build_chain(states, BackplayConfig(), spec, seed=0)
    assert len(chain) == 1 and chain.skills[0].K == 0 and chain.skills[0].T == 10
    # a one-skill chain behaves exactly like the bare policy
    starts = sample_ball(states[0], 0.1, np.random.default_rng(0), 20)
    done, _, _, _ = run_chain_batch(chain, spec, starts, 200)
    reached, _ = rollout_batch(chain.skills[0].policy, starts, states[-1], 0.1, spec, 200)
    assert np.array_equal(done, reached)


def test_chain_on_the_2x2_maze(cell_2x2):
    chain = cell_2x2.chain
    assert chain is not None and chain.skills[0].K == 0
    chain.check_contiguous()
    assert chain.skills[-1].T == len(cell_2x2.trajectory) - 1
    ks = [s.K for s in chain.skills]
    assert ks == sorted(ks) and len(set(ks)) == len(ks)
    assert all(s.p == 1.0 for s in chain.skills)
    for sk in chain.skills:
        assert any(r.saved and r.K == sk.K and r.p_after == 1.0 for r in sk.history)
    successes, steps = evaluate_chain(chain, cell_2x2.spec, 50, np.random.default_rng(123))
    assert successes == 50 and steps > 0


def test_switching_is_monotone(cell_2x2):
    chain = cell_2x2.chain
    starts = sample_ball(chain.skills[0].activation_center, chain.eps, np.random.default_rng(4), 10)
    done, _, traces, idx = run_chain_batch(chain, cell_2x2.spec, starts, default_budget(chain), record=True)
    for seq, tr in zip(idx, traces):
        assert all(a <= b for a, b in zip(seq, seq[1:]))
        assert len(seq) == len(tr)
    ok, trace = execute_chain(chain, cell_2x2.spec, chain.skills[0].activation_center)
    assert ok and len(trace) >= 2


def test_overlapping_balls_take_highest_index():
    spec = open_room(2)
    pol = lambda s: np.zeros_like(s)  # noqa: E731
    from pbcs.agents import Policy
    from pbcs import nn
    actor = nn.MlpParams((2, 2), np.zeros(6), act="tanh", scale=0.1)
    skills = [Skill(Policy(actor), (0.5, 1.0), (0.55, 1.0), 0.1, 0, 1),
              Skill(Policy(actor), (0.55, 1.0), (0.6, 1.0), 0.1, 1, 2),
              Skill(Policy(actor), (0.6, 1.0), (1.5, 1.0), 0.1, 2, 3)]
    chain = SkillChain(skills, 0.1)
    _, _, _, idx = run_chain_batch(chain, spec, np.array([[0.52, 1.0]]), 3, record=True)
    assert idx[0][0] == 2
    assert pol is not None


def test_budget_exhaustion_returns_full_trace():
    spec = open_room(2)
    from pbcs.agents import Policy
    from pbcs import nn
    actor = nn.MlpParams((2, 2), np.zeros(6), act="tanh", scale=0.1)
    chain = SkillChain([Skill(Policy(actor), (0.5, 1.0), (1.5, 1.0), 0.1, 0, 5)], 0.1)
    ok, trace = execute_chain(chain, spec, (0.5, 1.0), step_budget=17)
    assert not ok and len(trace) == 18


def test_chain_failure_names_blocking_index():
    from pbcs.maze_env import MazeSpec
    room = open_room(3)
    c = (1.5, 1.5)
    box = ((1.2, 1.2, 1.8, 1.3), (1.2, 1.7, 1.8, 1.8), (1.2, 1.2, 1.3, 1.8), (1.7, 1.2, 1.8, 1.8))
    spec = MazeSpec(3, room.walls + box, room.target_center)
    states = np.array([(0.5, 0.5), (0.6, 0.6), c])
    with pytest.raises(ChainConstructionFailure) as info:
        build_chain(states, BackplayConfig(alpha=1, beta=5), spec, seed=0)
    assert info.value.T == 2 and info.value.skills_built == 0
    with pytest.raises(ValueError):
        build_chain(states[:1], BackplayConfig(), spec)


def test_chain_text_round_trip(cell_2x2):
    chain = cell_2x2.chain
    back = chain_from_text(chain_to_text(chain))
    assert back.eps == chain.eps and len(back) == len(chain)
    for a, b in zip(chain.skills, back.skills):
        assert (a.K, a.T, a.eps) == (b.K, b.T, b.eps)
        assert a.activation_center == b.activation_center and a.target_center == b.target_center
        assert np.array_equal(a.policy.actor.flat, b.policy.actor.flat)
        assert np.array_equal(a.policy.origin, b.policy.origin)


def test_truncated_chain_file_names_line(cell_2x2):
    lines = chain_to_text(cell_2x2.chain).splitlines()
    with pytest.raises(FormatError) as info:
        chain_from_text("\n".join(lines[:30]), path="c.txt")
    assert "c.txt:" in str(info.value) and info.value.line > 1
    with pytest.raises(FormatError) as info:
        chain_from_text("chain v1 n=1 eps=0.1\n", path="c.txt")
    assert info.value.line == 2


def test_counter_charges_final_eval(cell_2x2):
    c = StepCounter()
    _, steps = evaluate_chain(cell_2x2.chain, cell_2x2.spec, 5, np.random.default_rng(0), counter=c)
    assert c["final_eval"] == steps
