from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nileztn.netsim import (EPISODE_HEADER, LinkConfig, LinkEnv, ShapingAction, TraceError,
                            apply_shaping, fixed_rate_policy, generate_trace, make_actions,
                            read_episode_rows, read_trace_csv, run_episode, write_episode_csv,
                            write_trace_csv)


def test_trace_blocks_and_bounds():
    tr = generate_trace(7, 300, 250, 600, 5)
    s = tr.as_array()
    assert len(tr) == 300 and tr.bounds == (250.0, 600.0)
    assert s.min() >= 250 and s.max() <= 600
    blocks = s.reshape(60, 5)
    assert np.all(blocks == blocks[:, :1])


def test_trace_degenerate_interval():
    assert set(generate_trace(1, 50, 400, 400, 3).samples) == {400.0}


def test_trace_seeded():
    assert generate_trace(3, 100).samples == generate_trace(3, 100).samples
    assert generate_trace(3, 100).samples != generate_trace(4, 100).samples


@pytest.mark.parametrize("kw", [dict(cap_min=500, cap_max=400), dict(cap_min=-1),
                                dict(length=0), dict(hold=0)])
def test_trace_invalid(kw):
    with pytest.raises(TraceError):
        generate_trace(0, **{"length": 10, **kw})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 60), st.floats(0, 1000), st.floats(0, 1000),
       st.integers(1, 9))
def test_trace_within_bounds(seed, length, a, b, hold):
    lo, hi = min(a, b), max(a, b)
    tr = generate_trace(seed, length, lo, hi, hold)
    assert len(tr) == length
    assert all(lo <= x <= hi for x in tr.samples)


def test_shaping_rate_limited_band():
    a = ShapingAction(0, 300, 30)
    for seed in range(50):
        assert 286 <= apply_shaping(600, a, seed) <= 291


def test_shaping_capacity_limited_band():
    a = ShapingAction(0, 300, 30)
    for seed in range(50):
        assert 189 <= apply_shaping(200, a, seed) <= 194


def test_shaping_dead_link():
    assert apply_shaping(0, ShapingAction(0, 300, 30), 1) == 0.0


def test_shaping_rejects_negative_capacity():
    with pytest.raises(ValueError):
        apply_shaping(-1, ShapingAction(0, 300, 30), 0)


def test_action_rate_positive():
    with pytest.raises(ValueError):
        ShapingAction(0, 0.0, 0.0)
    acts = make_actions([100, 200])
    assert [(a.id, a.rate_kbps, a.burst_kbps) for a in acts] == [(0, 100, 10), (1, 200, 20)]


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 2000), st.floats(0.001, 2000), st.integers(0, 2**32 - 1))
def test_shaping_never_exceeds_physical_bound(cap, rate, seed):
    b = apply_shaping(cap, ShapingAction(0, rate, rate / 10), seed)
    assert 0.0 <= b <= min(cap, rate)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2000), st.floats(0.001, 2000), st.floats(0.001, 2000), st.integers(0, 2**32 - 1))
def test_shaping_monotone_in_rate(cap, r1, r2, seed):
    lo, hi = sorted((r1, r2))
    assert (apply_shaping(cap, ShapingAction(0, lo, 0), seed)
            <= apply_shaping(cap, ShapingAction(0, hi, 0), seed))


def test_episode_constant_capacity_all_satisfied():
    tr = generate_trace(0, 40, 600, 600, 5)
    ep = run_episode(tr, fixed_rate_policy(ShapingAction(0, 350, 35)), 300, seed=2)
    assert len(ep.steps) == 40
    assert ep.rewards == [1] * 40
    assert np.all(ep.observed >= 334)


def test_episode_low_rate_never_satisfies():
    ep = run_episode(generate_trace(1, 30), fixed_rate_policy(ShapingAction(0, 100, 10)), 300)
    assert ep.rewards == [-1] * 30


def test_episode_policy_error_propagates():
    class Boom(RuntimeError):
        pass

    def policy(window):
        raise Boom("no decision")

    with pytest.raises(Boom):
        run_episode(generate_trace(0, 5), policy, 300)


def test_episode_seeded_and_rewards_binary():
    acts = make_actions()
    rng = np.random.default_rng(5)
    choices = rng.integers(len(acts), size=50)

    def policy_factory():
        it = iter(choices)
        return lambda w: fixed_rate_policy(acts[next(it)])(w)

    tr = generate_trace(11, 50)
    a = run_episode(tr, policy_factory(), 300, seed=9)
    b = run_episode(tr, policy_factory(), 300, seed=9)
    assert a.steps == b.steps
    assert set(a.rewards) <= {-1, 1}
    for s in a.steps:
        assert s.state.observed_kbps <= min(s.state.capacity_kbps, s.state.shaped_rate_kbps)


def test_monitored_history_independent_of_action():
    tr = generate_trace(2, 20)
    link = LinkConfig()
    e1 = LinkEnv(tr, link, np.random.default_rng(4))
    e2 = LinkEnv(tr, link, np.random.default_rng(4))
    for t in range(20):
        e1.step(ShapingAction(0, 100, 10))
        e2.step(ShapingAction(0, 550, 55))
    assert e1.history == e2.history
    assert len(e1.window()) == link.history_len
    # history holds the unshaped measurement: capacity * eta - eps
    for c, h in zip(tr.samples, e1.history[link.history_len:]):
        assert c * 0.97 - 5 <= h <= c * 0.97


def test_trace_and_episode_csv(tmp_path):
    tr = generate_trace(5, 25)
    write_trace_csv(tr, tmp_path / "t.csv")
    back = read_trace_csv(tmp_path / "t.csv", tr.bounds)
    assert back.samples == tr.samples
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,capacity_kbps"

    ep = run_episode(tr, fixed_rate_policy(ShapingAction(3, 300, 30)), 300, seed=1)
    write_episode_csv(ep, tmp_path / "e.csv")
    rows = read_episode_rows(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == ",".join(EPISODE_HEADER)
    assert [r["observed_kbps"] for r in rows] == list(ep.observed)
    assert all((r["reward"] == 1) == (r["delta"] == 1) for r in rows)
    assert all(math.isnan(r["predicted_kbps"]) for r in rows)


def test_trace_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,cap\n0,1\n")
    with pytest.raises(TraceError):
        read_trace_csv(p)
    p.write_text("t,capacity_kbps\n")
    with pytest.raises(TraceError):
        read_trace_csv(p)
