import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feemarket.adversaries import (
    Dist,
    LowerBoundAdversary,
    ReplayError,
    ReplayScenario,
    StochasticModel,
    lower_bound_block,
    replay_blocks,
    sample_stochastic_block,
    scenario_from_json,
    write_blocks,
)
from feemarket.battery import stochastic_case
from feemarket.controllers import ChoiceFunction, StepSchedule
from feemarket.core import validate_instance
from feemarket.evaluation import subgradient
from feemarket.losses import LossSpec, conjugate_argmax
from feemarket.packing import solve_exact
from feemarket.simulation import simulate


def _model(seed=5, n=(0, 5), welfare=None, excl=0.0, m=2):
    limit = np.linspace(1.0, 2.0, m)
    return StochasticModel(
        rng_seed=seed,
        tx_count_range=n,
        welfare_dist=welfare or Dist("uniform", 0.0, 3.0),
        consumption_dist=Dist("uniform", 0.0, 2.5),
        limit=limit,
        loss=LossSpec("quadratic_overage", limit / 2, limit),
        exclusion_prob=excl,
    )


def test_sampling_is_deterministic():
    a = sample_stochastic_block(_model(excl=0.3), 17)
    b = sample_stochastic_block(_model(excl=0.3), 17)
    assert a.dumps() == b.dumps()
    assert sample_stochastic_block(_model(seed=6), 17).dumps() != a.dumps()


def test_single_block_matches_range():
    model = _model(excl=0.4)
    blocks = model.sample_range(3, 5)
    for k, inst in enumerate(blocks):
        assert inst.dumps() == sample_stochastic_block(model, 3 + k).dumps()


def test_empty_mempool():
    inst = sample_stochastic_block(_model(n=(0, 0)), 1)
    assert inst.n == 0
    assert inst.welfare.shape == (0,)
    assert inst.consumption.shape == (2, 0)


def test_block_height_must_be_positive():
    with pytest.raises(ValueError):
        sample_stochastic_block(_model(), 0)
    adv = LowerBoundAdversary(1, [1.0], [2.0], 1.0)
    with pytest.raises(ValueError):
        lower_bound_block(adv, 0)


def test_zero_welfare_gradient_is_supply():
    model = _model(welfare=Dist("constant", 0.0, 0.0), n=(1, 6))
    rng = np.random.default_rng(1)
    for t in range(1, 30):
        inst = sample_stochastic_block(model, t)
        p = rng.uniform(0.01, 2.0, 2)
        assert solve_exact(inst, p).usage.tolist() == [0.0, 0.0]
        assert np.array_equal(subgradient(model.loss, inst, p), conjugate_argmax(model.loss, p))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 19))
def test_samples_respect_column_caps(seed, k):
    model = stochastic_case(seed % 1000, k).scenario
    for inst in model.sample_range(1, 10):
        assert validate_instance(inst) == []
        assert np.all(inst.consumption <= inst.limit[:, None])


def test_stochastic_json_round_trip():
    model = _model(excl=0.2)
    back = StochasticModel.from_json(json.loads(json.dumps(model.to_json())))
    assert back.sample_range(1, 4)[3].dumps() == model.sample_range(1, 4)[3].dumps()


def test_streams_are_independent():
    model = _model()
    assert model.with_stream(1).sample_range(1, 3)[0].dumps() != model.sample_range(1, 3)[0].dumps()


def test_lower_bound_example():
    adv = LowerBoundAdversary(0, [3.0, 5.0], [4.0, 8.0], 1.0)
    assert adv.slack.tolist() == [1.0, 3.0]
    inst, a = adv._build(np.array([1.0, -1.0]), [0.0, 0.0])
    assert a.tolist() == [2.0, 8.0]
    assert np.array_equal(subgradient(adv.loss, inst, [0.0, 0.0]), np.array([1.0, -3.0]))


def test_lower_bound_symmetric_columns():
    adv = LowerBoundAdversary(3, [1.0, 2.0], [2.0, 4.0], 1.0)
    assert adv.slack.tolist() == [1.0, 2.0]
    for t in range(1, 50):
        inst, a = lower_bound_block(adv, t)
        assert inst.n == 1
        for i in range(2):
            assert a[i] in (0.0, adv.limit[i])


def test_lower_bound_gradient_is_signed_slack():
    adv = LowerBoundAdversary(9, [0.7, 2.0, 1.5], [1.0, 5.0, 2.0], 2.0)
    rng = np.random.default_rng(2)
    eps = adv.signs(1, 100)
    for t in range(1, 101):
        p = rng.uniform(0.0, 2.0, 3)
        if t % 10 == 0:
            p[t % 3] = 0.0
        inst, a = lower_bound_block(adv, t, p)
        assert np.array_equal(solve_exact(inst, p).usage, a)
        assert np.array_equal(subgradient(adv.loss, inst, p), eps[t - 1] * adv.slack)


def test_lower_bound_mean_column():
    adv = LowerBoundAdversary(11, [3.0, 5.0], [4.0, 8.0], 1.0)
    N = 100_000
    cols = np.clip(adv.target - adv.signs(1, N) * adv.slack, 0.0, adv.limit)
    se = adv.slack / np.sqrt(N)
    assert np.all(np.abs(cols.mean(axis=0) - adv.target) <= 3 * se)


def test_lower_bound_validation():
    with pytest.raises(ValueError):
        LowerBoundAdversary(0, [2.0], [2.0], 1.0)
    with pytest.raises(ValueError):
        LowerBoundAdversary(0, [0.0], [2.0], 1.0)


def test_replay_round_trip(tmp_path):
    model = _model(excl=0.3)
    path = tmp_path / "blocks.jsonl"
    write_blocks(path, model.sample_range(1, 40))
    cf = ChoiceFunction("norm_squared", [0.5, 0.5])
    sched = StepSchedule("fixed", 0.05)
    direct, _ = simulate(model, cf, sched, 40)
    replayed, _ = simulate(ReplayScenario.from_file(path, model.loss), cf, sched, 40)
    assert np.array_equal(direct.prices, replayed.prices)
    assert np.array_equal(direct.gradients, replayed.gradients)
    assert np.array_equal(direct.dual_values, replayed.dual_values)


def test_replay_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert list(replay_blocks(path)) == []


def test_replay_malformed_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = _model().sample_range(1, 2)
    path.write_text(good[0].dumps() + "\n" + good[1].dumps() + "\n{not json\n")
    with pytest.raises(ReplayError, match="line 3") as info:
        list(replay_blocks(path))
    assert info.value.line == 3


def test_replay_invalid_block_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    bad = {"welfare": [1.0], "consumption": [[3.0]], "limit": [2.0]}
    path.write_text("\n" + json.dumps(bad) + "\n")
    with pytest.raises(ReplayError, match="line 2"):
        list(replay_blocks(path))


def test_replay_short_file(tmp_path):
    path = tmp_path / "blocks.jsonl"
    model = _model()
    write_blocks(path, model.sample_range(1, 3))
    with pytest.raises(ValueError):
        ReplayScenario.from_file(path, model.loss).start(4)


def test_scenario_from_json_dispatch(tmp_path):
    adv = LowerBoundAdversary(4, [1.0], [3.0], 2.0)
    assert isinstance(scenario_from_json(adv.to_json()), LowerBoundAdversary)
    model = _model()
    write_blocks(tmp_path / "b.jsonl", model.sample_range(1, 2))
    sc = scenario_from_json({"kind": "replay", "path": "b.jsonl", "loss": model.loss.to_json()}, base_dir=tmp_path)
    assert len(sc.blocks) == 2


def test_dist_validation():
    with pytest.raises(ValueError):
        Dist("uniform", 2.0, 1.0)
    with pytest.raises(ValueError):
        Dist("uniform", -1.0, 1.0)
    d = Dist("choice", values=(4.0, 1.0), probs=(0.5, 0.5))
    assert d.from_uniform(np.array([0.1, 0.9])).tolist() == [4.0, 1.0]
