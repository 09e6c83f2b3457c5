import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adatrans import tensor as T
from adatrans.tensor import grad_check
from adatrans.transformer import (FIXED_STEP_SIZE, AdaINBlock, TransformerConfig, TransformerModel,
                                  adain_block, condition_vector, rollout, transformer_step)


def small_model(seed=0, fixed_step=False, d=5, n_attrs=2):
    return TransformerModel(TransformerConfig(d=d, n_attrs=n_attrs, hidden=8, n_blocks=2,
                                              fixed_step=fixed_step, seed=seed))


def test_adain_identity_modulation_returns_mlp_output():
    rng = np.random.default_rng(0)
    block = AdaINBlock(6, 4, rng)
    for head, value in ((block.scale_head, 1.0), (block.bias_head, 0.0)):
        head.weight.value[:] = 0.0
        head.bias.value[:] = value
    h = T.constant(rng.normal(size=6))
    out = adain_block(block, h, rng.normal(size=4))
    np.testing.assert_array_equal(out.value, block.mlp(h).value)


def test_adain_zero_scale_returns_bias():
    rng = np.random.default_rng(1)
    block = AdaINBlock(6, 4, rng)
    block.scale_head.weight.value[:] = 0.0
    block.scale_head.bias.value[:] = 0.0
    cond = rng.normal(size=4)
    expected = block.bias_head(cond).value
    for _ in range(3):
        np.testing.assert_array_equal(block(T.constant(rng.normal(size=6)), cond).value, expected)


def test_adain_width_mismatch_rejected():
    block = AdaINBlock(6, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        block(T.constant(np.zeros(5)), np.zeros(4))


def test_adain_gradient_wrt_condition():
    rng = np.random.default_rng(2)
    block = AdaINBlock(6, 4, rng)
    h = rng.normal(size=(3, 6))
    assert grad_check(lambda c: T.sum(T.tanh(block(T.constant(h), c))), [rng.normal(size=(3, 4))]) < 1e-4


def test_zero_step_logit_gives_half():
    model = small_model()
    model.step_head.weight.value[:] = 0.0
    model.step_head.bias.value[:] = 0.0
    _, s, _ = transformer_step(model, model.initial_state(()), np.ones(5), np.array([1, 0, 0, 1.0]))
    assert s.item() == 0.5


def test_direction_head_is_normalized():
    model = small_model()
    model.direction_head.weight.value[:] = 0.0
    model.direction_head.bias.value[:] = [3.0, 4.0, 0.0, 0.0, 0.0]
    n, _, _ = transformer_step(model, model.initial_state(()), np.zeros(5), np.zeros(4))
    np.testing.assert_allclose(n.value, [0.6, 0.8, 0, 0, 0], atol=1e-15)


def test_step_is_deterministic():
    model = small_model()
    w, cond = np.arange(5.0) / 5, np.array([1.0, 0.0, 0.0, 0.0])
    a = transformer_step(model, model.initial_state(()), w, cond)
    b = transformer_step(model, model.initial_state(()), w, cond)
    assert np.array_equal(a[0].value, b[0].value) and np.array_equal(a[1].value, b[1].value)


def test_step_dimension_mismatch():
    model = small_model()
    with pytest.raises(ValueError):
        transformer_step(model, model.initial_state(()), np.zeros(4), np.zeros(4))


def test_condition_vector_layout_and_validation():
    np.testing.assert_array_equal(condition_vector([1, 0], [0, 0]), [1, 0, 0, 0])
    with pytest.raises(ValueError):
        condition_vector([2, 0], [0, 0])
    with pytest.raises(ValueError):
        condition_vector([1, 0, 1], [0, 0])


def test_rollout_rejects_zero_steps():
    with pytest.raises(ValueError):
        rollout(small_model(), np.zeros(5), [1, 0], [0, 0], steps=0)


def test_default_step_count_is_five():
    assert len(rollout(small_model(), np.zeros(5), [1, 0], [0, 0])) == 5


def test_large_negative_step_bias_freezes_the_code():
    model = small_model()
    model.step_head.weight.value[:] = 0.0
    model.step_head.bias.value[:] = -40.0
    w = np.random.default_rng(0).normal(size=5)
    traj = rollout(model, w, [1, 1], [0, 0], steps=5)
    assert np.max(np.abs(traj.endpoint.value - w)) < 1e-3


def test_endpoint_equals_origin_plus_weighted_directions():
    rng = np.random.default_rng(3)
    model = small_model(seed=4)
    w = rng.normal(size=(6, 5))
    a_o = rng.integers(0, 2, size=(6, 2))
    traj = rollout(model, w, 1 - a_o, a_o, steps=5)
    total = sum(s.value * n.value for s, n in zip(traj.sizes, traj.directions))
    assert np.max(np.abs(traj.endpoint.value - w - total)) < 1e-9
    prev = w
    for s, n, lat in zip(traj.sizes, traj.directions, traj.latents):
        assert np.max(np.abs(lat.value - prev - s.value * n.value)) < 1e-9
        prev = lat.value


def test_fixed_step_model_uses_constant_size_and_hides_step_head():
    model = small_model(fixed_step=True)
    traj = rollout(model, np.zeros(5), [1, 0], [0, 0], steps=3)
    assert all(s.item() == FIXED_STEP_SIZE for s in traj.sizes)
    assert not any(k.startswith("step_head") for k in model.named_parameters())


def test_batched_rollout_matches_single_rollouts():
    rng = np.random.default_rng(5)
    model = small_model()
    w = rng.normal(size=(3, 5))
    a_o, a_t = rng.integers(0, 2, size=(3, 2)), rng.integers(0, 2, size=(3, 2))
    batch = rollout(model, w, a_t, a_o, 4).endpoint.value
    for i in range(3):
        single = rollout(model, w[i], a_t[i], a_o[i], 4).endpoint.value
        np.testing.assert_allclose(batch[i], single, atol=1e-12)


def test_full_rollout_gradient_through_lstm():
    rng = np.random.default_rng(6)
    model = small_model(seed=7)
    names = list(model.named_parameters())
    w = rng.normal(size=(2, 5))
    a_o, a_t = np.array([[0, 1], [1, 0]]), np.array([[1, 1], [1, 1]])
    target = rng.normal(size=(2, 5))

    def program(*leaves):
        for name, leaf in zip(names, leaves):
            model.set_parameter(name, leaf)
        end = rollout(model, w, a_t, a_o, 5).endpoint
        return T.sum(T.sq_l2_distance(end, target))

    point = [p.value.copy() for p in model.named_parameters().values()]
    assert grad_check(program, point, n_coords=60, rng=rng) < 1e-4


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), steps=st.integers(1, 8))
def test_rollout_invariants(seed, steps):
    rng = np.random.default_rng(seed)
    model = small_model(seed=seed % 1000)
    w = rng.normal(size=5) * 2
    a_o = rng.integers(0, 2, size=2)
    traj = rollout(model, w, rng.integers(0, 2, size=2), a_o, steps)
    for rec in traj.records():
        assert abs(np.linalg.norm(rec["direction"]) - 1) <= 1e-6
        assert 0 < rec["size"] < 1
    assert np.linalg.norm(traj.endpoint.value - w) <= steps


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(2, 8), data=st.data())
def test_rollout_prefix_consistency(seed, k, data):
    j = data.draw(st.integers(1, k))
    rng = np.random.default_rng(seed)
    model = small_model()
    w = rng.normal(size=(2, 5))
    a_o, a_t = rng.integers(0, 2, size=(2, 2)), rng.integers(0, 2, size=(2, 2))
    long, short = rollout(model, w, a_t, a_o, k), rollout(model, w, a_t, a_o, j)
    for a, b in zip(long.latents[:j], short.latents):
        assert np.array_equal(a.value, b.value)
