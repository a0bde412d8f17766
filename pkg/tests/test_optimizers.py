"""Tests for ``muonlab.optimizers``: Muon, AdamW, hybrid routing and RMS matching.

Exact RMS statements are checked with ``polar_factor`` swapped in for
Newton-Schulz through the ``orthogonalize`` seam.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from muonlab.errors import (
    MissingGradientError,
    NonFiniteError,
    ParamKindError,
    ShapeMismatchError,
)
from muonlab.matrix import random_orthogonal, rms
from muonlab.optimizers import (
    AdamWConfig,
    MuonConfig,
    ParamKind,
    ParamState,
    ScalingMode,
    ScalingVariant,
    adamw_step,
    hybrid_step,
    muon_step,
    scale,
    theoretical_update_rms,
)
from muonlab.orthogonalizer import newton_schulz, polar_factor


def muon_cfg(**overrides) -> MuonConfig:
    return MuonConfig(**{"lr": 0.01, **overrides})


def matrix_state(rng, shape=(4, 6), name="w") -> ParamState:
    return ParamState.create(name, rng.standard_normal(shape))


# --- Configs ---------------------------------------------------------------------


def test_muon_defaults():
    cfg = muon_cfg()
    assert cfg.momentum == 0.95
    assert cfg.weight_decay == 0.1
    assert cfg.ns.steps == 5
    assert cfg.nesterov is True
    assert cfg.scaling.variant is ScalingVariant.ADJUSTED_LR
    assert cfg.scaling.rms_target == 0.2


def test_adamw_defaults():
    cfg = AdamWConfig(lr=1e-3)
    assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.95, 1e-8)


@pytest.mark.parametrize(
    "bad",
    [{"momentum": 1.0}, {"weight_decay": -0.1}, {"lr": math.nan}, {"extra": 1}],
)
def test_muon_config_rejects_bad_values(bad):
    with pytest.raises(ValidationError):
        muon_cfg(**bad)


def test_baseline_scaling_needs_hidden():
    with pytest.raises(ValidationError):
        ScalingMode(variant="baseline")
    assert ScalingMode(variant="baseline", hidden=64).hidden == 64


def test_rms_target_must_be_positive():
    with pytest.raises(ValidationError):
        ScalingMode(rms_target=0.0)


# --- RMS of orthonormal-factor products ------------------------------------------


def test_rank_r_orthonormal_product_rms(rng):
    for _ in range(50):
        n = int(rng.integers(2, 129))
        m = int(rng.integers(2, n + 1))
        r = int(rng.integers(2, m + 1))
        u = random_orthogonal(n, rng)[:, :r]
        v = random_orthogonal(m, rng)[:r, :]
        x = u @ v
        assert rms(x) == pytest.approx(math.sqrt(r / (m * n)), abs=1e-10)
        assert theoretical_update_rms((n, m), rank=r) == pytest.approx(math.sqrt(r / (m * n)))


def test_theoretical_update_rms_full_rank():
    assert theoretical_update_rms((64, 256)) == pytest.approx(math.sqrt(1 / 256))
    assert theoretical_update_rms((16, 16)) == pytest.approx(0.25)


# --- scale -----------------------------------------------------------------------


def test_update_norm_hits_target_exactly(rng):
    mode = ScalingMode(variant="update_norm")
    for shape in [(3, 3), (8, 2), (5, 40)]:
        o = rng.standard_normal(shape) * rng.uniform(1e-3, 1e3)
        assert rms(scale(o, shape, mode)) == pytest.approx(0.2, abs=1e-12)


def test_update_norm_zero_stays_zero():
    out = scale(np.zeros((3, 4)), (3, 4), ScalingMode(variant="update_norm"))
    assert not out.any()


def test_adjusted_lr_equals_baseline_on_square(rng):
    o = rng.standard_normal((32, 32))
    adjusted = scale(o, (32, 32), ScalingMode())
    baseline = scale(o, (32, 32), ScalingMode(variant="baseline", hidden=32))
    np.testing.assert_array_equal(adjusted, baseline)


def test_adjusted_lr_on_wide_layer_is_twice_baseline(rng):
    h = 16
    o = rng.standard_normal((h, 4 * h))
    adjusted = scale(o, o.shape, ScalingMode())
    baseline = scale(o, o.shape, ScalingMode(variant="baseline", hidden=h))
    assert np.linalg.norm(adjusted) / np.linalg.norm(baseline) == pytest.approx(2.0, rel=1e-14)


def test_shape_ratio_and_none(rng):
    o = rng.standard_normal((12, 3))
    np.testing.assert_allclose(scale(o, o.shape, ScalingMode(variant="shape_ratio")), 2.0 * o)
    np.testing.assert_array_equal(scale(o.T, o.T.shape, ScalingMode(variant="shape_ratio")), o.T)
    np.testing.assert_array_equal(scale(o, o.shape, ScalingMode(variant="none")), o)


# --- muon_step -------------------------------------------------------------------


def test_zero_gradient_without_decay_is_a_fixed_point(rng):
    state = matrix_state(rng)
    new, stats = muon_step(state, np.zeros((4, 6)), muon_cfg(weight_decay=0.0), 0.01)
    np.testing.assert_array_equal(new.weight, state.weight)
    assert stats.update_rms == 0.0


def test_zero_gradient_with_decay_shrinks_weight(rng):
    state = matrix_state(rng)
    new, _ = muon_step(state, np.zeros((4, 6)), muon_cfg(weight_decay=0.1), 0.01)
    np.testing.assert_allclose(new.weight, 0.999 * state.weight, rtol=1e-15)


def test_muon_step_is_pure_and_advances_state(rng):
    state = matrix_state(rng)
    before = state.weight.copy()
    grad = rng.standard_normal((4, 6))
    new, _ = muon_step(state, grad, muon_cfg(), 0.01)
    np.testing.assert_array_equal(state.weight, before)
    assert new.step == 1
    np.testing.assert_array_equal(new.momentum, grad)


def test_muon_step_matches_hand_computation(rng):
    cfg = muon_cfg(momentum=0.9, weight_decay=0.05)
    state = matrix_state(rng)
    state = ParamState(
        name="w", weight=state.weight, momentum=rng.standard_normal((4, 6))
    )
    grad = rng.standard_normal((4, 6))
    new, stats = muon_step(state, grad, cfg, 0.02)

    m = 0.9 * state.momentum + grad
    o = newton_schulz(0.9 * m + grad)
    u = 0.2 * math.sqrt(6) * o
    expected = state.weight - 0.02 * (u + 0.05 * state.weight)
    np.testing.assert_allclose(new.momentum, m, rtol=1e-15)
    np.testing.assert_allclose(new.weight, expected, rtol=1e-13)
    assert stats.update_rms == pytest.approx(rms(u), rel=1e-14)
    assert stats.weight_rms == pytest.approx(rms(expected), rel=1e-14)


def test_nesterov_off_orthogonalizes_momentum(rng):
    seen = []

    def spy(m, cfg):
        seen.append(np.array(m))
        return newton_schulz(m, cfg)

    state = matrix_state(rng)
    state = ParamState(name="w", weight=state.weight, momentum=np.ones((4, 6)))
    grad = rng.standard_normal((4, 6))
    muon_step(state, grad, muon_cfg(nesterov=False), 0.01, orthogonalize=spy)
    np.testing.assert_allclose(seen[0], 0.95 * np.ones((4, 6)) + grad)


@pytest.mark.parametrize("shape", [(64, 64), (64, 256), (16, 256)])
def test_adjusted_lr_is_exact_under_polar_oracle(rng, shape):
    state = ParamState.create("w", rng.standard_normal(shape))
    _, stats = muon_step(
        state, rng.standard_normal(shape), muon_cfg(), 0.01, orthogonalize=polar_factor
    )
    assert stats.update_rms == pytest.approx(0.2, abs=1e-10)


def test_adjusted_lr_square_exact_rms(rng):
    n = 12
    state = ParamState.create("w", rng.standard_normal((n, n)))
    grad = rng.standard_normal((n, n))
    _, exact = muon_step(state, grad, muon_cfg(), 0.01, orthogonalize=polar_factor)
    _, ns = muon_step(state, grad, muon_cfg(), 0.01)
    o = newton_schulz(0.95 * grad + grad)
    assert ns.update_rms == pytest.approx(0.2 * math.sqrt(n) * rms(o), rel=1e-14)
    assert exact.update_rms == pytest.approx(0.2, abs=1e-10)


def test_muon_step_is_deterministic(rng):
    state = matrix_state(rng)
    grad = rng.standard_normal((4, 6))
    a, _ = muon_step(state, grad, muon_cfg(), 0.01)
    b, _ = muon_step(state, grad, muon_cfg(), 0.01)
    assert np.array_equal(a.weight, b.weight)


def test_muon_step_errors(rng):
    state = matrix_state(rng)
    with pytest.raises(ShapeMismatchError):
        muon_step(state, np.zeros((6, 4)), muon_cfg(), 0.01)
    bad = np.zeros((4, 6))
    bad[1, 1] = math.nan
    with pytest.raises(NonFiniteError):
        muon_step(state, bad, muon_cfg(), 0.01)
    vector = ParamState.create("g", np.ones((1, 6)), ParamKind.VECTOR)
    with pytest.raises(ParamKindError):
        muon_step(vector, np.zeros((1, 6)), muon_cfg(), 0.01)


# --- adamw_step ------------------------------------------------------------------


def test_adamw_zero_gradient_without_decay(rng):
    state = ParamState.create("g", rng.standard_normal((1, 5)), ParamKind.VECTOR)
    new, stats = adamw_step(state, np.zeros((1, 5)), AdamWConfig(lr=0.1, weight_decay=0.0), 0.1)
    np.testing.assert_array_equal(new.weight, state.weight)
    assert stats.update_rms == 0.0


def test_adamw_scalar_two_steps_by_hand():
    cfg = AdamWConfig(lr=0.1, beta1=0.9, beta2=0.95, epsilon=1e-8, weight_decay=0.01)
    state = ParamState.create("s", [[1.0]], ParamKind.VECTOR)
    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate([0.5, -0.25], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.95 * v + 0.05 * g * g
        update = (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.95**t)) + 1e-8)
        w = w - 0.1 * (update + 0.01 * w)
        state, _ = adamw_step(state, [[g]], cfg, 0.1)
        assert state.weight[0, 0] == pytest.approx(w, rel=1e-14)
        assert state.step == t


def test_adamw_update_magnitude_is_bounded_under_constant_gradient(rng):
    cfg = AdamWConfig(lr=0.01, weight_decay=0.0)
    state = ParamState.create("w", np.zeros((3, 3)))
    grad = rng.standard_normal((3, 3))
    for _ in range(50):
        before = state.weight
        state, _ = adamw_step(state, grad, cfg, 0.01)
        step_size = np.abs(state.weight - before) / 0.01
        assert np.all(step_size <= 1.0 + 1e-6)


def test_adamw_initializes_moments_for_matrix_params(rng):
    state = matrix_state(rng)
    assert state.exp_avg is None
    new, _ = adamw_step(state, rng.standard_normal((4, 6)), AdamWConfig(lr=0.01), 0.01)
    assert new.exp_avg.shape == (4, 6)
    assert new.exp_avg_sq.shape == (4, 6)


# --- hybrid_step -----------------------------------------------------------------


def _params(rng):
    return {
        "w1": ParamState.create("w1", rng.standard_normal((4, 6))),
        "w2": ParamState.create("w2", rng.standard_normal((6, 3))),
        "g1": ParamState.create("g1", np.ones((1, 6)), ParamKind.VECTOR),
    }


def test_hybrid_routes_by_kind(rng):
    params = _params(rng)
    grads = {name: rng.standard_normal(s.weight.shape) for name, s in params.items()}
    mc, ac = muon_cfg(), AdamWConfig(lr=0.01)
    updated, stats = hybrid_step(params, grads, mc, ac, 0.01)

    for name in ("w1", "w2"):
        expected, _ = muon_step(params[name], grads[name], mc, 0.01)
        np.testing.assert_array_equal(updated[name].weight, expected.weight)
    expected, _ = adamw_step(params["g1"], grads["g1"], ac, 0.01)
    np.testing.assert_array_equal(updated["g1"].weight, expected.weight)
    assert set(stats) == {"w1", "w2", "g1"}


def test_hybrid_all_vectors_is_pure_adamw(rng):
    params = {"g": ParamState.create("g", rng.standard_normal((1, 4)), ParamKind.VECTOR)}
    grads = {"g": rng.standard_normal((1, 4))}
    ac = AdamWConfig(lr=0.01)
    updated, _ = hybrid_step(params, grads, muon_cfg(), ac, 0.01)
    expected, _ = adamw_step(params["g"], grads["g"], ac, 0.01)
    np.testing.assert_array_equal(updated["g"].weight, expected.weight)


def test_hybrid_no_decay_list(rng):
    params = _params(rng)
    zero = {name: np.zeros(s.weight.shape) for name, s in params.items()}
    updated, _ = hybrid_step(
        params, zero, muon_cfg(), AdamWConfig(lr=0.01), 0.01, no_decay=frozenset({"g1", "w2"})
    )
    np.testing.assert_array_equal(updated["g1"].weight, params["g1"].weight)
    np.testing.assert_array_equal(updated["w2"].weight, params["w2"].weight)
    assert not np.array_equal(updated["w1"].weight, params["w1"].weight)


def test_hybrid_missing_gradient(rng):
    params = _params(rng)
    grads = {"w1": np.zeros((4, 6)), "g1": np.zeros((1, 6))}
    with pytest.raises(MissingGradientError) as exc:
        hybrid_step(params, grads, muon_cfg(), AdamWConfig(lr=0.01), 0.01)
    assert exc.value.details["param"] == "w2"


def test_fixed_point_for_both_optimizers_without_decay(rng):
    params = _params(rng)
    zero = {name: np.zeros(s.weight.shape) for name, s in params.items()}
    mc, ac = muon_cfg(weight_decay=0.0), AdamWConfig(lr=0.01, weight_decay=0.0)
    state = params
    for _ in range(5):
        state, _ = hybrid_step(state, zero, mc, ac, 0.01)
    for name in params:
        np.testing.assert_array_equal(state[name].weight, params[name].weight)


def test_state_element_counts(rng):
    muon = ParamState.create("w", np.zeros((4, 6)))
    adam = ParamState.create("g", np.zeros((4, 6)), ParamKind.VECTOR)
    assert muon.optimizer_state_elements * 2 == adam.optimizer_state_elements
