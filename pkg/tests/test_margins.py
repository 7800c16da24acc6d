import math

import numpy as np
import pytest

from pml.errors import NumericError, ShapeError
from pml.margins import (
    MarginMix,
    combine,
    combine_batch,
    ordinal_backward,
    ordinal_forward,
    variational_backward,
    variational_forward,
)
from pml.nn import DenseLayer, DenseNet
from pml.stats import StatsSnapshot

from conftest import central_difference, relative_gradient_error

M_MAX = 0.5
MU_RANGE = 2.0
SIGMA_MIN = 0.5


def zero_net(in_width: int, out_width: int, bias=None) -> DenseNet:
    b = np.zeros(out_width) if bias is None else np.asarray(bias, float)
    return DenseNet([DenseLayer(np.zeros((out_width, in_width)), b, "identity")])


def random_net(in_width: int, out_width: int, seed: int) -> DenseNet:
    return DenseNet.create([in_width, 5, out_width], ["tanh", "identity"],
                           np.random.default_rng(seed))


def random_stats(c: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((c, d + 1 + c)) * 0.5


def test_zero_net_anchors_each_row_at_its_class():
    c, d = 6, 3
    om = ordinal_forward(zero_net(d + 1 + c, 2), random_stats(c, d, 0),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    assert np.allclose(om.mu, np.arange(c))
    assert np.allclose(om.sigma, math.log(2.0) + SIGMA_MIN)
    assert np.array_equal(om.table.argmax(axis=1), np.arange(c))


def test_peak_value_is_m_max_for_integral_mu():
    c, d = 5, 2
    om = ordinal_forward(zero_net(d + 1 + c, 2), random_stats(c, d, 1),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    for j in range(c):
        assert om.table[j, j] == pytest.approx(M_MAX, abs=1e-15)


def test_table_matches_scalar_discretization_oracle():
    c, d = 7, 4
    net = random_net(d + 1 + c, 2, seed=3)
    stats = random_stats(c, d, 4)
    om = ordinal_forward(net, stats, m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    raw = net.forward(stats, record=False)
    for j in range(c):
        mu = j + math.tanh(raw[j, 0]) * MU_RANGE
        sigma = math.log(1.0 + math.exp(raw[j, 1])) + SIGMA_MIN
        for k in range(c):
            oracle = M_MAX * math.exp(-((k - mu) ** 2) / (2.0 * sigma * sigma))
            assert om.table[j, k] == pytest.approx(oracle, abs=1e-12)


def test_table_rows_unimodal_with_peak_at_nearest_integer():
    c, d = 9, 3
    net = random_net(d + 1 + c, 2, seed=8)
    om = ordinal_forward(net, random_stats(c, d, 9),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    assert np.all(om.sigma >= SIGMA_MIN)
    assert np.all((om.table >= 0.0) & (om.table <= M_MAX))
    for j in range(c):
        peak = int(np.clip(round(om.mu[j]), 0, c - 1))
        row = om.table[j]
        assert row.argmax() == peak
        assert np.all(np.diff(row[: peak + 1]) >= 0)
        assert np.all(np.diff(row[peak:]) <= 0)


def test_zero_margin_mass_is_symmetric_about_the_class():
    c, d = 11, 2
    om = ordinal_forward(zero_net(d + 1 + c, 2), random_stats(c, d, 2),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    j = 5
    for off in range(1, 6):
        assert om.table[j, j - off] == pytest.approx(om.table[j, j + off], rel=1e-12)


def test_ordinal_forward_rejects_nonfinite_network_output():
    c, d = 4, 2
    net = zero_net(d + 1 + c, 2, bias=[np.inf, 0.0])
    with pytest.raises(NumericError):
        ordinal_forward(net, random_stats(c, d, 0),
                        m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)


def test_variational_zero_residual_zero_bias_gives_zero():
    c, d = 5, 3
    vm = variational_forward(zero_net(d + 1 + c, 1), np.zeros((c, d + 1 + c)), m_max=M_MAX)
    assert np.array_equal(vm.values, np.zeros(c))


def test_variational_bias_only_net_clamps_to_bias():
    c, d = 5, 3
    vm = variational_forward(zero_net(d + 1 + c, 1, bias=[0.2]),
                             np.ones((c, d + 1 + c)), m_max=M_MAX)
    assert np.allclose(vm.values, 0.2)
    vm_big = variational_forward(zero_net(d + 1 + c, 1, bias=[7.0]),
                                 np.ones((c, d + 1 + c)), m_max=M_MAX)
    assert np.allclose(vm_big.values, M_MAX)


def test_variational_matches_row_wise_forward_oracle():
    c, d = 6, 4
    net = random_net(d + 1 + c, 1, seed=5)
    delta = np.random.default_rng(6).standard_normal((c, d + 1 + c))
    vm = variational_forward(net, delta, m_max=M_MAX)
    for j in range(c):
        row_out = float(net.forward(delta[j], record=False)[0])
        assert vm.values[j] == pytest.approx(min(max(row_out, -M_MAX), M_MAX), abs=1e-12)
    assert np.all(np.abs(vm.values) <= M_MAX)


def test_variational_shape_checks():
    net = random_net(8, 1, seed=0)
    with pytest.raises(ShapeError):
        variational_forward(net, np.zeros((3, 9)), m_max=M_MAX)
    with pytest.raises(ShapeError):
        variational_forward(random_net(8, 2, seed=0), np.zeros((3, 8)), m_max=M_MAX)


def test_combine_zero_mix_is_exactly_zero():
    c, d = 6, 3
    om = ordinal_forward(random_net(d + 1 + c, 2, seed=1), random_stats(c, d, 1),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    vm = variational_forward(random_net(d + 1 + c, 1, seed=2),
                             random_stats(c, d, 3), m_max=M_MAX)
    m = combine(om, vm, MarginMix(0.0, 0.0), true_class=2)
    assert np.array_equal(m, np.zeros(c))


def test_combine_beta_zero_matches_discretization_formula():
    c, d = 8, 3
    lam = 0.7
    om = ordinal_forward(zero_net(d + 1 + c, 2), random_stats(c, d, 0),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    vm = variational_forward(random_net(d + 1 + c, 1, seed=4),
                             random_stats(c, d, 5), m_max=M_MAX)
    j = 3
    m = combine(om, vm, MarginMix(lam, 0.0), true_class=j)
    sigma0 = math.log(2.0) + SIGMA_MIN
    oracle = [lam * M_MAX * math.exp(-((k - j) ** 2) / (2.0 * sigma0**2)) for k in range(c)]
    assert np.allclose(m, oracle, atol=1e-12)
    assert m.argmax() == j
    assert np.all(np.diff(m[j:]) <= 0)


def test_combine_lambda_zero_is_class_independent():
    c, d = 6, 2
    om = ordinal_forward(random_net(d + 1 + c, 2, seed=7), random_stats(c, d, 7),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    vm = variational_forward(random_net(d + 1 + c, 1, seed=8),
                             random_stats(c, d, 8), m_max=M_MAX)
    mix = MarginMix(0.0, 1.3)
    a = combine(om, vm, mix, true_class=0)
    b = combine(om, vm, mix, true_class=c - 1)
    assert np.array_equal(a, b)
    assert np.allclose(a, 1.3 * vm.values)


def test_combine_batch_stacks_rows():
    c, d = 5, 2
    om = ordinal_forward(random_net(d + 1 + c, 2, seed=9), random_stats(c, d, 9),
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    vm = variational_forward(random_net(d + 1 + c, 1, seed=10),
                             random_stats(c, d, 10), m_max=M_MAX)
    mix = MarginMix(0.8, 0.4)
    ys = np.array([0, 3, 3, 1])
    batch = combine_batch(om, vm, mix, ys)
    for i, j in enumerate(ys):
        assert np.allclose(batch[i], combine(om, vm, mix, int(j)), atol=1e-15)


def test_ordinal_backward_matches_finite_differences():
    c, d = 5, 3
    net = random_net(d + 1 + c, 2, seed=11)
    stats = random_stats(c, d, 12)
    weights = np.random.default_rng(13).standard_normal((c, c))

    def loss():
        om = ordinal_forward(net, stats, m_max=M_MAX, mu_range=MU_RANGE,
                             sigma_min=SIGMA_MIN)
        return float((om.table * weights).sum())

    om = ordinal_forward(net, stats, m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    analytic = ordinal_backward(net, om, weights).flat()
    numeric = central_difference(loss, net.params())
    for a, n in zip(analytic, numeric):
        assert relative_gradient_error(a, n) < 1e-4


def test_variational_backward_matches_finite_differences_and_masks_clamp():
    c, d = 5, 3
    net = random_net(d + 1 + c, 1, seed=14)
    delta = random_stats(c, d, 15)
    weights = np.random.default_rng(16).standard_normal(c)

    def loss():
        vm = variational_forward(net, delta, m_max=M_MAX)
        return float(vm.values @ weights)

    vm = variational_forward(net, delta, m_max=M_MAX)
    assert np.all(np.abs(vm.pre_clamp) < M_MAX)  # interior: mask is all-pass here
    analytic = variational_backward(net, vm, weights).flat()
    numeric = central_difference(loss, net.params())
    for a, n in zip(analytic, numeric):
        assert relative_gradient_error(a, n) < 1e-4
    # saturated outputs must stop the gradient
    net2 = zero_net(d + 1 + c, 1, bias=[9.0])
    sat = variational_forward(net2, delta, m_max=M_MAX)
    grads = variational_backward(net2, sat, weights)
    assert all(np.all(g == 0.0) for g in grads.flat())


def test_snapshot_input_accepted():
    snap = StatsSnapshot.zeros(4, 3)
    om = ordinal_forward(zero_net(3 + 1 + 4, 2), snap,
                         m_max=M_MAX, mu_range=MU_RANGE, sigma_min=SIGMA_MIN)
    assert om.table.shape == (4, 4)
