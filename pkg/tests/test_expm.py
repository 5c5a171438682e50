import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from osmose.expm import (THETA, StepperConfig, dense_expm_reference, evolve, expm_action,
                         taylor_parameters, write_trace_csv)
from osmose.anisotropy import build_weight_field
from osmose.grid_image import MaskField
from osmose.operator import assemble

from conftest import random_generator, random_weight_field


def test_tiny_tau_is_identity(rng):
    a, _, _, _ = random_generator(rng, 5, 6)
    b = rng.random(30)
    np.testing.assert_allclose(expm_action(a, b, 1e-300), b, rtol=1e-15)


def test_two_by_two_closed_form():
    # exp(tau [[-1, 1], [1, -1]]) = (I + e^{-2 tau} [[1, -1], [-1, 1]]) / 2
    a = np.array([[-1.0, 1.0], [1.0, -1.0]])
    b = np.array([1.0, 0.0])
    for tau in (0.1, 1.0, 10.0):
        e = math.exp(-2 * tau)
        np.testing.assert_allclose(expm_action(a, b, tau), [(1 + e) / 2, (1 - e) / 2], rtol=1e-14)


def test_dense_reference_examples():
    np.testing.assert_allclose(dense_expm_reference(np.zeros((3, 3))), np.eye(3))
    d = np.diag([-1.0, 0.5, -30.0])
    np.testing.assert_allclose(dense_expm_reference(d), np.diag(np.exp([-1.0, 0.5, -30.0])), rtol=1e-14)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 6))
    np.testing.assert_allclose(dense_expm_reference(x), scipy.linalg.expm(x), rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        dense_expm_reference(np.ones((2, 3)))


def test_random_generator_against_oracle(rng):
    a, _, _, _ = random_generator(rng, 10, 10, eps=0.05)
    b = rng.uniform(0.1, 1.0, 100)
    for tau in (0.5, 50.0, 1000.0):
        ref = dense_expm_reference(tau * a.toarray()) @ b
        out = expm_action(a, b, tau)
        assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-10


def test_shift_does_not_change_result(rng):
    a, _, _, _ = random_generator(rng, 6, 7)
    b = rng.random(42)
    np.testing.assert_allclose(expm_action(a, b, 7.0), expm_action(a, b, 7.0, shift=False),
                               rtol=1e-11)


def test_semigroup(rng):
    a, _, _, _ = random_generator(rng, 8, 8)
    b = rng.uniform(0.1, 1.0, 64)
    two = expm_action(a, expm_action(a, b, 3.0), 4.0)
    np.testing.assert_allclose(two, expm_action(a, b, 7.0), rtol=1e-11)


def test_dense_exponential_is_positive_and_stochastic(rng):
    for _ in range(6):
        m, n = rng.integers(2, 9, size=2)
        a, _, _, _ = random_generator(rng, int(m), int(n))
        for tau in (0.1, 1.0, 10.0):
            e = dense_expm_reference(tau * a.toarray())
            assert e.min() > 0
            np.testing.assert_allclose(e.sum(axis=0), 1.0, atol=1e-12)


def test_input_validation(rng):
    a, _, _, _ = random_generator(rng, 3, 3)
    with pytest.raises(ValueError):
        expm_action(a, np.ones(8), 1.0)
    with pytest.raises(ValueError):
        expm_action(a, np.ones(9), -1.0)
    with pytest.raises(ValueError):
        expm_action(a, np.full(9, np.nan), 1.0)
    with pytest.raises(ValueError):
        StepperConfig(tau=0.0, max_steps=3)


def taylor_theta(m, tol=Fraction(1, 2**53), extra=40):
    """theta_m from exact power-series coefficients of log(exp(-x) T_m(x))."""
    deg = m + extra
    fact = [math.factorial(k) for k in range(deg + 1)]
    expneg = [Fraction((-1) ** k, fact[k]) for k in range(deg + 1)]
    tm = [Fraction(1, fact[k]) for k in range(m + 1)]
    q = [sum(expneg[k - i] * tm[i] for i in range(min(k, m) + 1)) for k in range(deg + 1)]
    q[0] -= 1
    # log(1 + q) = sum_j (-1)^{j+1} q^j / j; q starts at x^{m+1}
    log = [Fraction(0)] * (deg + 1)
    power = [Fraction(1)] + [Fraction(0)] * deg
    for j in range(1, deg // (m + 1) + 1):
        power = [sum(power[i] * q[k - i] for i in range(k + 1)) for k in range(deg + 1)]
        for k in range(deg + 1):
            log[k] += Fraction((-1) ** (j + 1), j) * power[k]
    coeffs = [abs(float(c)) for c in log]
    f = lambda x: sum(c * x ** (k - 1) for k, c in enumerate(coeffs) if k > 0) - float(tol)
    return float(mpmath.findroot(f, (1e-20, 20.0), solver="bisect"))


@pytest.mark.parametrize("m", [5, 10, 18])
def test_theta_table(m):
    assert taylor_theta(m) == pytest.approx(THETA[m], rel=2e-3)


def test_taylor_parameters():
    assert taylor_parameters(0.0) == (0, 1)
    m, s = taylor_parameters(100.0)
    assert s * THETA[m] >= 100.0
    for norm in (0.01, 1.0, 37.0, 5e4):
        m, s = taylor_parameters(norm)
        assert all(m * s <= k * max(1, math.ceil(norm / t)) for k, t in THETA.items())


def conservation_case(rng, shape=(12, 12)):
    a, v, w, mask = random_generator(rng, *shape)
    f = rng.uniform(0.05, 1.0, v.size)
    return a, f


def test_conservation_and_positivity(rng):
    for _ in range(4):
        a, f = conservation_case(rng)
        u, trace = evolve(a, f, StepperConfig(tau=50.0, max_steps=10, steady_tol=0))
        assert trace.steps == 10
        np.testing.assert_allclose(trace.means, f.mean(), rtol=1e-10)
        assert min(trace.mins) > 0


def test_evolve_shift_option(rng):
    a, f = conservation_case(rng, (8, 8))
    plain, _ = evolve(a, f, StepperConfig(tau=30.0, max_steps=5, steady_tol=0))
    shifted, _ = evolve(a, f, StepperConfig(tau=30.0, max_steps=5, steady_tol=0, shift=True))
    np.testing.assert_allclose(plain, shifted, rtol=1e-10)


def test_compatible_case_converges_to_rescaled_guidance(rng):
    shape = (10, 10)
    w = random_weight_field(rng, shape, kappa_max=10.0)
    v = rng.uniform(0.1, 1.0, shape)
    a = assemble(v, w, MaskField(np.zeros(shape, np.uint8)))
    f = rng.uniform(0.1, 1.0, v.size)
    u, trace = evolve(a, f, StepperConfig(tau=10.0, max_steps=5000, steady_tol=1e-13))
    np.testing.assert_allclose(u, f.mean() / v.mean() * v.ravel(), rtol=1e-8)


def test_residual_decreases_and_trace_csv(rng, tmp_path):
    a, f = conservation_case(rng, (6, 6))
    seen, states = [], [f]
    u, trace = evolve(a, f, StepperConfig(tau=1.0, max_steps=20, steady_tol=0),
                      callback=lambda k, x: (seen.append(k), states.append(x.copy())))
    assert seen == list(range(1, 21))
    # a column-stochastic step contracts the l1 norm of successive differences
    diffs = np.array([np.abs(y - x).sum() for x, y in zip(states, states[1:])])
    assert np.all(diffs[1:] <= diffs[:-1] * (1 + 1e-9))
    path = tmp_path / "trace.csv"
    write_trace_csv([trace, trace], path)
    rows = path.read_text().splitlines()
    assert rows[0] == "channel,step,mean,min,residual"
    assert len(rows) == 1 + 2 * 21
    assert rows[1].startswith("0,0,") and rows[-1].startswith("1,20,")


def test_sparse_and_dense_inputs_agree(rng):
    a, _, _, _ = random_generator(rng, 4, 5)
    b = rng.random(20)
    dense = expm_action(a.toarray(), b, 2.0)
    sparse = expm_action(sp.csc_matrix(a.matrix), b, 2.0)
    np.testing.assert_allclose(dense, sparse, rtol=1e-13)
    np.testing.assert_allclose(dense, expm_action(a, b, 2.0), rtol=1e-13)
