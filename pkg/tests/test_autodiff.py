"""Gradient engine checks against independent finite-difference oracles."""

import numpy as np
import pytest

from rheopinn import autodiff as ad
from rheopinn.jets import FirstJet, SpatialJet, coordinate_jets


def assert_grad_close(g_ad, g_fd, rel=1e-5):
    ga = np.concatenate([np.atleast_1d(np.asarray(g)).ravel() for g in g_ad])
    gf = np.concatenate([np.atleast_1d(np.asarray(g)).ravel() for g in g_fd])
    scale = max(np.abs(gf).max(), 1e-6)
    denom = np.maximum(np.maximum(np.abs(ga), np.abs(gf)), 1e-3 * scale)
    err = np.max(np.abs(ga - gf) / denom)
    assert err <= rel, f"gradient mismatch: max relative error {err:.3e}"


def fd_gradient(build_loss, values, h=1e-4):
    """Central finite differences of build_loss(values) over every entry."""
    grads = []
    for k, v in enumerate(values):
        v = np.asarray(v, dtype=np.float64)
        g = np.zeros_like(v)
        flat = g.reshape(-1)
        vflat = v.reshape(-1)
        for i in range(vflat.size):
            bump = np.array(v)
            bump.reshape(-1)[i] = vflat[i] + h
            hi = build_loss([bump if j == k else values[j] for j in range(len(values))])
            bump.reshape(-1)[i] = vflat[i] - h
            lo = build_loss([bump if j == k else values[j] for j in range(len(values))])
            flat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def _random_expression(params, rng):
    """Deterministic random composite over the supported op set."""
    pool = list(params) + [ad.const(rng.uniform(0.5, 1.5))]
    unary = [
        ad.tanh,
        ad.sin,
        lambda x: ad.smooth_abs(x, 0.3),
        lambda x: ad.sqrt(x * x + 0.5),
        lambda x: ad.exp(ad.tanh(x)),
        lambda x: (x * x + 0.3) ** 0.7,
        lambda x: 1.0 / (x * x + 1.0),
    ]
    binary = [lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b,
              lambda a, b: a / (b * b + 1.0)]
    for _ in range(10):
        if rng.random() < 0.5:
            op = unary[rng.integers(len(unary))]
            pool.append(op(pool[rng.integers(len(pool))]))
        else:
            op = binary[rng.integers(len(binary))]
            pool.append(op(pool[rng.integers(len(pool))], pool[rng.integers(len(pool))]))
    acc = None
    for p in params:  # guarantee every parameter enters the loss
        term = p * pool[-1] if acc is None else p * pool[rng.integers(len(pool))]
        acc = term if acc is None else acc + term
    return ad.mean(acc * acc)


@pytest.mark.parametrize("seed", range(100))
def test_random_composites_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    vals = [rng.normal(0.0, 0.8, ()) for _ in range(3)] + [rng.normal(0.0, 0.8, 5)]

    def build(vs):
        ps = [ad.param(v) for v in vs]
        loss = _random_expression(ps, np.random.default_rng(seed + 12345))
        return float(loss.value)

    ps = [ad.param(v) for v in vals]
    loss = _random_expression(ps, np.random.default_rng(seed + 12345))
    g_ad = ad.grad(loss, ps)
    g_fd = fd_gradient(build, vals)
    assert_grad_close(g_ad, g_fd)


def test_square_loss_gradient():
    theta = ad.param(3.0)
    loss = theta * theta
    (g,) = ad.grad(loss, [theta])
    assert g == pytest.approx(6.0, abs=0.0)


def test_unused_parameter_gets_exact_zero():
    used = ad.param(1.5)
    unused = ad.param(np.ones(4))
    loss = ad.mean(used * used + 2.0)
    g_used, g_unused = ad.grad(loss, [used, unused])
    assert np.all(g_unused == 0.0)
    assert g_used == pytest.approx(3.0)


def test_gradient_linearity_over_sums():
    rng = np.random.default_rng(7)
    for seed in range(20):
        vals = [rng.normal(size=()) for _ in range(3)] + [rng.normal(size=4)]
        ps = [ad.param(v) for v in vals]
        la = _random_expression(ps, np.random.default_rng(seed))
        lb = _random_expression(ps, np.random.default_rng(seed + 999))
        ga = ad.grad(la, ps)
        gb = ad.grad(lb, ps)
        gsum = ad.grad(la + lb, ps)
        for a, b, s in zip(ga, gb, gsum):
            np.testing.assert_allclose(a + b, s, rtol=1e-12, atol=1e-14)


def test_matmul_and_indexing_gradients():
    rng = np.random.default_rng(3)
    a0 = rng.normal(size=(4, 3))
    w0 = rng.normal(size=(3, 2))

    def build(vs):
        a, w = ad.param(vs[0]), ad.param(vs[1])
        z = ad.matmul(a, w)
        col = ad.col_last(z, 1)
        row = ad.row0(z, 2) * 0.5
        gathered = ad.take0(z, np.array([0, 0, 3]))
        loss = ad.mean(col * col) + ad.mean(row * row) + ad.mean(gathered * gathered)
        return float(loss.value)

    a, w = ad.param(a0), ad.param(w0)
    z = ad.matmul(a, w)
    col = ad.col_last(z, 1)
    row = ad.row0(z, 2) * 0.5
    gathered = ad.take0(z, np.array([0, 0, 3]))
    loss = ad.mean(col * col) + ad.mean(row * row) + ad.mean(gathered * gathered)
    g_ad = ad.grad(loss, [a, w])
    g_fd = fd_gradient(build, [a0, w0], h=1e-5)
    assert_grad_close(g_ad, g_fd, rel=1e-6)


def test_replay_reproduces_values_bitwise():
    rng = np.random.default_rng(11)
    vals = [rng.normal(size=()) for _ in range(3)] + [rng.normal(size=5)]
    ps = [ad.param(v) for v in vals]
    loss = _random_expression(ps, np.random.default_rng(42))
    assert np.array_equal(ad.replay(loss), loss.value)


def test_non_finite_loss_rejected():
    p = ad.param(np.inf)
    with pytest.raises(ad.NonFiniteError):
        ad.grad(p * 1.0, [p])


def test_non_scalar_loss_rejected():
    p = ad.param(np.ones(3))
    with pytest.raises(ValueError):
        ad.grad(p * 2.0, [p])


# --- jet algebra -----------------------------------------------------------


def test_cubic_second_derivative_is_exact():
    pts = np.array([[2.0], [0.5], [-1.0]])
    (x,) = coordinate_jets(pts)
    cube = x * x * x
    d2 = cube.d2(0, 0).value
    assert np.max(np.abs(d2 - 3.0 * 2.0 * pts[:, 0])) <= 1e-12
    assert d2[0] == pytest.approx(12.0, abs=1e-12)


def test_quadratic_jet_exact_to_machine_precision():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(20, 2))
    x, y = coordinate_jets(pts)
    q = x * x + 3.0 * (x * y) - 2.0 * (y * y) + x + 5.0
    assert np.allclose(q.d2(0, 0).value, 2.0, atol=0.0)
    assert np.allclose(q.d2(1, 1).value, -4.0, atol=0.0)
    assert np.allclose(q.d2(0, 1).value, 3.0, atol=0.0)
    assert np.allclose(q.dx(0).value, 2.0 * pts[:, 0] + 3.0 * pts[:, 1] + 1.0, rtol=1e-15)


def test_polynomial_jet_product_rule():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1.5, 1.5, size=(50, 2))
    xv, yv = pts[:, 0], pts[:, 1]
    x, y = coordinate_jets(pts)
    f = x * x * y + y  # x^2 y + y
    np.testing.assert_allclose(f.values(), xv * xv * yv + yv, rtol=1e-14)
    np.testing.assert_allclose(f.dx(0).value, 2 * xv * yv, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(f.dx(1).value, xv * xv + 1.0, rtol=1e-14)
    np.testing.assert_allclose(f.d2(0, 0).value, 2 * yv, rtol=1e-14)
    np.testing.assert_allclose(f.d2(0, 1).value, 2 * xv, rtol=1e-14)
    np.testing.assert_allclose(f.d2(1, 1).value, 0.0, atol=1e-15)


def test_first_jet_arithmetic_matches_hand_derivatives():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.2, 1.2, size=(40, 2))
    xv, yv = pts[:, 0], pts[:, 1]
    xj, yj = (j.first() for j in coordinate_jets(pts))

    expr = (xj * xj * yj + yj.exp()) / (xj * xj + 1.0)
    num = xv * xv * yv + np.exp(yv)
    den = xv * xv + 1.0
    np.testing.assert_allclose(expr.f.value, num / den, rtol=1e-14)
    fx = (2 * xv * yv * den - num * 2 * xv) / den**2
    fy = (xv * xv + np.exp(yv)) / den
    np.testing.assert_allclose(expr.dx(0).value, fx, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(expr.dx(1).value, fy, rtol=1e-12, atol=1e-14)

    root = (xj * xj + yj * yj + 0.5).sqrt()
    rv = np.sqrt(xv**2 + yv**2 + 0.5)
    np.testing.assert_allclose(root.f.value, rv, rtol=1e-14)
    np.testing.assert_allclose(root.dx(0).value, xv / rv, rtol=1e-13)

    powed = (xj * xj + 0.5) ** 0.3
    np.testing.assert_allclose(
        powed.dx(0).value, 0.3 * (xv**2 + 0.5) ** (-0.7) * 2 * xv, rtol=1e-12, atol=1e-14
    )


def test_first_jet_division_and_constants():
    pts = np.array([[0.3, -0.7], [1.1, 0.4]])
    xj, yj = (j.first() for j in coordinate_jets(pts))
    xv, yv = pts[:, 0], pts[:, 1]
    expr = 2.0 / (yj * yj + 1.0) - xj * 3.0 + 1.0
    np.testing.assert_allclose(expr.f.value, 2.0 / (yv**2 + 1.0) - 3.0 * xv + 1.0, rtol=1e-14)
    np.testing.assert_allclose(
        expr.dx(1).value, -4.0 * yv / (yv**2 + 1.0) ** 2, rtol=1e-13
    )
    np.testing.assert_allclose(expr.dx(0).value, -3.0, rtol=1e-15)


def test_spatial_jet_from_arrays_shape_validation():
    with pytest.raises(ValueError):
        SpatialJet(np.zeros(3), np.zeros((2, 3)), np.zeros((5, 3)), 2)
