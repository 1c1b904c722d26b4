import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvb.diagnostics import stability_constants
from kdvb.grid import DomainError, make_grid, trapezoid_weights, x0_norm
from kdvb.kernel import KernelPair, solve_kernel_pair
from kdvb.transform import (
    StatePair,
    TargetPair,
    TransformError,
    apply_K,
    apply_S,
    build_inverse_operators,
    feedback_f,
    feedback_g,
    forward_transform,
    inverse_transform,
)


@pytest.fixture(scope="module")
def solved():
    kp = solve_kernel_pair(make_grid(1.0, 81), 1.0)
    return kp, build_inverse_operators(kp)


def smooth_state(g, rng, modes=5):
    x = g.nodes / g.length
    out = []
    for _ in range(2):
        c = rng.standard_normal(modes) / np.arange(1, modes + 1) ** 2
        out.append(sum(ci * np.sin((i + 1) * np.pi * x) for i, ci in enumerate(c)))
    return StatePair(out[0], out[1])


def synthetic(g, k=None, s=None):
    X, Y = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    z = np.zeros_like(X)
    return KernelPair.from_fields(g, 1.0, k(X, Y) if k else z, s(X, Y) if s else z)


@pytest.mark.parametrize("op,field", [(apply_K, "k"), (apply_S, "s")])
def test_apply_examples(op, field):
    g = make_grid(1.0, 201)
    kp = synthetic(g, **{field: lambda X, Y: X * Y})
    assert np.all(op(kp, np.zeros(g.n)) == 0)
    assert np.abs(op(kp, np.ones(g.n)) - g.nodes / 2).max() < 1e-4
    zero = KernelPair.zero(g)
    assert np.all(op(zero, np.sin(g.nodes)) == 0)
    with pytest.raises(DomainError):
        op(kp, np.ones(g.n - 1))


def test_forward_examples(rng):
    g = make_grid(1.0, 41)
    kp = synthetic(g, k=lambda X, Y: np.sin(X + Y), s=lambda X, Y: X - Y**2)
    tp = forward_transform(kp, StatePair(np.zeros(g.n), np.zeros(g.n)))
    assert np.all(tp.u == 0) and np.all(tp.v == 0)
    z = smooth_state(g, rng)
    tp = forward_transform(KernelPair.zero(g), z)
    assert np.array_equal(tp.u, z.eta) and np.array_equal(tp.v, z.w)
    eta = z.eta
    tp = forward_transform(kp, StatePair(eta, eta, 2.5))
    expect = eta - apply_K(kp, eta) - apply_S(kp, eta)
    assert np.allclose(tp.u, expect, atol=1e-14) and np.allclose(tp.v, expect, atol=1e-14)
    assert tp.t == 2.5
    with pytest.raises(DomainError):
        forward_transform(kp, StatePair(np.zeros(5), np.zeros(5)))


def test_identity_inverse_operators():
    g = make_grid(1.0, 21)
    inv = build_inverse_operators(KernelPair.zero(g))
    assert inv.cond_plus == pytest.approx(1.0) and inv.cond_minus == pytest.approx(1.0)
    z = inverse_transform(inv, TargetPair(np.zeros(g.n), np.zeros(g.n)))
    assert np.all(z.eta == 0) and np.all(z.w == 0)
    u, v = np.sin(g.nodes), np.cos(g.nodes)
    z = inverse_transform(inv, TargetPair(u, v))
    # exact up to rounding of the sum/difference split
    ulp = 4 * np.finfo(float).eps
    assert np.abs(z.eta - u).max() <= ulp and np.abs(z.w - v).max() <= ulp


def test_singular_transform_rejected():
    g = make_grid(1.0, 11)
    wts = trapezoid_weights(g)
    # K_h = e 1^T W / L: rank one with eigenvalue 1 on constants, so I - K_h is singular
    k = np.ones((g.n, g.n)) / g.length
    kp = KernelPair.from_fields(g, 1.0, k, np.zeros_like(k))
    assert abs(wts.sum() - g.length) < 1e-14
    with pytest.raises(TransformError, match="not invertible"):
        build_inverse_operators(kp)


def test_solved_factorizations_succeed(solved):
    kp, inv = solved
    assert np.isfinite(inv.cond_plus) and inv.cond_plus >= 1
    assert np.isfinite(inv.cond_minus) and inv.cond_minus >= 1


def test_round_trip(solved, rng):
    kp, inv = solved
    for _ in range(20):
        z = smooth_state(kp.g, rng)
        back = inverse_transform(inv, forward_transform(kp, z))
        err = np.linalg.norm(np.r_[back.eta - z.eta, back.w - z.w])
        assert err <= 1e-8 * np.linalg.norm(z.stacked())


def test_norm_equivalence(solved, rng):
    kp, inv = solved
    C1 = stability_constants(kp, inv, kp.g).C1
    g = kp.g
    for _ in range(100):
        z = StatePair(rng.standard_normal(g.n), rng.standard_normal(g.n))
        tp = forward_transform(kp, z)
        assert x0_norm(z.eta, z.w, g) ** 2 <= C1 * x0_norm(tp.u, tp.v, g) ** 2 + 1e-10


def test_feedback_examples():
    g = make_grid(1.0, 201)
    zero_state = StatePair(np.zeros(g.n), np.zeros(g.n))
    kp = synthetic(g, k=lambda X, Y: X * (1 - X))  # k_x(0, y) = 1, k_x(L, y) = -1
    assert feedback_f(kp, zero_state) == 0.0
    assert feedback_g(kp, zero_state) == 0.0
    s = np.sin(np.pi * g.nodes)
    assert abs(feedback_f(kp, StatePair(s, np.zeros(g.n))) - 2 / np.pi) < 1e-4
    assert abs(feedback_g(kp, StatePair(np.zeros(g.n), s)) + 2 / np.pi) < 1e-4
    zero = KernelPair.zero(g)
    assert feedback_f(zero, StatePair(s, s)) == 0.0
    assert feedback_g(zero, StatePair(s, s)) == 0.0


def test_feedback_cauchy_schwarz(solved, rng):
    kp, _ = solved
    g = kp.g
    wts = trapezoid_weights(g)
    tf = np.sqrt(wts @ (kp.trace_kx0**2 + kp.trace_sx0**2))
    tg = np.sqrt(wts @ (kp.trace_kxL**2 + kp.trace_sxL**2))
    for _ in range(20):
        z = StatePair(rng.standard_normal(g.n), rng.standard_normal(g.n))
        nz = x0_norm(z.eta, z.w, g)
        assert abs(feedback_f(kp, z)) <= tf * nz * (1 + 1e-12)
        assert abs(feedback_g(kp, z)) <= tg * nz * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    g = make_grid(1.0, 15)
    kp = KernelPair.from_fields(g, 1.0, rng.standard_normal((15, 15)), rng.standard_normal((15, 15)))
    z1 = StatePair(rng.standard_normal(15), rng.standard_normal(15))
    z2 = StatePair(rng.standard_normal(15), rng.standard_normal(15))
    zc = StatePair(a * z1.eta + b * z2.eta, a * z1.w + b * z2.w)
    t1, t2, tc = (forward_transform(kp, z) for z in (z1, z2, zc))
    scale = 1 + abs(a) + abs(b)
    assert np.allclose(tc.u, a * t1.u + b * t2.u, atol=1e-12 * scale * 50)
    assert np.allclose(tc.v, a * t1.v + b * t2.v, atol=1e-12 * scale * 50)
    for fb in (feedback_f, feedback_g):
        assert abs(fb(kp, zc) - a * fb(kp, z1) - b * fb(kp, z2)) < 1e-12 * scale * 50
