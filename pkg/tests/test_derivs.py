"""Derivative backends: hand-derived references, cross-backend agreement,
and finite-difference oracles of the actual step map."""

import numpy as np
import pytest

from ddpkit import derivs
from ddpkit.derivs import (BACKENDS, FIRST_ORDER_BACKENDS,
                           SECOND_ORDER_BACKENDS, CostateSplit, DerivEngine,
                           DynDerivs, engine_for, family_of, first_order_aba,
                           first_order_rnea, second_order_aba,
                           second_order_rnea, second_order_tensor)
from ddpkit.dynamics import step_euler
from ddpkit.rbmodel import build_pendubot, build_serial_arm
from helpers import assert_deriv_close, central_diff

H = 0.01


def rand_point(model, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    n, m = model.n_bodies, model.n_controls
    x = np.concatenate([rng.uniform(-np.pi, np.pi, n),
                        rng.standard_normal(n) * scale])
    u = rng.standard_normal(m) * scale
    lam = rng.standard_normal(2 * n)
    return x, u, lam


def test_one_link_hand_values():
    # uniform rod, m = l = 1: FD(q, qd, tau) = 3 tau - (3g/2) sin q, so at
    # the hanging state dFD/dq = -14.715 and dFD/dtau = 3
    model = build_serial_arm(1, masses=[1.0], lengths=[1.0])
    eng = DerivEngine(model)
    for family in ("aba", "rnea"):
        fx, fu, _ = eng.first_order(np.zeros(2), np.zeros(1), H, family)
        np.testing.assert_allclose(
            fx, [[1.0, H], [-14.715 * H, 1.0]], rtol=0, atol=1e-13)
        np.testing.assert_allclose(fu, [[0.0], [3.0 * H]], rtol=0,
                                   atol=1e-13)
    # d2FD/dq2 = (3g/2) sin q peaks at the horizontal pose
    x = np.array([np.pi / 2, 0.0])
    lam = np.array([0.0, 1.0])
    for backend in SECOND_ORDER_BACKENDS:
        so = eng.second_order(x, np.zeros(1), lam, H, backend)
        np.testing.assert_allclose(so.Hqq, [[14.715 * H]], rtol=0,
                                   atol=1e-12)
        np.testing.assert_allclose(so.Hvv, 0.0, atol=1e-12)
        np.testing.assert_allclose(so.Hqv, 0.0, atol=1e-12)


def test_first_order_families_agree():
    for model in (build_serial_arm(7), build_pendubot(3)):
        for seed in range(5):
            x, u, _ = rand_point(model, seed)
            fxa, fua = first_order_aba(model, x, u, H)
            fxr, fur = first_order_rnea(model, x, u, H)
            assert np.abs(fxa - fxr).max() < 1e-10
            assert np.abs(fua - fur).max() < 1e-10


def test_first_order_matches_step_finite_differences():
    model = build_serial_arm(7)
    x, u, _ = rand_point(model, 0)
    fx, fu = first_order_aba(model, x, u, H)
    fd_fx = central_diff(lambda xx: step_euler(model, xx, u, H), x)
    fd_fu = central_diff(lambda uu: step_euler(model, x, uu, H), u)
    assert_deriv_close(fx, fd_fx)
    assert_deriv_close(fu, fd_fu)


def test_dense_rnea_flag_matches_batched():
    model = build_serial_arm(5)
    x, u, _ = rand_point(model, 3)
    fx, fu = first_order_rnea(model, x, u, H)
    fxd, fud = first_order_rnea(model, x, u, H, dense=True)
    assert np.abs(fx - fxd).max() < 1e-12
    assert np.abs(fu - fud).max() < 1e-12


@pytest.mark.parametrize("n", [2, 4, 7])
def test_second_order_backends_agree_pairwise(n):
    model = build_serial_arm(n)
    eng = engine_for(model)
    for seed in range(20):
        x, u, lam = rand_point(model, seed)
        results = [eng.second_order(x, u, lam, H, b)
                   for b in SECOND_ORDER_BACKENDS]
        for blk in ("fx", "fu", "Hqq", "Hqv", "Hvv", "Hqu"):
            arrs = [getattr(r, blk) for r in results]
            scale = max(1.0, max(np.abs(a).max() for a in arrs))
            for other in arrs[1:]:
                assert np.abs(arrs[0] - other).max() < 1e-8 * scale, \
                    (blk, seed)


def test_underactuated_control_blocks():
    model = build_pendubot(3)
    eng = engine_for(model)
    x, u, lam = rand_point(model, 9)
    results = [eng.second_order(x, u, lam, H, b)
               for b in SECOND_ORDER_BACKENDS]
    for r in results[1:]:
        assert np.abs(results[0].Hqu - r.Hqu).max() < 1e-8
    assert results[0].Hqu.shape == (3, 2)
    fd_fu = central_diff(lambda uu: step_euler(model, x, uu, H), u)
    assert_deriv_close(results[0].fu, fd_fu)


def test_hessian_blocks_match_fd_of_contracted_jacobian():
    # FD of x -> fx(x)^T lam reproduces the contracted curvature blocks
    model = build_serial_arm(3)
    n = 3
    x, u, lam = rand_point(model, 1)
    eng = engine_for(model)

    def contracted_grad(xx):
        fx, fu, _ = eng.first_order(xx, u, H, "aba")
        return fx.T @ lam

    fd = central_diff(contracted_grad, x)  # (2n, 2n), rows d/dx of grad
    so = eng.second_order(x, u, lam, H, "modrnea2")
    full = so.lam_fxx()
    sym = 0.5 * (fd + fd.T)  # symmetrize FD noise
    scale = max(1.0, np.abs(full).max())
    assert np.abs(full - sym).max() < 1e-4 * scale

    def contracted_grad_u(uu):
        fx, fu, _ = eng.first_order(x, uu, H, "aba")
        return fx.T @ lam

    fd_qu = central_diff(contracted_grad_u, u)[:n]
    assert np.abs(so.Hqu - fd_qu).max() < 1e-4 * scale


def test_curvature_blocks_symmetric():
    for n in (2, 7):
        model = build_serial_arm(n)
        eng = engine_for(model)
        for seed in range(10):
            x, u, lam = rand_point(model, seed)
            for b in SECOND_ORDER_BACKENDS:
                so = eng.second_order(x, u, lam, H, b)
                assert np.abs(so.Hqq - so.Hqq.T).max() < 1e-12, b
                assert np.abs(so.Hvv - so.Hvv.T).max() < 1e-12, b


def test_velocity_torque_curvature_vanishes():
    # FD is linear in torque, so the (tau, tau) and (qd, tau) blocks of the
    # full contracted Hessian are exactly structural zeros
    for n in (2, 5):
        model = build_serial_arm(n)
        eng = engine_for(model)
        x, u, lam = rand_point(model, n)
        w = eng.contracted_fd_hessian(x, u, lam[n:])
        assert np.abs(w[2 * n:, 2 * n:]).max() < 1e-10
        assert np.abs(w[n:2 * n, 2 * n:]).max() < 1e-10
        assert np.abs(w - w.T).max() < 1e-12


def test_zero_costate_zeroes_curvature():
    model = build_serial_arm(4)
    eng = engine_for(model)
    x, u, _ = rand_point(model, 2)
    for b in SECOND_ORDER_BACKENDS:
        so = eng.second_order(x, u, np.zeros(8), H, b)
        for blk in (so.Hqq, so.Hqv, so.Hvv, so.Hqu):
            assert np.abs(blk).max() < 1e-14
    # a costate with only a position half contributes nothing either
    lam = np.concatenate([np.ones(4), np.zeros(4)])
    so = eng.second_order(x, u, lam, H, "aba2")
    assert np.abs(so.Hqq).max() < 1e-14


def test_supplied_context_matches_standalone():
    model = build_serial_arm(5)
    eng = engine_for(model)
    x, u, lam = rand_point(model, 6)
    fx, fu, ctx = eng.first_order(x, u, H, "aba")
    for b in ("aba2", "tensor"):
        alone = eng.second_order(x, u, lam, H, b)
        reused = eng.second_order(x, u, lam, H, b, first=(fx, fu), ctx=ctx)
        for a, r in zip(alone[:6], reused[:6]):
            np.testing.assert_array_equal(a, r)
    # the rnea-family context gives the same numbers within tolerance
    fxr, fur, ctxr = eng.first_order(x, u, H, "rnea")
    alone = eng.second_order(x, u, lam, H, "modrnea2")
    reused = eng.second_order(x, u, lam, H, "modrnea2", first=(fxr, fur),
                              ctx=ctxr)
    for a, r in zip(alone[:6], reused[:6]):
        assert np.abs(a - r).max() < 1e-9


def test_zero_stepsize_degenerates_cleanly():
    model = build_serial_arm(3)
    eng = engine_for(model)
    x, u, lam = rand_point(model, 8)
    fx, fu, _ = eng.first_order(x, u, 0.0, "aba")
    np.testing.assert_array_equal(fx, np.eye(6))
    np.testing.assert_array_equal(fu, np.zeros((6, 3)))
    so = eng.second_order(x, u, lam, 0.0, "rnea2")
    for blk in (so.Hqq, so.Hqv, so.Hvv, so.Hqu):
        assert np.abs(blk).max() == 0.0


def test_backend_names_and_errors():
    assert family_of("aba1") == "aba"
    assert family_of("aba2") == "aba"
    assert family_of("tensor") == "aba"
    assert family_of("rnea1") == "rnea"
    assert family_of("rnea2") == "rnea"
    assert family_of("modrnea2") == "rnea"
    with pytest.raises(ValueError):
        family_of("fd")
    assert set(BACKENDS) == set(FIRST_ORDER_BACKENDS) | set(
        SECOND_ORDER_BACKENDS)
    model = build_serial_arm(2)
    eng = engine_for(model)
    x, u, lam = rand_point(model, 0)
    with pytest.raises(ValueError):
        eng.second_order(x, u, lam, H, "aba1")
    with pytest.raises(ValueError):
        eng.first_order(x, u, H, family="tensor")
    with pytest.raises(ValueError):
        eng.second_order(x, u, lam[:2], H, "aba2")


def test_engine_cache_and_tape_reuse():
    model = build_serial_arm(2)
    assert engine_for(model) is engine_for(model)
    eng = engine_for(model)
    assert eng.fd3 is eng.fd3  # recorded once
    # module-level wrappers ride the shared engine
    x, u, lam = rand_point(model, 4)
    fx, fu = first_order_aba(model, x, u, H)
    fx2, fu2, _ = eng.first_order(x, u, H, "aba")
    np.testing.assert_array_equal(fx, fx2)
    so = second_order_tensor(model, x, u, lam, H)
    assert so.mode == "tensor"
    assert second_order_aba(model, x, u, lam, H).mode == "aba2"
    assert second_order_rnea(model, x, u, lam, H).mode == "rnea2"
    assert second_order_rnea(model, x, u, lam, H,
                             use_mod_rnea=True).mode == "modrnea2"


def test_dynderivs_assembly_helpers():
    fx = np.arange(16.0).reshape(4, 4)
    fu = np.arange(4.0).reshape(4, 1)
    d = DynDerivs.first_order(fx, fu, "aba1")
    assert d.mode == "aba1"
    np.testing.assert_array_equal(d.lam_fxx(), np.zeros((4, 4)))
    np.testing.assert_array_equal(d.lam_fuu(), np.zeros((1, 1)))
    np.testing.assert_array_equal(d.lam_fux(), np.zeros((1, 4)))
    model = build_serial_arm(2)
    x, u, lam = rand_point(model, 5)
    so = engine_for(model).second_order(x, u, lam, H, "aba2")
    full = so.lam_fxx()
    np.testing.assert_array_equal(full[:2, :2], so.Hqq)
    np.testing.assert_array_equal(full[:2, 2:], so.Hqv)
    np.testing.assert_array_equal(full[2:, :2], so.Hqv.T)
    np.testing.assert_array_equal(full[2:, 2:], so.Hvv)
    np.testing.assert_array_equal(so.lam_fux(), np.hstack(
        [so.Hqu.T, np.zeros((2, 2))]))


def test_costate_split():
    s = CostateSplit.from_vector(np.arange(6.0), 3)
    np.testing.assert_array_equal(s.xi, [0, 1, 2])
    np.testing.assert_array_equal(s.eta, [3, 4, 5])
    with pytest.raises(ValueError):
        CostateSplit.from_vector(np.arange(5.0), 3)
