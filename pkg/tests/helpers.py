"""Shared oracles for the test suite: finite differences and dense
spatial-algebra forms."""

import numpy as np


def central_diff(f, x, eps=1e-6):
    """Central-difference Jacobian of f at x, one column per input."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = eps
        hi = np.asarray(f(x + d), dtype=float)
        lo = np.asarray(f(x - d), dtype=float)
        cols.append((hi - lo) / (2.0 * eps))
    return np.stack(cols, axis=-1)


def assert_deriv_close(got, ref, rel=1e-5, abs_tol=1e-7):
    """Entrywise check: relative tolerance on entries with magnitude above
    1e-8, absolute tolerance below that."""
    got = np.asarray(got, dtype=float)
    ref = np.asarray(ref, dtype=float)
    assert got.shape == ref.shape
    big = np.abs(ref) > 1e-8
    if big.any():
        err = np.abs(got[big] - ref[big]) / np.abs(ref[big])
        assert err.max() < rel, f"relative error {err.max():.3e}"
    if (~big).any():
        err = np.abs(got[~big] - ref[~big])
        assert err.max() < abs_tol, f"absolute error {err.max():.3e}"


def cross_motion_dense(v):
    """Dense 6x6 motion-space cross-product matrix [v x]."""
    w, u = v[:3], v[3:]
    wx = skew(w)
    out = np.zeros((6, 6))
    out[:3, :3] = wx
    out[3:, 3:] = wx
    out[3:, :3] = skew(u)
    return out


def skew(a):
    return np.array([[0.0, -a[2], a[1]],
                     [a[2], 0.0, -a[0]],
                     [-a[1], a[0], 0.0]])


def xform_dense(R, p):
    """Dense 6x6 motion transform for rotation R and translation p
    (child-from-parent, angular block first)."""
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[3:, :3] = -R @ skew(p)
    return out


def make_lq_problem(seed, s=4, m=2, horizon=40):
    """Random linear-quadratic problem plus its exact Riccati solution.

    Returns (problem, A, B, step_fn, gains) where gains[k] is the optimal
    feedback matrix at step k. The problem's model slot is None; callers
    inject step_fn and constant-Jacobian derivatives themselves.
    """
    from ddpkit.ddp import OcpProblem

    rng = np.random.default_rng(seed)
    A = np.eye(s) + 0.05 * rng.standard_normal((s, s))
    B = 0.1 * rng.standard_normal((s, m))
    Q = np.diag(rng.uniform(0.5, 1.5, s))
    R = np.diag(rng.uniform(0.1, 0.5, m))
    Qf = 10.0 * np.eye(s)
    x0 = rng.standard_normal(s)
    problem = OcpProblem(model=None, horizon=horizon, h=0.01, Qx_w=Q,
                         R_w=R, Qf_w=Qf, x_ref=np.zeros(s), x0=x0)

    def step_fn(x, u):
        return A @ x + B @ u

    gains = riccati_gains(A, B, Q, R, Qf, horizon)
    return problem, A, B, step_fn, gains


def riccati_gains(A, B, Q, R, Qf, horizon):
    """Finite-horizon discrete-time LQR feedback gains, dense recursion."""
    P = Qf.copy()
    gains = [None] * horizon
    for k in range(horizon - 1, -1, -1):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P = Q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        gains[k] = K
    return gains
