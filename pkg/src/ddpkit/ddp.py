"""DDP / iLQR trajectory optimization.

Backward value recursion over a quadratic expansion of the cost-to-go,
forward rollout with a backtracking line search, and a multiplicative
regularization schedule on the control Hessian. The two modes share all
plumbing and differ in one place: DDP adds the costate-contracted dynamics
curvature blocks to the Q-expansion, iLQR drops them.

Second-order dynamics terms depend on the costate, which is only known
mid-recursion, so per-step derivatives are handed to the backward pass as
`StepDerivs` objects: the first-order part is precomputed once per
iteration, the curvature blocks are produced on demand from the cached
first-order context.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .derivs import DynDerivs, engine_for, family_of

RHO_FLOOR = 1e-10
RHO_CAP = 1e8
RHO_UP = 10.0
RHO_DOWN = 0.5
LINE_SEARCH_EPS = tuple(0.5 ** k for k in range(11))
ARMIJO_C1 = 1e-4


@dataclass(frozen=True)
class OcpProblem:
    """Finite-horizon swing-up style optimal control problem.

    Cost: sum_k 1/2 (x_k - x_ref)' Qx_w (x_k - x_ref) + 1/2 u_k' R_w u_k
    plus the terminal 1/2 (x_N - x_ref)' Qf_w (x_N - x_ref).
    """

    model: object
    horizon: int
    h: float
    Qx_w: np.ndarray
    R_w: np.ndarray
    Qf_w: np.ndarray
    x_ref: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        r = np.asarray(self.R_w, dtype=float)
        if not np.all(np.linalg.eigvalsh(0.5 * (r + r.T)) > 0.0):
            raise ValueError("control weight must be positive definite")


@dataclass
class Trajectory:
    xs: np.ndarray  # (N+1, 2n)
    us: np.ndarray  # (N, m)


@dataclass(frozen=True)
class QExpansion:
    Qx: np.ndarray
    Qu: np.ndarray
    Qxx: np.ndarray
    Quu: np.ndarray
    Qux: np.ndarray


@dataclass(frozen=True)
class ValueExpansion:
    Vx: np.ndarray
    Vxx: np.ndarray
    ER: float


@dataclass
class GainSchedule:
    kappa: list  # N m-vectors (feedforward)
    K: list      # N m x 2n matrices (feedback)


@dataclass(frozen=True)
class CostExpansion:
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    luu: np.ndarray
    lux: np.ndarray


@dataclass(frozen=True)
class BackwardResult:
    gains: GainSchedule
    er: float
    ok: bool
    qu_norm: float  # sum over the horizon of the max-abs control gradient


@dataclass
class IterRecord:
    iteration: int
    cost: float
    er: float
    eps: float
    rho: float
    qu_norm: float
    accepted: bool


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    cost: float
    trajectory: Trajectory
    records: list = field(default_factory=list)
    mode: str = ""
    backend: str = ""

    @property
    def costs(self):
        return np.array([r.cost for r in self.records])


class StepDerivs:
    """Per-timestep derivative bundle for the backward pass.

    fx/fu are fixed for the iteration; curvature blocks are computed lazily
    because the contracting costate emerges during the recursion. A bundle
    without an engine (injected linear dynamics) has zero curvature.
    """

    __slots__ = ("x", "u", "fx", "fu", "_engine", "_ctx", "_h", "_backend")

    def __init__(self, x, u, fx, fu, engine=None, ctx=None, h=0.0,
                 backend="modrnea2"):
        self.x = x
        self.u = u
        self.fx = fx
        self.fu = fu
        self._engine = engine
        self._ctx = ctx
        self._h = h
        self._backend = backend

    def first_only(self):
        return DynDerivs.first_order(self.fx, self.fu, "first")

    def second_order(self, lam):
        if self._engine is None:
            return self.first_only()
        return self._engine.second_order(self.x, self.u, lam, self._h,
                                         backend=self._backend,
                                         first=(self.fx, self.fu),
                                         ctx=self._ctx)


def make_step_fn(model, h):
    """Explicit-Euler stepper backed by the model's forward-dynamics tape
    (bit-identical to the scalar evaluation path, much faster)."""
    eng = engine_for(model)
    n = eng.n
    s_map = eng.S
    fd3 = eng.fd3
    z = np.empty(3 * n)

    def step(x, u):
        z[:2 * n] = x
        z[2 * n:] = s_map @ u
        qdd = fd3.replay(z)
        out = np.empty(2 * n)
        out[:n] = x[:n] + h * x[n:]
        out[n:] = x[n:] + h * qdd
        return out

    return step


def make_deriv_provider(model, h, backend="modrnea2"):
    """First-order pass over a trajectory, bundled for the backward sweep."""
    eng = engine_for(model)
    family = family_of(backend)

    def provider(traj):
        steps = []
        for k in range(traj.us.shape[0]):
            x, u = traj.xs[k], traj.us[k]
            fx, fu, ctx = eng.first_order(x, u, h, family=family)
            steps.append(StepDerivs(x, u, fx, fu, engine=eng, ctx=ctx, h=h,
                                    backend=backend))
        return steps

    return provider


def rollout(problem, us, step_fn):
    """Open-loop rollout from the problem's initial state."""
    us = np.asarray(us, dtype=float)
    xs = np.empty((us.shape[0] + 1, problem.x0.size))
    xs[0] = problem.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(us.shape[0]):
            xs[k + 1] = step_fn(xs[k], us[k])
    if not np.all(np.isfinite(xs)):
        raise FloatingPointError("initial rollout diverged")
    return Trajectory(xs, us.copy())


def trajectory_cost(problem, traj):
    dx = traj.xs - problem.x_ref
    run_x = 0.5 * np.einsum("ki,ij,kj->", dx[:-1], problem.Qx_w, dx[:-1])
    run_u = 0.5 * np.einsum("ki,ij,kj->", traj.us, problem.R_w, traj.us)
    term = 0.5 * dx[-1] @ problem.Qf_w @ dx[-1]
    return run_x + run_u + term


def running_cost_expansion(problem, x, u):
    dx = x - problem.x_ref
    return CostExpansion(problem.Qx_w @ dx, problem.R_w @ u, problem.Qx_w,
                         problem.R_w,
                         np.zeros((u.size, x.size)))


def terminal_expansion(problem, x):
    dx = x - problem.x_ref
    return ValueExpansion(problem.Qf_w @ dx, np.asarray(problem.Qf_w,
                                                        dtype=float), 0.0)


def q_expansion(cost, derivs, vnext, mode):
    """Quadratic expansion of the one-step Bellman objective around the
    nominal point. iLQR keeps only first-order dynamics information; DDP
    adds the costate-contracted curvature."""
    fx, fu = derivs.fx, derivs.fu
    vxx_fx = vnext.Vxx @ fx
    qx = cost.lx + fx.T @ vnext.Vx
    qu = cost.lu + fu.T @ vnext.Vx
    qxx = cost.lxx + fx.T @ vxx_fx
    quu = cost.luu + fu.T @ (vnext.Vxx @ fu)
    qux = cost.lux + fu.T @ vxx_fx
    if mode == "ddp":
        n = derivs.Hqq.shape[0]
        qxx[:n, :n] += derivs.Hqq
        qxx[:n, n:] += derivs.Hqv
        qxx[n:, :n] += derivs.Hqv.T
        qxx[n:, n:] += derivs.Hvv
        qux[:, :n] += derivs.Hqu.T
    elif mode != "ilqr":
        raise ValueError(f"unknown mode {mode!r}")
    return QExpansion(qx, qu, qxx, quu, qux)


def backward_pass(problem, traj, steps, mode, rho):
    """Value recursion from the terminal expansion down to k = 0.

    Factorizes Quu + rho*I at every step; a failed factorization aborts
    with ok=False so the caller can raise rho. The expected-reduction
    accumulator and the gains use the same regularized inverse.
    """
    n_steps = len(steps)
    v = terminal_expansion(problem, traj.xs[-1])
    kappas = [None] * n_steps
    gains_k = [None] * n_steps
    er = 0.0
    qu_norm = 0.0
    m = steps[0].fu.shape[1] if n_steps else 0
    reg = rho * np.eye(m)
    rhs = np.empty((m, 1 + steps[0].fx.shape[0])) if n_steps else None
    for k in range(n_steps - 1, -1, -1):
        sd = steps[k]
        # iLQR reads only fx/fu, so the step bundle itself suffices
        dd = sd.second_order(v.Vx) if mode == "ddp" else sd
        cost = running_cost_expansion(problem, sd.x, sd.u)
        q = q_expansion(cost, dd, v, mode)
        try:
            cf = scipy.linalg.cho_factor(q.Quu + reg, lower=True,
                                         check_finite=False)
        except np.linalg.LinAlgError:
            return BackwardResult(GainSchedule([], []), 0.0, False, 0.0)
        rhs[:, 0] = q.Qu
        rhs[:, 1:] = q.Qux
        sol = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
        kap = sol[:, 0].copy()
        gain = sol[:, 1:].copy()
        kappas[k] = kap
        gains_k[k] = gain
        er += 0.5 * float(q.Qu @ kap)
        qu_norm += float(np.abs(q.Qu).max())
        vx = q.Qx - q.Qux.T @ kap
        vxx = q.Qxx - q.Qux.T @ gain
        vxx = 0.5 * (vxx + vxx.T)
        v = ValueExpansion(vx, vxx, er)
    return BackwardResult(GainSchedule(kappas, gains_k), er, True, qu_norm)


def forward_pass(problem, traj, gains, eps, step_fn):
    """Closed-loop rollout under the incremental policy
    u = u_nominal - eps*kappa - K (x - x_nominal). Non-finite states or
    cost reject the candidate."""
    n_steps = traj.us.shape[0]
    xs = np.empty_like(traj.xs)
    us = np.empty_like(traj.us)
    xs[0] = traj.xs[0]
    # overshooting candidates legitimately overflow; the isfinite checks
    # are the handler, so keep numpy quiet along this path
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            dx = xs[k] - traj.xs[k]
            us[k] = traj.us[k] - eps * gains.kappa[k] - gains.K[k] @ dx
            xs[k + 1] = step_fn(xs[k], us[k])
            if not np.all(np.isfinite(xs[k + 1])):
                return None, np.inf, False
        cand = Trajectory(xs, us)
        cost = trajectory_cost(problem, cand)
    if not np.isfinite(cost):
        return None, np.inf, False
    return cand, cost, True


def solve(problem, mode="ddp", backend="modrnea2", u_init=None,
          deriv_provider=None, step_fn=None, max_iter=500, tol_cost=1e-9,
          tol_grad=1e-9, armijo=False):
    """Iterate backward/forward passes until the accepted cost reduction or
    the summed control-gradient norm drops below tolerance.

    Regularization: rho starts at its floor, multiplies by 10 when the
    backward pass fails or the line search exhausts, halves (down to the
    floor) on success. Exceeding the cap aborts with converged=False.
    """
    if mode not in ("ddp", "ilqr"):
        raise ValueError(f"unknown mode {mode!r}")
    if step_fn is None:
        step_fn = make_step_fn(problem.model, problem.h)
    if deriv_provider is None:
        deriv_provider = make_deriv_provider(problem.model, problem.h,
                                             backend)
    if u_init is None:
        u_init = np.zeros((problem.horizon, problem.model.n_controls))
    traj = rollout(problem, u_init, step_fn)
    cost = trajectory_cost(problem, traj)
    rho = RHO_FLOOR
    records = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        steps = deriv_provider(traj)
        bw = backward_pass(problem, traj, steps, mode, rho)
        while not bw.ok:
            if rho >= RHO_CAP:
                records.append(IterRecord(it, cost, 0.0, 0.0, rho, 0.0,
                                          False))
                return SolveReport(False, it, cost, traj, records, mode,
                                   backend)
            rho = min(rho * RHO_UP, RHO_CAP)
            bw = backward_pass(problem, traj, steps, mode, rho)
        if bw.qu_norm < tol_grad:
            records.append(IterRecord(it, cost, bw.er, 0.0, rho, bw.qu_norm,
                                      True))
            converged = True
            break
        accepted = False
        for eps in LINE_SEARCH_EPS:
            cand, cand_cost, ok = forward_pass(problem, traj, bw.gains, eps,
                                               step_fn)
            if not ok:
                continue
            reduction = cost - cand_cost
            if reduction <= 0.0:
                continue
            if armijo and reduction < ARMIJO_C1 * eps * bw.er:
                continue
            traj = cand
            delta = reduction
            cost = cand_cost
            records.append(IterRecord(it, cost, bw.er, eps, rho, bw.qu_norm,
                                      True))
            rho = max(rho * RHO_DOWN, RHO_FLOOR)
            accepted = True
            break
        if not accepted:
            records.append(IterRecord(it, cost, bw.er, 0.0, rho, bw.qu_norm,
                                      False))
            if rho >= RHO_CAP:
                return SolveReport(False, it, cost, traj, records, mode,
                                   backend)
            rho = min(rho * RHO_UP, RHO_CAP)
            continue
        if delta < tol_cost:
            converged = True
            break
    return SolveReport(converged, it, cost, traj, records, mode, backend)
