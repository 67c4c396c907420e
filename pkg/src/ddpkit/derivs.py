"""Derivative backends for the explicit-Euler rigid-body step.

Six interchangeable backends, selected by name:

  first order   aba1     Jacobian of the forward-dynamics tape
                rnea1    Jacobian of inverse dynamics, mapped through the
                         mass matrix by batched torque->acceleration replays
  second order  tensor   full per-output Hessians of forward dynamics,
                         assembled into third-order tensors and contracted
                         with the costate (cubic in joint count)
                aba2     Hessian blocks of the scalar eta . FD via
                         reverse-over-reverse on the forward-dynamics tape
                rnea2    curvature of FD recovered from the Hessian of
                         mu . ID plus mass-matrix derivative corrections
                modrnea2 rnea2 with the contracted inverse-dynamics scalar
                         evaluated by the single-pass algorithm

The step map is F(x, u) = (q + h qd, qd + h FD(q, qd, S u)) with x = (q, qd)
and S the actuation map. Its position rows are linear in the state, so a
costate lam = (xi, eta) contracts the step's second derivative through eta
alone; every curvature block below is h times an eta-contracted second
derivative of FD.

Block conventions (n = joints, m = controls):
  Hqq[i,j] = h * eta . d2FD/dq_i dq_j          (n x n, symmetric)
  Hqv[i,j] = h * eta . d2FD/dq_i dqd_j         (n x n, rows q, cols qd)
  Hvv[i,j] = h * eta . d2FD/dqd_i dqd_j        (n x n, symmetric)
  Hqu[i,a] = h * eta . d2FD/dq_i du_a          (n x m)
Blocks in qd x u and u x u vanish identically because dFD/dtau = Minv(q)
depends on q only.

The inverse-dynamics route uses, with mu = Minv eta and N = dFD/dq,
Psi = dFD/dqd, Xi = Minv, G = d(M mu)/dq, all evaluated at the step's
nominal acceleration:
  Hqq = -h (B + G'N + N'G)      B = (q,q)-Hessian of mu . ID
  Hqv = -h (Hess_q,qd[mu . ID] + G'Psi)
  Hvv = -h  Hess_qd,qd[mu . ID]
  Hqu = -h  G' Xi S
(X' denotes transpose). These follow from differentiating the identity
ID(q, qd, FD(q, qd, tau)) = tau twice; the inverse-dynamics Hessians cost
the same order as the first-order Jacobians.

All tapes are recorded once per model and reused; the costate enters the
scalar tapes through dedicated input slots, so no re-recording happens
inside the solver loop.
"""

import weakref
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels as _K
from .dynamics import _aba_core, _compiled, _modrnea_core, _rnea_core
from .tape import HessianTape, dot, record

FIRST_ORDER_BACKENDS = ("aba1", "rnea1")
SECOND_ORDER_BACKENDS = ("tensor", "aba2", "rnea2", "modrnea2")
BACKENDS = FIRST_ORDER_BACKENDS + SECOND_ORDER_BACKENDS

# first-order family each second-order backend shares its Jacobian pass with
_FAMILY = {"tensor": "aba", "aba2": "aba", "rnea2": "rnea",
           "modrnea2": "rnea", "aba1": "aba", "rnea1": "rnea"}


def family_of(backend):
    """Jacobian-route family ("aba" or "rnea") used by a backend."""
    try:
        return _FAMILY[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}") from None


@dataclass(frozen=True)
class CostateSplit:
    """Costate vector split into its position and velocity halves."""

    xi: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_vector(cls, lam, n):
        lam = np.asarray(lam, dtype=float).ravel()
        if lam.shape != (2 * n,):
            raise ValueError(f"costate must have length {2 * n}")
        return cls(lam[:n].copy(), lam[n:].copy())


class DynDerivs(NamedTuple):
    """Step-map derivatives at one (x, u, costate) point.

    fx, fu are the state/control Jacobians of the Euler step. The H blocks
    are the costate-contracted second derivatives (see module docstring);
    they are zero for first-order-only modes. A tuple rather than a
    dataclass: one of these is built per trajectory step per solver
    iteration.
    """

    fx: np.ndarray
    fu: np.ndarray
    Hqq: np.ndarray
    Hvv: np.ndarray
    Hqv: np.ndarray
    Hqu: np.ndarray
    mode: str

    @classmethod
    def first_order(cls, fx, fu, mode):
        n = fx.shape[0] // 2
        m = fu.shape[1]
        z = np.zeros((n, n))
        return cls(fx, fu, z, z.copy(), z.copy(), np.zeros((n, m)), mode)

    def lam_fxx(self):
        """Contracted state-state curvature, symmetric 2n x 2n."""
        n = self.Hqq.shape[0]
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = self.Hqq
        out[:n, n:] = self.Hqv
        out[n:, :n] = self.Hqv.T
        out[n:, n:] = self.Hvv
        return out

    def lam_fux(self):
        """Contracted control-state curvature, m x 2n (zero in the
        velocity columns)."""
        n, m = self.Hqu.shape
        out = np.zeros((m, 2 * n))
        out[:, :n] = self.Hqu.T
        return out

    def lam_fuu(self):
        m = self.Hqu.shape[1]
        return np.zeros((m, m))


class FirstOrderCtx(NamedTuple):
    """Shared byproducts of the first-order pass, reused by the
    second-order backends."""

    N: np.ndarray
    Psi: np.ndarray
    Xi: np.ndarray
    qdd0: np.ndarray
    tau: np.ndarray


class DerivEngine:
    """Per-model derivative evaluator with cached tapes.

    Recording happens at most once per tape kind per model (the dynamics
    graphs are branch-free, so one tape is valid at every evaluation
    point); per-call work is replays and reverse sweeps only.
    """

    def __init__(self, model):
        self.model = model
        self.cm = _compiled(model)
        self.n = model.n_bodies
        self.m = model.n_controls
        self.S = np.asarray(model.actuation, dtype=float)
        # constant index arrays and scratch shared across calls
        n = self.n
        self._eye_n = np.eye(n)
        self._rows_2n = np.arange(2 * n)
        self._w3 = np.empty((3 * n, 3 * n))
        self._jac3 = np.empty((n, 3 * n))
        self._z2 = np.empty(2 * n)
        self._z3 = np.empty(3 * n)
        self._z4 = np.empty(4 * n)
        self._cols_buf = np.empty((2 * n, 3 * n))
        self._th_jac = None
        m = self.m
        self._s_is_eye = n == m and np.array_equal(self.S, self._eye_n)

    # -- cached tapes --

    @cached_property
    def fd3(self):
        """(q, qd, tau) -> FD, nominal gravity."""
        n, cm = self.n, self.cm
        _, t = record(lambda z: _aba_core(cm, z[:n], z[n:2 * n], z[2 * n:],
                                          cm.a0_lin), np.zeros(3 * n))
        return t

    @cached_property
    def id3(self):
        """(q, qd, qdd) -> ID, nominal gravity."""
        n, cm = self.n, self.cm
        _, t = record(lambda z: _rnea_core(cm, z[:n], z[n:2 * n], z[2 * n:],
                                           cm.a0_lin), np.zeros(3 * n))
        return t

    @cached_property
    def fd0(self):
        """(q, w) -> Minv(q) w: gravity-free, velocity-free forward
        dynamics. Folding the zeros at record time keeps this tape small."""
        n, cm = self.n, self.cm
        zero = [0.0] * n
        _, t = record(lambda z: _aba_core(cm, z[:n], zero, z[n:],
                                          (0.0, 0.0, 0.0)), np.zeros(2 * n))
        return t

    @cached_property
    def mmu(self):
        """(q, w) -> M(q) w via gravity-free, velocity-free inverse
        dynamics."""
        n, cm = self.n, self.cm
        zero = [0.0] * n
        _, t = record(lambda z: _rnea_core(cm, z[:n], zero, z[n:],
                                           (0.0, 0.0, 0.0)), np.zeros(2 * n))
        return t

    @cached_property
    def h_fd(self):
        """Hessian machinery for s(q, qd, tau, eta) = eta . FD."""
        n, cm = self.n, self.cm

        def f(z):
            out = _aba_core(cm, z[:n], z[n:2 * n], z[2 * n:3 * n], cm.a0_lin)
            return dot(z[3 * n:], out)

        _, t = record(f, np.zeros(4 * n))
        return HessianTape(t)

    @cached_property
    def h_id(self):
        """Hessian machinery for s(q, qd, qdd, mu) = mu . ID."""
        n, cm = self.n, self.cm

        def f(z):
            out = _rnea_core(cm, z[:n], z[n:2 * n], z[2 * n:3 * n], cm.a0_lin)
            return dot(z[3 * n:], out)

        _, t = record(f, np.zeros(4 * n))
        return HessianTape(t)

    @cached_property
    def h_mod(self):
        """Same scalar as h_id, evaluated by the single-pass contracted
        inverse dynamics instead of a dot over full torques."""
        n, cm = self.n, self.cm
        _, t = record(lambda z: _modrnea_core(cm, z[:n], z[n:2 * n],
                                              z[2 * n:3 * n], cm.a0_lin,
                                              z[3 * n:]), np.zeros(4 * n))
        return HessianTape(t)

    @cached_property
    def tensor_h(self):
        """One Hessian tape per forward-dynamics output row."""
        return [HessianTape(self.fd3, gamma=np.eye(self.n)[i])
                for i in range(self.n)]

    # -- evaluation --

    def first_order(self, x, u, h, family="aba", dense=False):
        """Step Jacobians (fx, fu) plus the shared first-order context."""
        n, m = self.n, self.m
        x = np.asarray(x, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        tau = u.copy() if self._s_is_eye else self.S @ u
        z = self._z3
        z[:2 * n] = x
        z[2 * n:] = tau
        if family == "aba":
            qdd0, jac = self.fd3.jac_rows(z)
            N = jac[:, :n]
            Psi = jac[:, n:2 * n]
            Xi = jac[:, 2 * n:]
        elif family == "rnea":
            qdd0 = self.fd3.replay(z)
            z[2 * n:] = qdd0
            _, jac = self.id3.jac_rows(z, copy=False)
            if dense:
                minv = np.linalg.inv(jac[:, 2 * n:])
                N = -(minv @ jac[:, :n])
                Psi = -(minv @ jac[:, n:2 * n])
                Xi = minv
            else:
                # one batched replay maps all 3n columns through Minv
                cols = self._cols_buf
                cols[:n] = x[:n, None]
                cols[n:, :2 * n] = jac[:, :2 * n]
                cols[n:, 2 * n:] = self._eye_n
                mapped = self.fd0.replay_batch(cols)
                N = -mapped[:, :n]
                Psi = -mapped[:, n:2 * n]
                Xi = mapped[:, 2 * n:]
        else:
            raise ValueError(f"unknown first-order family {family!r}")
        fx, fu = self._assemble_step(h, N, Psi, Xi)
        return fx, fu, FirstOrderCtx(N, Psi, Xi, qdd0, tau)

    def _assemble_step(self, h, N, Psi, Xi):
        """Euler-step Jacobians from the acceleration partials."""
        n, m = self.n, self.m
        fx = np.empty((2 * n, 2 * n))
        fu = np.empty((2 * n, m))
        _K.assemble_step(N, Psi, Xi, self.S, h, fx, fu)
        return fx, fu

    def contracted_fd_hessian(self, x, u, eta):
        """Full eta-contracted second derivative of FD over (q, qd, tau),
        from the explicit per-row tensor route. 3n x 3n."""
        n = self.n
        x = np.asarray(x, dtype=float).ravel()
        tau = self.S @ np.asarray(u, dtype=float).ravel()
        z = np.concatenate([x, tau])
        eta = np.asarray(eta, dtype=float).ravel()
        w = np.zeros((3 * n, 3 * n))
        for i in range(n):
            _, hs = self.tensor_h[i].hessian_rows(z, copy=False)
            _K.add_scaled(w, hs, eta[i])
        return w

    def second_order(self, x, u, lam, h, backend="modrnea2", first=None,
                     ctx=None):
        """Full DynDerivs at one point; reuses a first-order pass when
        (first, ctx) are supplied."""
        if backend not in SECOND_ORDER_BACKENDS:
            raise ValueError(f"unknown second-order backend {backend!r}")
        n, m = self.n, self.m
        x = np.asarray(x, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        lam = np.asarray(lam, dtype=float).ravel()
        if lam.shape != (2 * n,):
            raise ValueError(f"costate must have length {2 * n}")
        eta = lam[n:]
        if backend == "tensor":
            # the gradient rows of the per-output Hessian tapes already
            # carry the full Jacobian, so no separate first-order pass
            z = self._z3
            z[:2 * n] = x
            z[2 * n:] = ctx.tau if ctx is not None else self.S @ u
            th = self._th_jac
            if th is None:
                th = self._th_jac = [t.t2.jac_rows for t in self.tensor_h]
            w = self._w3
            w.fill(0.0)
            if first is not None:
                fx, fu = first
                for i in range(n):
                    _, hs = th[i](z, None, False)
                    _K.add_scaled(w, hs, eta[i])
            else:
                jac = self._jac3
                for i in range(n):
                    g, hs = th[i](z, None, False)
                    jac[i] = g
                    _K.add_scaled(w, hs, eta[i])
                fx, fu = self._assemble_step(h, jac[:, :n], jac[:, n:2 * n],
                                             jac[:, 2 * n:])
            Hqq = h * w[:n, :n]
            Hqv = h * w[:n, n:2 * n]
            Hvv = h * w[n:2 * n, n:2 * n]
            Hqu = w[:n, 2 * n:] @ self.S
            Hqu *= h
            return DynDerivs(fx, fu, Hqq, Hvv, Hqv, Hqu, backend)
        if ctx is None:
            # standalone call: build the shared context by the cheapest
            # route (forward-dynamics tape). Callers that want a specific
            # Jacobian pass supply (first, ctx) from their own first_order.
            fx, fu, ctx = self.first_order(x, u, h, "aba")
        else:
            fx, fu = first
        z4 = self._z4
        z4[:2 * n] = x
        if backend == "aba2":
            z4[2 * n:3 * n] = ctx.tau
            z4[3 * n:] = eta
            _, hs = self.h_fd.hessian_rows(z4, self._rows_2n, False)
            Hqq = h * hs[:n, :n]
            Hqv = h * hs[:n, n:2 * n]
            Hvv = h * hs[n:, n:2 * n]
            Hqu = hs[:n, 2 * n:3 * n] @ self.S
            Hqu *= h
        else:
            z2 = self._z2
            z2[:n] = x[:n]
            z2[n:] = eta
            mu = self.fd0.replay(z2)
            z2[n:] = mu
            _, gj = self.mmu.jac_rows(z2, copy=False)
            G = gj[:, :n]
            ht = self.h_mod if backend == "modrnea2" else self.h_id
            z4[2 * n:3 * n] = ctx.qdd0
            z4[3 * n:] = mu
            _, h2 = ht.hessian_rows(z4, self._rows_2n, False)
            gt = G.T
            gtn = gt @ ctx.N
            Hqq = gtn + gtn.T
            Hqq += h2[:n, :n]
            Hqq *= -h
            Hqv = gt @ ctx.Psi
            Hqv += h2[:n, n:2 * n]
            Hqv *= -h
            Hvv = h2[n:, n:2 * n] * -h
            Hqu = gt @ ctx.Xi if self._s_is_eye else gt @ ctx.Xi @ self.S
            Hqu *= -h
        return DynDerivs(fx, fu, Hqq, Hvv, Hqv, Hqu, backend)


_ENGINES = weakref.WeakKeyDictionary()


def engine_for(model):
    """The shared DerivEngine for a model (tapes built once, reused)."""
    eng = _ENGINES.get(model)
    if eng is None:
        eng = DerivEngine(model)
        _ENGINES[model] = eng
    return eng


def first_order_aba(model, x, u, h):
    """Euler-step Jacobians from the forward-dynamics tape."""
    fx, fu, _ = engine_for(model).first_order(x, u, h, family="aba")
    return fx, fu


def first_order_rnea(model, x, u, h, dense=False):
    """Euler-step Jacobians from inverse-dynamics Jacobians mapped through
    the mass matrix. `dense` switches the mapping from batched
    torque-to-acceleration replays to an explicit inverse and dense
    products (cubic, sometimes faster at small n)."""
    fx, fu, _ = engine_for(model).first_order(x, u, h, family="rnea",
                                              dense=dense)
    return fx, fu


def second_order_tensor(model, x, u, lam, h):
    """Reference backend: explicit second-derivative tensors of forward
    dynamics contracted with the costate."""
    return engine_for(model).second_order(x, u, lam, h, backend="tensor")


def second_order_aba(model, x, u, lam, h):
    """Curvature blocks as Hessian rows of the scalar eta . FD."""
    return engine_for(model).second_order(x, u, lam, h, backend="aba2")


def second_order_rnea(model, x, u, lam, h, use_mod_rnea=False):
    """Curvature blocks through inverse dynamics; the flag evaluates the
    contracted scalar with the single-pass algorithm (identical algebra,
    smaller tape)."""
    backend = "modrnea2" if use_mod_rnea else "rnea2"
    return engine_for(model).second_order(x, u, lam, h, backend=backend)
