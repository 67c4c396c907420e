"""Recursive rigid-body dynamics: RNEA, ABA, CRBA, and a single-pass
contracted inverse dynamics.

The algorithm cores are written over generic scalars (plain floats or
ddpkit.tape.ADScalar), so the same code evaluates numerically and records
derivative tapes. Spatial quantities are unrolled into Python lists of
scalars; constant operands (offsets, axes, inertia entries) fold at record
time, so axis-aligned chains produce compact tapes.

Gravity is handled the standard way: the base is given a fictitious
acceleration of -a_g, which injects gravitational forces through the
velocity/acceleration recursion.
"""

import weakref

import numpy as np

from .tape import cos, dot, fma, sin, value_of


class SingularInertiaError(ValueError):
    """Articulated inertia lost rank along a joint axis (non-physical
    model)."""


# ---- generic scalar helpers (floats or ADScalars) ----

def _mv3(e, v):
    """3x3 (row-major list of 9) times 3-vector."""
    return [e[0] * v[0] + e[1] * v[1] + e[2] * v[2],
            e[3] * v[0] + e[4] * v[1] + e[5] * v[2],
            e[6] * v[0] + e[7] * v[1] + e[8] * v[2]]


def _mv3t(e, v):
    """Transpose of a 3x3 (row-major) times 3-vector."""
    return [e[0] * v[0] + e[3] * v[1] + e[6] * v[2],
            e[1] * v[0] + e[4] * v[1] + e[7] * v[2],
            e[2] * v[0] + e[5] * v[1] + e[8] * v[2]]


def _cross(a, b):
    return [a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]]


def _add3(a, b):
    return [a[0] + b[0], a[1] + b[1], a[2] + b[2]]


def _sub3(a, b):
    return [a[0] - b[0], a[1] - b[1], a[2] - b[2]]


def _scale3(v, s):
    return [v[0] * s, v[1] * s, v[2] * s]


def _dot3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _mv66(m, x):
    """6x6 (row-major list of 36) times 6-list."""
    out = []
    for r in range(6):
        base = 6 * r
        acc = 0.0
        for k in range(6):
            acc = acc + m[base + k] * x[k]
        out.append(acc)
    return out


def _matmul3(a, b):
    """Product of two 3x3 row-major lists."""
    out = [0.0] * 9
    for r in range(3):
        for ccol in range(3):
            out[3 * r + ccol] = (a[3 * r] * b[ccol]
                                 + a[3 * r + 1] * b[3 + ccol]
                                 + a[3 * r + 2] * b[6 + ccol])
    return out


def _joint_rot(bc, c, s):
    """Child-from-parent rotation for body constants bc at cos/sin (c, s)."""
    ca, cb, cc = bc
    return [c * ca[k] + s * cb[k] + cc[k] for k in range(9)]


def _xform_motion_down(e, p, w, l):
    """Motion vector from parent to child coordinates; p is constant."""
    return _mv3(e, w), _mv3(e, _sub3(l, _cross(p, w)))


def _xform_force_up(e, p, n3, f3):
    """Force vector from child to parent coordinates; p is constant."""
    etf = _mv3t(e, f3)
    return _add3(_mv3t(e, n3), _cross(p, etf)), etf


def _congruence_up(e, p, ia):
    """Parent-frame image X^T Ia X of a 6x6 inertia (row-major list of 36)
    under the child-from-parent motion transform (e, p)."""
    a = [ia[6 * r + k] for r in range(3) for k in range(3)]
    b = [ia[6 * r + k + 3] for r in range(3) for k in range(3)]
    cblk = [ia[6 * (r + 3) + k] for r in range(3) for k in range(3)]
    d = [ia[6 * (r + 3) + k + 3] for r in range(3) for k in range(3)]
    rx = [0.0, -p[2], p[1], p[2], 0.0, -p[0], -p[1], p[0], 0.0]
    g = _matmul3(e, rx)
    p1 = [a_ - b_ for a_, b_ in zip(_matmul3(a, e), _matmul3(b, g))]
    p2 = _matmul3(b, e)
    p3 = [a_ - b_ for a_, b_ in zip(_matmul3(cblk, e), _matmul3(d, g))]
    p4 = _matmul3(d, e)
    et = [e[0], e[3], e[6], e[1], e[4], e[7], e[2], e[5], e[8]]
    q3 = _matmul3(et, p3)
    q4 = _matmul3(et, p4)
    tl = [a_ + b_ for a_, b_ in zip(_matmul3(et, p1), _matmul3(rx, q3))]
    tr = [a_ + b_ for a_, b_ in zip(_matmul3(et, p2), _matmul3(rx, q4))]
    out = [0.0] * 36
    for r in range(3):
        for k in range(3):
            out[6 * r + k] = tl[3 * r + k]
            out[6 * r + k + 3] = tr[3 * r + k]
            out[6 * (r + 3) + k] = q3[3 * r + k]
            out[6 * (r + 3) + k + 3] = q4[3 * r + k]
    return out


# ---- model compilation ----

class _CompiledModel:
    """Per-body constants extracted once per RigidBodyModel."""

    def __init__(self, model):
        self.n = model.n_bodies
        self.parent = [int(p) for p in model.parent]
        self.axis = []
        self.rotc = []
        self.p0 = []
        self.i6 = []
        for i in range(self.n):
            u = [float(x) for x in model.joint_axis[i, :3]]
            self.axis.append(u)
            r0t = model.frame_offset[i].rotation.T
            eye_uu = np.eye(3) - np.outer(u, u)
            ux = np.array([[0.0, -u[2], u[1]],
                           [u[2], 0.0, -u[0]],
                           [-u[1], u[0], 0.0]])
            self.rotc.append((
                tuple((eye_uu @ r0t).ravel()),
                tuple((-ux @ r0t).ravel()),
                tuple((np.outer(u, u) @ r0t).ravel()),
            ))
            self.p0.append(tuple(float(x)
                                 for x in model.frame_offset[i].translation))
            ine = model.inertia[i]
            cx = np.array([[0.0, -ine.com[2], ine.com[1]],
                           [ine.com[2], 0.0, -ine.com[0]],
                           [-ine.com[1], ine.com[0], 0.0]])
            i66 = np.zeros((6, 6))
            i66[:3, :3] = ine.rot_inertia + ine.mass * (cx @ cx.T)
            i66[:3, 3:] = ine.mass * cx
            i66[3:, :3] = ine.mass * cx.T
            i66[3:, 3:] = ine.mass * np.eye(3)
            self.i6.append(tuple(i66.ravel()))
        self.a0_lin = tuple(-float(g) for g in model.gravity)


_compiled_cache = weakref.WeakKeyDictionary()


def _compiled(model):
    cm = _compiled_cache.get(model)
    if cm is None:
        cm = _CompiledModel(model)
        _compiled_cache[model] = cm
    return cm


# ---- algorithm cores over generic scalars ----

def _fwd_body(cm, i, q_i, qd_i, v, a_lists, qdd_i, a0_lin):
    """Shared forward step: returns (E, vJ angular, v_i, a_i)."""
    c = cos(q_i)
    s = sin(q_i)
    e = _joint_rot(cm.rotc[i], c, s)
    u = cm.axis[i]
    wj = _scale3(u, qd_i)
    p = cm.p0[i]
    par = cm.parent[i]
    if par < 0:
        vw, vl = wj, [0.0, 0.0, 0.0]
        xw, xl = _xform_motion_down(e, p, [0.0, 0.0, 0.0], list(a0_lin))
        aw = _add3(xw, _scale3(u, qdd_i))
        al = xl
    else:
        pw, pl = v[par]
        xw, xl = _xform_motion_down(e, p, pw, pl)
        vw = _add3(xw, wj)
        vl = xl
        aw_x, al_x = _xform_motion_down(e, p, a_lists[par][0], a_lists[par][1])
        aw = _add3(_add3(aw_x, _scale3(u, qdd_i)), _cross(vw, wj))
        al = _add3(al_x, _cross(vl, wj))
    return e, (vw, vl), (aw, al)


def _body_force(cm, i, vw, vl, aw, al):
    """Newton-Euler wrench F = I a + v x* (I v) in body coordinates."""
    iv = _mv66(cm.i6[i], vw + vl)
    ia = _mv66(cm.i6[i], aw + al)
    fn = _add3(ia[:3], _add3(_cross(vw, iv[:3]), _cross(vl, iv[3:])))
    ff = _add3(ia[3:], _cross(vw, iv[3:]))
    return fn, ff


def _rnea_core(cm, q, qd, qdd, a0_lin):
    n = cm.n
    es = [None] * n
    v = [None] * n
    a = [None] * n
    f = [None] * n
    for i in range(n):
        e, vi, ai = _fwd_body(cm, i, q[i], qd[i], v, a, qdd[i], a0_lin)
        es[i] = e
        v[i] = vi
        a[i] = ai
        f[i] = list(_body_force(cm, i, vi[0], vi[1], ai[0], ai[1]))
    tau = [None] * n
    for i in range(n - 1, -1, -1):
        fn, ff = f[i]
        tau[i] = _dot3(cm.axis[i], fn)
        par = cm.parent[i]
        if par >= 0:
            gn, gf = _xform_force_up(es[i], cm.p0[i], fn, ff)
            f[par][0] = _add3(f[par][0], gn)
            f[par][1] = _add3(f[par][1], gf)
    return tau


def _modrnea_core(cm, q, qd, qdd, a0_lin, mu):
    """Contracted inverse dynamics mu . tau in one forward pass.

    Swapping the two sums of mu . tau = sum_i mu_i S_i . f_i turns the
    force gather into a propagated motion vector w: each body adds its own
    S_i mu_i, inherits the parent's w, and contributes w . F_i."""
    n = cm.n
    v = [None] * n
    a = [None] * n
    w = [None] * n
    acc = 0.0
    for i in range(n):
        e, vi, ai = _fwd_body(cm, i, q[i], qd[i], v, a, qdd[i], a0_lin)
        v[i] = vi
        a[i] = ai
        par = cm.parent[i]
        wj = _scale3(cm.axis[i], mu[i])
        if par < 0:
            ww, wl = wj, [0.0, 0.0, 0.0]
        else:
            xw, xl = _xform_motion_down(e, cm.p0[i], w[par][0], w[par][1])
            ww = _add3(xw, wj)
            wl = xl
        w[i] = (ww, wl)
        fn, ff = _body_force(cm, i, vi[0], vi[1], ai[0], ai[1])
        acc = acc + _dot3(ww, fn) + _dot3(wl, ff)
    return acc


def _aba_core(cm, q, qd, tau, a0_lin):
    n = cm.n
    es = [None] * n
    v = [None] * n
    cb = [None] * n
    ia = [None] * n
    pa = [None] * n
    for i in range(n):
        c = cos(q[i])
        s = sin(q[i])
        e = _joint_rot(cm.rotc[i], c, s)
        es[i] = e
        u = cm.axis[i]
        wj = _scale3(u, qd[i])
        par = cm.parent[i]
        if par < 0:
            vw, vl = wj, [0.0, 0.0, 0.0]
            cbw, cbl = [0.0] * 3, [0.0] * 3
        else:
            pw, pl = v[par]
            xw, xl = _xform_motion_down(e, cm.p0[i], pw, pl)
            vw = _add3(xw, wj)
            vl = xl
            cbw = _cross(vw, wj)
            cbl = _cross(vl, wj)
        v[i] = (vw, vl)
        cb[i] = cbw + cbl
        ia[i] = list(cm.i6[i])
        iv = _mv66(cm.i6[i], vw + vl)
        pa[i] = _add3(_cross(vw, iv[:3]), _cross(vl, iv[3:])) \
            + _cross(vw, iv[3:])
    u6 = [None] * n
    dinv = [None] * n
    ubias = [None] * n
    for i in range(n - 1, -1, -1):
        u = cm.axis[i]
        iai = ia[i]
        ucol = [iai[6 * r] * u[0] + iai[6 * r + 1] * u[1]
                + iai[6 * r + 2] * u[2] for r in range(6)]
        d = _dot3(u, ucol[:3])
        d_val = value_of(d)
        if not d_val > 0.0:
            raise SingularInertiaError(
                f"articulated inertia singular along joint {i} "
                f"(d = {d_val!r})")
        dinv[i] = 1.0 / d
        u6[i] = ucol
        ubias[i] = tau[i] - _dot3(u, pa[i][:3])
        par = cm.parent[i]
        if par >= 0:
            t6 = [ucol[k] * dinv[i] for k in range(6)]
            red = [iai[6 * r + k] - t6[r] * ucol[k]
                   for r in range(6) for k in range(6)]
            pred = _mv66(red, cb[i])
            tu = ubias[i] * dinv[i]
            pai = pa[i]
            pa_out = [pai[k] + pred[k] + ucol[k] * tu for k in range(6)]
            gn, gf = _xform_force_up(es[i], cm.p0[i], pa_out[:3], pa_out[3:])
            pa[par] = _add3(pa[par][:3], gn) + _add3(pa[par][3:], gf)
            up = _congruence_up(es[i], cm.p0[i], red)
            ia[par] = [ia[par][k] + up[k] for k in range(36)]
    qdd = [None] * n
    acc = [None] * n
    for i in range(n):
        par = cm.parent[i]
        if par < 0:
            xw, xl = _xform_motion_down(es[i], cm.p0[i], [0.0, 0.0, 0.0],
                                        list(a0_lin))
            ap = xw + xl
        else:
            xw, xl = _xform_motion_down(es[i], cm.p0[i], acc[par][:3],
                                        acc[par][3:])
            ap = [xw[0] + cb[i][0], xw[1] + cb[i][1], xw[2] + cb[i][2],
                  xl[0] + cb[i][3], xl[1] + cb[i][4], xl[2] + cb[i][5]]
        num = ubias[i] - dot(u6[i], ap)
        qdd[i] = num * dinv[i]
        u = cm.axis[i]
        acc[i] = [ap[0] + u[0] * qdd[i], ap[1] + u[1] * qdd[i],
                  ap[2] + u[2] * qdd[i], ap[3], ap[4], ap[5]]
    return qdd


def _crba_core(cm, q):
    n = cm.n
    es = [None] * n
    for i in range(n):
        es[i] = _joint_rot(cm.rotc[i], cos(q[i]), sin(q[i]))
    ic = [list(cm.i6[i]) for i in range(n)]
    m = [[0.0] * n for _ in range(n)]
    for i in range(n - 1, -1, -1):
        u = cm.axis[i]
        ici = ic[i]
        f6 = [ici[6 * r] * u[0] + ici[6 * r + 1] * u[1]
              + ici[6 * r + 2] * u[2] for r in range(6)]
        m[i][i] = _dot3(u, f6[:3])
        fn, ff = f6[:3], f6[3:]
        j = i
        while cm.parent[j] >= 0:
            fn, ff = _xform_force_up(es[j], cm.p0[j], fn, ff)
            j = cm.parent[j]
            mij = _dot3(cm.axis[j], fn)
            m[i][j] = mij
            m[j][i] = mij
        par = cm.parent[i]
        if par >= 0:
            up = _congruence_up(es[i], cm.p0[i], ici)
            ic[par] = [ic[par][k] + up[k] for k in range(36)]
    return m


# ---- public interface (numeric, numpy in / numpy out) ----

def _check(model, vec, name):
    v = np.asarray(vec, dtype=float).ravel()
    if v.shape != (model.n_bodies,):
        raise ValueError(f"{name} must have length {model.n_bodies}")
    return v.tolist()


def _accel_base(model, a_g):
    g = model.gravity if a_g is None else np.asarray(a_g, dtype=float).ravel()
    if g.shape != (3,):
        raise ValueError("a_g must be a 3-vector")
    return (-float(g[0]), -float(g[1]), -float(g[2]))


def rnea(model, q, qd, qdd, a_g=None):
    """Inverse dynamics: joint torques realizing qdd at (q, qd). O(n)."""
    cm = _compiled(model)
    tau = _rnea_core(cm, _check(model, q, "q"), _check(model, qd, "qd"),
                     _check(model, qdd, "qdd"), _accel_base(model, a_g))
    return np.asarray(tau, dtype=float)


def aba(model, q, qd, tau, a_g=None):
    """Forward dynamics via articulated-body inertias. O(n)."""
    cm = _compiled(model)
    qdd = _aba_core(cm, _check(model, q, "q"), _check(model, qd, "qd"),
                    _check(model, tau, "tau"), _accel_base(model, a_g))
    return np.asarray(qdd, dtype=float)


def mod_rnea(model, q, qd, qdd, mu, a_g=None):
    """Contracted inverse dynamics mu . rnea(q, qd, qdd) without the
    backward force pass (single forward sweep)."""
    cm = _compiled(model)
    out = _modrnea_core(cm, _check(model, q, "q"), _check(model, qd, "qd"),
                        _check(model, qdd, "qdd"), _accel_base(model, a_g),
                        _check(model, mu, "mu"))
    return float(out)


def mass_matrix(model, q):
    """Joint-space inertia matrix via composite rigid bodies."""
    cm = _compiled(model)
    m = _crba_core(cm, _check(model, q, "q"))
    return np.asarray(m, dtype=float)


def step_euler(model, x, u, h):
    """Explicit Euler step of the state x = (q, qd) under controls u."""
    n = model.n_bodies
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (2 * n,):
        raise ValueError(f"state must have length {2 * n}")
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (model.n_controls,):
        raise ValueError(f"controls must have length {model.n_controls}")
    tau = model.actuation @ u
    qdd = aba(model, x[:n], x[n:], tau)
    out = np.empty_like(x)
    out[:n] = x[:n] + h * x[n:]
    out[n:] = x[n:] + h * qdd
    return out
