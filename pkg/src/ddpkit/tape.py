"""Tape-based reverse-mode automatic differentiation on scalar graphs.

`record` runs a Python function on `ADScalar` operands and captures every
arithmetic operation as a node of a `Tape`. A frozen tape is immutable and
topologically ordered; it can be replayed at new inputs (the graph is
branch-free, so one recording is valid everywhere), swept in reverse for
vector-Jacobian products, and re-recorded symbolically to obtain a second
tape whose outputs are the gradient; sweeping that tape yields exact second
derivatives (`vjp_grad`, `HessianTape`).

Supported primitives: +, -, *, /, integer powers, sin, cos, sqrt, fused
multiply-add (`fma`), inner products (`dot`), and branch-free `select`.
Anything else raises `TapeError` when it touches an `ADScalar`.

Frozen tapes are read-only; replay and sweep allocate per-call buffers, so
one tape may be shared across threads.
"""

import math

import numpy as np

from . import _kernels as _K
from ._kernels import (
    OP_ADD, OP_ADDC, OP_CONST, OP_COS, OP_DIV, OP_FMA, OP_INPUT, OP_MUL,
    OP_MULC, OP_NEG, OP_RDIVC, OP_SIN, OP_SQRT, OP_SUB,
)


class TapeError(Exception):
    """Recording hit an unsupported primitive or a malformed tape use."""


class ADScalar:
    """A scalar value bound to a tape node. Supports arithmetic with other
    scalars from the same tape and with plain Python floats (folded into
    constant-operand nodes; multiplications by 0/1 and additions of 0 emit
    nothing)."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    def __repr__(self):
        return f"ADScalar(idx={self.idx}, value={self.value})"

    def __add__(self, other):
        if isinstance(other, ADScalar):
            return self.tape._emit2(OP_ADD, self, other,
                                    self.value + other.value)
        c = float(other)
        if c == 0.0:
            return self
        return self.tape._emit1c(OP_ADDC, self, c, self.value + c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ADScalar):
            return self.tape._emit2(OP_SUB, self, other,
                                    self.value - other.value)
        c = float(other)
        if c == 0.0:
            return self
        return self.tape._emit1c(OP_ADDC, self, -c, self.value - c)

    def __rsub__(self, other):
        neg = self.tape._emit1(OP_NEG, self, -self.value)
        c = float(other)
        if c == 0.0:
            return neg
        return self.tape._emit1c(OP_ADDC, neg, c, c - self.value)

    def __mul__(self, other):
        if isinstance(other, ADScalar):
            return self.tape._emit2(OP_MUL, self, other,
                                    self.value * other.value)
        c = float(other)
        if c == 0.0:
            return 0.0
        if c == 1.0:
            return self
        if c == -1.0:
            return self.tape._emit1(OP_NEG, self, -self.value)
        return self.tape._emit1c(OP_MULC, self, c, self.value * c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, ADScalar):
            return self.tape._emit2(OP_DIV, self, other,
                                    self.value / other.value)
        # x / c is recorded as x * (1/c)
        return self.__mul__(1.0 / float(other))

    def __rtruediv__(self, other):
        c = float(other)
        if c == 0.0:
            return 0.0
        return self.tape._emit1c(OP_RDIVC, self, c, c / self.value)

    def __neg__(self):
        return self.tape._emit1(OP_NEG, self, -self.value)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TapeError("unsupported primitive: pow with non-integer "
                            "exponent (use sqrt for 0.5)")
        if k == 0:
            return 1.0
        if k < 0:
            return 1.0 / (self ** (-k))
        acc = self
        for _ in range(k - 1):
            acc = acc * self
        return acc

    def __float__(self):
        raise TapeError("unsupported primitive: ADScalar used where a plain "
                        "float is required (math.* calls are not recordable; "
                        "use the helpers in ddpkit.tape)")

    def _no_branch(self, other):
        raise TapeError("comparisons on ADScalar are not recordable; use "
                        "value_of() for record-time validation only")

    __lt__ = __le__ = __gt__ = __ge__ = _no_branch

    def __bool__(self):
        raise TapeError("ADScalar truth value is undefined; recorded "
                        "functions must be branch-free (see select())")


class Tape:
    """Append-only scalar operation graph; freeze() turns it into flat
    arrays interpreted by the kernels in ddpkit._kernels."""

    def __init__(self):
        self._ops = []
        self._pa = []
        self._pb = []
        self._pc = []
        self._cst = []
        self._vals = []
        self._out = None
        self.n_inputs = 0
        self.frozen = False

    # ---- recording ----

    def input(self, value):
        if self.frozen:
            raise TapeError("tape is frozen")
        if len(self._ops) != self.n_inputs:
            raise TapeError("all inputs must be declared before operations")
        self.n_inputs += 1
        return self._push(OP_INPUT, -1, -1, -1, 0.0, float(value))

    def _push(self, op, a, b, c, cst, val):
        idx = len(self._ops)
        self._ops.append(op)
        self._pa.append(a)
        self._pb.append(b)
        self._pc.append(c)
        self._cst.append(cst)
        self._vals.append(val)
        return ADScalar(self, idx, val)

    def _emit1(self, op, x, val):
        return self._push(op, x.idx, -1, -1, 0.0, val)

    def _emit1c(self, op, x, cst, val):
        return self._push(op, x.idx, -1, -1, cst, val)

    def _emit2(self, op, x, y, val):
        if y.tape is not self:
            raise TapeError("operands recorded on different tapes")
        return self._push(op, x.idx, y.idx, -1, 0.0, val)

    def _emit3(self, op, x, y, z, val):
        if y.tape is not self or z.tape is not self:
            raise TapeError("operands recorded on different tapes")
        return self._push(op, x.idx, y.idx, z.idx, 0.0, val)

    def mark_outputs(self, ys):
        out = []
        for y in ys:
            if isinstance(y, ADScalar):
                if y.tape is not self:
                    raise TapeError("output recorded on a different tape")
                out.append(y.idx)
            else:
                out.append(self._push(OP_CONST, -1, -1, -1, float(y),
                                      float(y)).idx)
        self._out = out

    def _compact(self):
        """Drop nodes unreachable from the outputs. Input slots are pinned."""
        n = len(self._ops)
        live = bytearray(n)
        for i in range(self.n_inputs):
            live[i] = 1
        for o in self._out:
            live[o] = 1
        pa, pb, pc = self._pa, self._pb, self._pc
        for i in range(n - 1, self.n_inputs - 1, -1):
            if live[i]:
                a = pa[i]
                if a >= 0:
                    live[a] = 1
                b = pb[i]
                if b >= 0:
                    live[b] = 1
                c = pc[i]
                if c >= 0:
                    live[c] = 1
        if all(live):
            return
        remap = [-1] * n
        k = 0
        for i in range(n):
            if live[i]:
                remap[i] = k
                k += 1
        keep = [i for i in range(n) if live[i]]
        self._ops = [self._ops[i] for i in keep]
        self._pa = [remap[pa[i]] if pa[i] >= 0 else -1 for i in keep]
        self._pb = [remap[pb[i]] if pb[i] >= 0 else -1 for i in keep]
        self._pc = [remap[pc[i]] if pc[i] >= 0 else -1 for i in keep]
        self._cst = [self._cst[i] for i in keep]
        self._vals = [self._vals[i] for i in keep]
        self._out = [remap[o] for o in self._out]

    def freeze(self):
        if self._out is None:
            raise TapeError("mark_outputs must be called before freeze")
        self.ops = np.asarray(self._ops, dtype=np.int32)
        self.pa = np.asarray(self._pa, dtype=np.int32)
        self.pb = np.asarray(self._pb, dtype=np.int32)
        self.pc = np.asarray(self._pc, dtype=np.int32)
        self.cst = np.asarray(self._cst, dtype=np.float64)
        self.out_idx = np.asarray(self._out, dtype=np.int64)
        self.rec_values = np.asarray(self._vals, dtype=np.float64)
        self.rec_inputs = self.rec_values[:self.n_inputs].copy()
        self.n_nodes = len(self._ops)
        self.n_out = len(self._out)
        # distinct output nodes admit direct adjoint seeding (no add.at)
        self.out_unique = len(set(self._out)) == self.n_out
        # lazily allocated reusable scratch for the hot evaluation paths
        self._vals_buf = None
        self._scratch = None
        self._adj_bufs = {}
        self._batch_bufs = {}
        self._seed_cache = {}
        self.frozen = True
        return self

    # ---- evaluation ----

    def run(self, x):
        """Replay at inputs x; returns the full node-value buffer."""
        vals = np.empty(self.n_nodes)
        vals[:self.n_inputs] = x
        _K.replay(self.ops, self.pa, self.pb, self.pc, self.cst, vals,
                  self.n_inputs)
        return vals

    def replay(self, x):
        vals = self._vals_buf
        if vals is None:
            vals = self._vals_buf = np.empty(self.n_nodes)
        vals[:self.n_inputs] = np.asarray(x, dtype=float).ravel()
        _K.replay(self.ops, self.pa, self.pb, self.pc, self.cst, vals,
                  self.n_inputs)
        return vals[self.out_idx]

    def replay_batch(self, X):
        """Replay R input columns at once. X: (n_inputs, R) -> (n_out, R)."""
        X = np.asarray(X, dtype=float)
        vals = self._batch_bufs.get(X.shape[1])
        if vals is None:
            vals = np.empty((self.n_nodes, X.shape[1]))
            self._batch_bufs[X.shape[1]] = vals
        vals[:self.n_inputs] = X
        _K.replay_batch(self.ops, self.pa, self.pb, self.pc, self.cst, vals,
                        self.n_inputs)
        return vals[self.out_idx]

    def jac_rows(self, x, rows=None, copy=True):
        """Output values and unit-cotangent Jacobian rows in one fused pass.

        rows indexes outputs (default: all, in output order). Returns
        (y, J) with J of shape (len(rows), n_inputs). copy=False hands back
        a view into scratch that the next jac_rows call on this tape
        overwrites; use it only when J is consumed immediately.
        """
        sc = self._scratch
        if sc is None:
            n = self.n_nodes
            sc = (np.empty(n), np.empty(n), np.empty(n), np.empty(n))
            self._scratch = sc
        vals, da, db, dc = sc
        vals[:self.n_inputs] = x
        if rows is None:
            seeds = self.out_idx
            r = self.n_out
        else:
            rows = np.asarray(rows, dtype=np.int64)
            key = rows.tobytes()
            seeds = self._seed_cache.get(key)
            if seeds is None:
                seeds = self.out_idx[rows]
                self._seed_cache[key] = seeds
            r = seeds.shape[0]
        bufs = self._adj_bufs.get(r)
        if bufs is None:
            # zeros, not empty: the fused kernel's consume-and-clear sweep
            # assumes a clean adjoint buffer and restores it on exit
            bufs = (np.zeros((self.n_nodes, r)),
                    np.empty((r, self.n_inputs)))
            self._adj_bufs[r] = bufs
        adj, out = bufs
        _K.jac_rows(self.ops, self.pa, self.pb, self.pc, self.cst, vals,
                    da, db, dc, adj, seeds, out, self.n_inputs)
        y = vals[self.out_idx]
        return y, (out.copy() if copy else out)

    def run_partials(self, x):
        """Replay at x and compute per-edge partials in the same pass."""
        n = self.n_nodes
        vals = np.empty(n)
        vals[:self.n_inputs] = x
        da = np.zeros(n)
        db = np.zeros(n)
        dc = np.zeros(n)
        _K.replay_partials(self.ops, self.pa, self.pb, self.pc, self.cst,
                           vals, da, db, dc, self.n_inputs)
        return vals, da, db, dc

    def vjp_batch(self, cot, x=None, work=None):
        """Reverse sweeps for a batch of cotangent rows.

        cot: (R, n_out) seeds on the outputs; returns (R, n_inputs) rows of
        cotᵀ∂y/∂x. `work` reuses a run_partials result for the same point.
        """
        cot = np.asarray(cot, dtype=float)
        if cot.ndim == 1:
            cot = cot[None, :]
        if work is None:
            xin = self.rec_inputs if x is None else np.asarray(x, dtype=float)
            work = self.run_partials(xin)
        _, da, db, dc = work
        adj = np.zeros((self.n_nodes, cot.shape[0]))
        if self.out_unique:
            adj[self.out_idx] = cot.T
        else:
            np.add.at(adj, self.out_idx, cot.T)
        _K.sweep_batch(self.pa, self.pb, self.pc, da, db, dc, adj)
        return adj[:self.n_inputs].T.copy()


# ---- generic math helpers (work on floats and ADScalars alike) ----

def value_of(x):
    """Numeric value of a float or ADScalar. For record-time validation
    only; never use it to steer recorded control flow."""
    return x.value if isinstance(x, ADScalar) else float(x)


def sin(x):
    if isinstance(x, ADScalar):
        return x.tape._emit1(OP_SIN, x, math.sin(x.value))
    return math.sin(x)


def cos(x):
    if isinstance(x, ADScalar):
        return x.tape._emit1(OP_COS, x, math.cos(x.value))
    return math.cos(x)


def sqrt(x):
    if isinstance(x, ADScalar):
        return x.tape._emit1(OP_SQRT, x, math.sqrt(x.value))
    return math.sqrt(x)


def fma(a, b, c):
    """a*b + c; fuses into a single node when all three are on-tape."""
    if isinstance(a, ADScalar) and isinstance(b, ADScalar) \
            and isinstance(c, ADScalar):
        return a.tape._emit3(OP_FMA, a, b, c, a.value * b.value + c.value)
    return a * b + c


def dot(xs, ys):
    """Inner product of two equal-length scalar sequences."""
    if len(xs) != len(ys):
        raise TapeError("dot: length mismatch")
    acc = xs[0] * ys[0]
    for i in range(1, len(xs)):
        acc = fma(xs[i], ys[i], acc)
    return acc


def select(flag, a, b):
    """Branch-free blend flag*a + (1-flag)*b for flag in {0, 1} (or [0, 1])."""
    return flag * a + (1.0 - flag) * b


# ---- public entry points ----

def record(f, x):
    """Record f at x. f receives a list of ADScalars and returns a scalar or
    a sequence of scalars. Returns (y, tape) with y the outputs at x."""
    x = np.asarray(x, dtype=float).ravel()
    t = Tape()
    xs = [t.input(v) for v in x]
    out = f(xs)
    if isinstance(out, (ADScalar, float, int)):
        out = [out]
    else:
        out = list(out)
    t.mark_outputs(out)
    t._compact()
    t.freeze()
    return t.rec_values[t.out_idx].copy(), t


def vjp(tape, cotangent, x=None):
    """One reverse sweep: cotangentᵀ ∂y/∂x at x (default: recorded point)."""
    cot = np.asarray(cotangent, dtype=float).ravel()
    if cot.shape[0] != tape.n_out:
        raise TapeError("cotangent length does not match tape outputs")
    return tape.vjp_batch(cot[None, :], x=x)[0]


def jacobian(f, x):
    """Full Jacobian of f at x via one reverse sweep per output."""
    y, t = record(f, x)
    return t.vjp_batch(np.eye(len(y)))


class HessianTape:
    """Second-order machinery for a frozen tape.

    The tape's replay and reverse sweep are re-executed symbolically onto a
    second tape whose inputs are the original inputs and whose outputs are
    the gradient components of s(x) = γᵀf(x); γ is folded in as constants.
    Reverse sweeps over that second tape then give exact Hessian rows. The
    second tape is itself an ordinary frozen tape, so it is reusable across
    evaluation points.
    """

    def __init__(self, t1, gamma=None):
        if not t1.frozen:
            raise TapeError("HessianTape requires a frozen tape")
        if gamma is None:
            if t1.n_out != 1:
                raise TapeError("gamma required for multi-output tapes")
            gamma = np.ones(1)
        gamma = np.asarray(gamma, dtype=float).ravel()
        if gamma.shape[0] != t1.n_out:
            raise TapeError("gamma length does not match tape outputs")
        self.n_x = t1.n_inputs
        self.t2 = self._build(t1, gamma)

    @staticmethod
    def _build(t1, gamma):
        t2 = Tape()
        xs = [t2.input(v) for v in t1.rec_inputs]
        n1 = t1.n_nodes
        ops, pa, pb, pc, cst = t1.ops, t1.pa, t1.pb, t1.pc, t1.cst
        val = [None] * n1
        for i in range(n1):
            op = ops[i]
            if op == OP_INPUT:
                val[i] = xs[i]
            elif op == OP_CONST:
                val[i] = cst[i]
            elif op == OP_ADD:
                val[i] = val[pa[i]] + val[pb[i]]
            elif op == OP_SUB:
                val[i] = val[pa[i]] - val[pb[i]]
            elif op == OP_MUL:
                val[i] = val[pa[i]] * val[pb[i]]
            elif op == OP_FMA:
                val[i] = fma(val[pa[i]], val[pb[i]], val[pc[i]])
            elif op == OP_ADDC:
                val[i] = val[pa[i]] + cst[i]
            elif op == OP_MULC:
                val[i] = val[pa[i]] * cst[i]
            elif op == OP_DIV:
                val[i] = val[pa[i]] / val[pb[i]]
            elif op == OP_NEG:
                val[i] = -val[pa[i]]
            elif op == OP_SIN:
                val[i] = sin(val[pa[i]])
            elif op == OP_COS:
                val[i] = cos(val[pa[i]])
            elif op == OP_SQRT:
                val[i] = sqrt(val[pa[i]])
            elif op == OP_RDIVC:
                val[i] = cst[i] / val[pa[i]]
            else:
                raise TapeError(f"unknown opcode {op}")
        adj = [0.0] * n1
        for o, g in zip(t1.out_idx, gamma):
            adj[o] = adj[o] + g
        for i in range(n1 - 1, -1, -1):
            ad = adj[i]
            if type(ad) is float and ad == 0.0:
                continue
            op = ops[i]
            a = pa[i]
            if op == OP_INPUT or op == OP_CONST:
                continue
            if op == OP_ADD:
                b = pb[i]
                adj[a] = adj[a] + ad
                adj[b] = adj[b] + ad
            elif op == OP_SUB:
                b = pb[i]
                adj[a] = adj[a] + ad
                adj[b] = adj[b] - ad
            elif op == OP_MUL:
                b = pb[i]
                adj[a] = adj[a] + ad * val[b]
                adj[b] = adj[b] + ad * val[a]
            elif op == OP_FMA:
                b = pb[i]
                c = pc[i]
                adj[a] = adj[a] + ad * val[b]
                adj[b] = adj[b] + ad * val[a]
                adj[c] = adj[c] + ad
            elif op == OP_ADDC:
                adj[a] = adj[a] + ad
            elif op == OP_MULC:
                adj[a] = adj[a] + ad * cst[i]
            elif op == OP_DIV:
                b = pb[i]
                t = ad / val[b]
                adj[a] = adj[a] + t
                adj[b] = adj[b] - t * val[i]
            elif op == OP_NEG:
                adj[a] = adj[a] - ad
            elif op == OP_SIN:
                adj[a] = adj[a] + ad * cos(val[a])
            elif op == OP_COS:
                adj[a] = adj[a] - ad * sin(val[a])
            elif op == OP_SQRT:
                adj[a] = adj[a] + ad * (0.5 / val[i])
            elif op == OP_RDIVC:
                adj[a] = adj[a] - ad * (val[i] / val[a])
        t2.mark_outputs(adj[:t1.n_inputs])
        t2._compact()
        return t2.freeze()

    def gradient(self, x):
        """∇(γᵀf) at x (replays the second tape)."""
        return self.t2.replay(x)

    def hessian_rows(self, x, rows=None, copy=True):
        """(gradient, Hessian rows) of γᵀf at x in one fused pass.

        rows selects differentiation variables (default: all); the
        gradient is always full length. copy=False returns the row block
        as a view valid until the next call on this object.
        """
        return self.t2.jac_rows(x, rows, copy)

    def hessian(self, x, rows=None, cols=None):
        """Hessian rows of γᵀf at x.

        rows/cols are input-slot index arrays (default: all inputs). Returns
        (len(rows), len(cols)).
        """
        x = np.asarray(x, dtype=float).ravel()
        _, full = self.t2.jac_rows(x, rows=rows)
        if cols is None:
            return full
        return full[:, cols]


def vjp_grad(f, x, gamma):
    """Hessian of x ↦ γᵀf(x) with γ held constant, by differentiating the
    recorded reverse sweep (reverse over reverse). Returns (n, n)."""
    _, t = record(f, x)
    ht = HessianTape(t, gamma=gamma)
    return ht.hessian(np.asarray(x, dtype=float))
