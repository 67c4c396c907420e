"""Flat-array tape interpreter kernels.

A frozen tape is a topologically ordered list of scalar operations stored as
parallel arrays (opcode, up to three parent indices, one float constant).
The functions here replay a tape, compute per-edge partial derivatives, and
run (batched) reverse adjoint sweeps. They are the hot loops of the package:
every dynamics derivative reduces to a handful of calls into this module.

Each kernel is written once as a plain Python function. With numba available
(and unless DDPKIT_NO_NUMBA is set) the module-level names are the
@njit(cache=True) compiled versions; otherwise the pure-Python versions are
exported unchanged. Both paths are exercised in the test suite and compared
in benchmarks/kernel_bench.py.
"""

import math
import os

import numpy as np

# opcodes
OP_INPUT = 0
OP_CONST = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_SIN = 7
OP_COS = 8
OP_SQRT = 9
OP_ADDC = 10  # node + const
OP_MULC = 11  # node * const
OP_RDIVC = 12  # const / node
OP_FMA = 13  # a*b + c

OP_NAMES = {
    OP_INPUT: "input", OP_CONST: "const", OP_ADD: "add", OP_SUB: "sub",
    OP_MUL: "mul", OP_DIV: "div", OP_NEG: "neg", OP_SIN: "sin",
    OP_COS: "cos", OP_SQRT: "sqrt", OP_ADDC: "addc", OP_MULC: "mulc",
    OP_RDIVC: "rdivc", OP_FMA: "fma",
}


def _replay(ops, pa, pb, pc, cst, vals, start):
    n = ops.shape[0]
    for i in range(start, n):
        op = ops[i]
        if op == OP_ADD:
            vals[i] = vals[pa[i]] + vals[pb[i]]
        elif op == OP_SUB:
            vals[i] = vals[pa[i]] - vals[pb[i]]
        elif op == OP_MUL:
            vals[i] = vals[pa[i]] * vals[pb[i]]
        elif op == OP_FMA:
            vals[i] = vals[pa[i]] * vals[pb[i]] + vals[pc[i]]
        elif op == OP_ADDC:
            vals[i] = vals[pa[i]] + cst[i]
        elif op == OP_MULC:
            vals[i] = vals[pa[i]] * cst[i]
        elif op == OP_DIV:
            vals[i] = vals[pa[i]] / vals[pb[i]]
        elif op == OP_NEG:
            vals[i] = -vals[pa[i]]
        elif op == OP_SIN:
            vals[i] = math.sin(vals[pa[i]])
        elif op == OP_COS:
            vals[i] = math.cos(vals[pa[i]])
        elif op == OP_SQRT:
            vals[i] = math.sqrt(vals[pa[i]])
        elif op == OP_RDIVC:
            vals[i] = cst[i] / vals[pa[i]]
        elif op == OP_CONST:
            vals[i] = cst[i]
        # OP_INPUT: value preloaded by caller


def _replay_partials(ops, pa, pb, pc, cst, vals, da, db, dc, start):
    """Replay and fill d(node)/d(parent) for each parent edge in one pass."""
    n = ops.shape[0]
    for i in range(start, n):
        op = ops[i]
        if op == OP_ADD:
            vals[i] = vals[pa[i]] + vals[pb[i]]
            da[i] = 1.0
            db[i] = 1.0
        elif op == OP_SUB:
            vals[i] = vals[pa[i]] - vals[pb[i]]
            da[i] = 1.0
            db[i] = -1.0
        elif op == OP_MUL:
            va = vals[pa[i]]
            vb = vals[pb[i]]
            vals[i] = va * vb
            da[i] = vb
            db[i] = va
        elif op == OP_FMA:
            va = vals[pa[i]]
            vb = vals[pb[i]]
            vals[i] = va * vb + vals[pc[i]]
            da[i] = vb
            db[i] = va
            dc[i] = 1.0
        elif op == OP_ADDC:
            vals[i] = vals[pa[i]] + cst[i]
            da[i] = 1.0
        elif op == OP_MULC:
            c = cst[i]
            vals[i] = vals[pa[i]] * c
            da[i] = c
        elif op == OP_DIV:
            va = vals[pa[i]]
            vb = vals[pb[i]]
            z = va / vb
            vals[i] = z
            da[i] = 1.0 / vb
            db[i] = -z / vb
        elif op == OP_NEG:
            vals[i] = -vals[pa[i]]
            da[i] = -1.0
        elif op == OP_SIN:
            va = vals[pa[i]]
            vals[i] = math.sin(va)
            da[i] = math.cos(va)
        elif op == OP_COS:
            va = vals[pa[i]]
            vals[i] = math.cos(va)
            da[i] = -math.sin(va)
        elif op == OP_SQRT:
            z = math.sqrt(vals[pa[i]])
            vals[i] = z
            da[i] = 0.5 / z
        elif op == OP_RDIVC:
            va = vals[pa[i]]
            z = cst[i] / va
            vals[i] = z
            da[i] = -z / va
        elif op == OP_CONST:
            vals[i] = cst[i]


def _replay_batch(ops, pa, pb, pc, cst, vals, start):
    """Replay R independent input columns at once; vals is (n_nodes, R)."""
    n = ops.shape[0]
    r = vals.shape[1]
    for i in range(start, n):
        op = ops[i]
        if op == OP_ADD:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] + vals[pb[i], j]
        elif op == OP_SUB:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] - vals[pb[i], j]
        elif op == OP_MUL:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] * vals[pb[i], j]
        elif op == OP_FMA:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] * vals[pb[i], j] + vals[pc[i], j]
        elif op == OP_ADDC:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] + cst[i]
        elif op == OP_MULC:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] * cst[i]
        elif op == OP_DIV:
            for j in range(r):
                vals[i, j] = vals[pa[i], j] / vals[pb[i], j]
        elif op == OP_NEG:
            for j in range(r):
                vals[i, j] = -vals[pa[i], j]
        elif op == OP_SIN:
            for j in range(r):
                vals[i, j] = math.sin(vals[pa[i], j])
        elif op == OP_COS:
            for j in range(r):
                vals[i, j] = math.cos(vals[pa[i], j])
        elif op == OP_SQRT:
            for j in range(r):
                vals[i, j] = math.sqrt(vals[pa[i], j])
        elif op == OP_RDIVC:
            for j in range(r):
                vals[i, j] = cst[i] / vals[pa[i], j]
        elif op == OP_CONST:
            for j in range(r):
                vals[i, j] = cst[i]


def _sweep_batch(pa, pb, pc, da, db, dc, adj):
    """Reverse adjoint accumulation for R cotangent columns; adj is (n_nodes, R).

    Caller seeds adj at output nodes. Nodes with no parents (inputs, consts)
    have parent index -1 and are skipped. Zero adjoints propagate nothing, so
    sparse seeds stay cheap.
    """
    n = pa.shape[0]
    r = adj.shape[1]
    for i in range(n - 1, -1, -1):
        a = pa[i]
        if a < 0:
            continue
        b = pb[i]
        c = pc[i]
        for j in range(r):
            v = adj[i, j]
            if v != 0.0:
                adj[a, j] += da[i] * v
                if b >= 0:
                    adj[b, j] += db[i] * v
                    if c >= 0:
                        adj[c, j] += dc[i] * v


def _jac_rows(ops, pa, pb, pc, cst, vals, da, db, dc, adj, seeds, out,
              n_in):
    """Fused replay + unit-cotangent reverse sweeps + input-row extraction.

    seeds[j] is the output node seeded with 1.0 in lane j; out (R, n_in)
    receives the Jacobian rows. vals/da/db/dc/adj are caller-owned scratch
    (vals[:n_in] preloaded with the inputs); stale partials are safe
    because the sweep only reads them guarded by a parent index.

    adj must be all-zero on entry. The sweep re-zeroes each adjoint row as
    it is consumed (and the extraction loop clears the input rows), so the
    buffer leaves this function clean again: no full memset per call, which
    is where a plain batched sweep spends much of its memory traffic on
    large tapes.
    """
    _rp_k(ops, pa, pb, pc, cst, vals, da, db, dc, n_in)
    r = seeds.shape[0]
    for j in range(r):
        adj[seeds[j], j] = 1.0
    n = pa.shape[0]
    for i in range(n - 1, n_in - 1, -1):
        a = pa[i]
        if a < 0:
            # const node: may have been seeded or have received adjoint
            for j in range(r):
                adj[i, j] = 0.0
            continue
        b = pb[i]
        c = pc[i]
        for j in range(r):
            v = adj[i, j]
            if v != 0.0:
                adj[i, j] = 0.0
                adj[a, j] += da[i] * v
                if b >= 0:
                    adj[b, j] += db[i] * v
                    if c >= 0:
                        adj[c, j] += dc[i] * v
    for j in range(r):
        for i in range(n_in):
            out[j, i] = adj[i, j]
            adj[i, j] = 0.0


def _assemble_step(N, Psi, Xi, S, h, fx, fu):
    """Explicit-Euler step Jacobians from the acceleration partials.

    Overwrites caller-allocated fx, fu with
    fx = [[I, h I], [h N, I + h Psi]] and fu = [[0], [h Xi S]].
    Dense but tiny; a single compiled loop avoids a pile of array-op
    dispatches that would otherwise dominate at small joint counts.
    """
    n = N.shape[0]
    m = S.shape[1]
    for i in range(n):
        for j in range(2 * n):
            fx[i, j] = 0.0
        fx[i, i] = 1.0
        fx[i, n + i] = h
        for j in range(n):
            fx[n + i, j] = h * N[i, j]
            fx[n + i, n + j] = h * Psi[i, j]
        fx[n + i, n + i] += 1.0
        for j in range(m):
            fu[i, j] = 0.0
            acc = 0.0
            for k in range(n):
                acc += Xi[i, k] * S[k, j]
            fu[n + i, j] = h * acc


def _add_scaled(out, a, c):
    """out += c * a over 2-D arrays, one pass, no temporary."""
    r, s = out.shape
    for i in range(r):
        for j in range(s):
            out[i, j] += c * a[i, j]


_PY_KERNELS = {
    "replay": _replay,
    "replay_partials": _replay_partials,
    "replay_batch": _replay_batch,
    "sweep_batch": _sweep_batch,
}

_disabled = os.environ.get("DDPKIT_NO_NUMBA", "") not in ("", "0")
USING_NUMBA = False
if not _disabled:
    try:
        from numba import njit

        USING_NUMBA = True
    except ImportError:
        njit = None

if USING_NUMBA:
    replay = njit(cache=True)(_replay)
    replay_partials = njit(cache=True)(_replay_partials)
    replay_batch = njit(cache=True)(_replay_batch)
    sweep_batch = njit(cache=True)(_sweep_batch)
    _rp_k = replay_partials
    jac_rows = njit(cache=True)(_jac_rows)
    assemble_step = njit(cache=True)(_assemble_step)
    add_scaled = njit(cache=True)(_add_scaled)
else:
    replay = _replay
    replay_partials = _replay_partials
    replay_batch = _replay_batch
    sweep_batch = _sweep_batch
    _rp_k = replay_partials
    jac_rows = _jac_rows
    assemble_step = _assemble_step
    add_scaled = _add_scaled
