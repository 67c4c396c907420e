"""Kinematic-tree rigid-body models and benchmark system builders.

Bodies are numbered so that every parent index is strictly smaller than its
child (root parent is -1); joints are 1-DoF revolute. The planar chain
builders place links hanging along -z at q = 0 with gravity (0, 0, -9.81),
so the downward rest configuration is q = 0 and the upright configuration
rotates the base joint by pi.
"""

import re
from dataclasses import dataclass

import numpy as np

from .spatial import SpatialInertia, SpatialTransform

_GRAVITY_DEFAULT = (0.0, 0.0, -9.81)


@dataclass(frozen=True, eq=False)
class JointState:
    """Joint positions and velocities."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).ravel())
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float).ravel())
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must have equal length")

    def as_vector(self):
        return np.concatenate([self.q, self.qd])


@dataclass(frozen=True, eq=False)
class RigidBodyModel:
    """A revolute kinematic tree.

    joint_axis holds one free-mode 6-vector per body (unit angular axis,
    zero linear part). frame_offset[i] is the pose of joint i's frame in the
    parent joint frame. actuation maps m control inputs to joint torques and
    must have full column rank.
    """

    n_bodies: int
    parent: np.ndarray
    joint_axis: np.ndarray
    frame_offset: tuple
    inertia: tuple
    actuation: np.ndarray
    gravity: np.ndarray = _GRAVITY_DEFAULT

    def __post_init__(self):
        n = int(self.n_bodies)
        if n < 1:
            raise ValueError("model needs at least one body")
        parent = np.asarray(self.parent, dtype=int).ravel()
        if parent.shape != (n,):
            raise ValueError("parent must have one entry per body")
        if parent[0] != -1:
            raise ValueError("body 0 must be the root (parent -1)")
        for i in range(1, n):
            if not -1 <= parent[i] < i:
                raise ValueError(
                    f"parent[{i}]={parent[i]} must be < {i} (tree order)")
        axes = np.asarray(self.joint_axis, dtype=float)
        if axes.shape != (n, 6):
            raise ValueError("joint_axis must be (n_bodies, 6)")
        norms = np.linalg.norm(axes, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ValueError("each joint axis must have unit norm")
        if np.abs(axes[:, 3:]).max() > 1e-12:
            raise ValueError("only revolute joints are supported "
                             "(linear axis part must be zero)")
        if len(self.frame_offset) != n or not all(
                isinstance(x, SpatialTransform) for x in self.frame_offset):
            raise ValueError("frame_offset must hold one SpatialTransform "
                             "per body")
        if len(self.inertia) != n or not all(
                isinstance(x, SpatialInertia) for x in self.inertia):
            raise ValueError("inertia must hold one SpatialInertia per body")
        act = np.asarray(self.actuation, dtype=float)
        if act.ndim != 2 or act.shape[0] != n:
            raise ValueError("actuation must be (n_bodies, m)")
        m = act.shape[1]
        if m > n:
            raise ValueError("more controls than joints")
        if np.linalg.matrix_rank(act) != m:
            raise ValueError("actuation selector must have full column rank")
        object.__setattr__(self, "n_bodies", n)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "joint_axis", axes)
        object.__setattr__(self, "frame_offset", tuple(self.frame_offset))
        object.__setattr__(self, "inertia", tuple(self.inertia))
        object.__setattr__(self, "actuation", act)
        object.__setattr__(self, "gravity",
                           np.asarray(self.gravity, dtype=float).ravel())
        if self.gravity.shape != (3,):
            raise ValueError("gravity must be a 3-vector")

    @property
    def n_controls(self):
        return self.actuation.shape[1]


def _rod_link(mass, length):
    """Uniform thin rod along -z from the joint: com at half length,
    slender-rod inertia about the com."""
    ixx = mass * length * length / 12.0
    return SpatialInertia(mass, (0.0, 0.0, -0.5 * length),
                          np.diag([ixx, ixx, 0.0]))


def _chain(n, masses, lengths, actuated):
    offsets = []
    inertias = []
    for i in range(n):
        trans = (0.0, 0.0, 0.0) if i == 0 else (0.0, 0.0, -lengths[i - 1])
        offsets.append(SpatialTransform(np.eye(3), trans))
        inertias.append(_rod_link(masses[i], lengths[i]))
    axes = np.zeros((n, 6))
    axes[:, 1] = 1.0  # rotate about +y; chain swings in the x-z plane
    act = np.zeros((n, len(actuated)))
    for col, j in enumerate(actuated):
        act[j, col] = 1.0
    parent = np.arange(-1, n - 1)
    return RigidBodyModel(n, parent, axes, tuple(offsets), tuple(inertias),
                          act, _GRAVITY_DEFAULT)


def build_pendubot(n, link_mass=1.0, link_length=0.5):
    """Planar n-link chain with every joint actuated except the last."""
    if n < 2:
        raise ValueError("pendubot needs at least 2 links")
    masses = [float(link_mass)] * n
    lengths = [float(link_length)] * n
    return _chain(n, masses, lengths, actuated=range(n - 1))


def build_serial_arm(n, masses=None, lengths=None):
    """Fully actuated planar n-link serial arm."""
    if n < 1:
        raise ValueError("serial arm needs at least 1 link")
    masses = [1.0] * n if masses is None else [float(m) for m in masses]
    lengths = [0.5] * n if lengths is None else [float(l) for l in lengths]
    if len(masses) != n or len(lengths) != n:
        raise ValueError(f"serial arm takes exactly {n} masses and lengths")
    return _chain(n, masses, lengths, actuated=range(n))


def build_serial_arm7(masses=None, lengths=None):
    """Fully actuated planar 7-link serial arm."""
    return build_serial_arm(7, masses, lengths)


def dissipative_controller(model, state, gain):
    """Joint-damping feedback u = -gain * (S^T qd); never injects energy."""
    qd = state.qd if isinstance(state, JointState) else \
        np.asarray(state, dtype=float).ravel()[model.n_bodies:]
    return -float(gain) * (model.actuation.T @ qd)


def ou_control_sequence(n_steps, m, theta, sigma, dt, seed):
    """Ornstein-Uhlenbeck control noise, one row per timestep.

    u[k+1] = u[k] - theta*u[k]*dt + sigma*sqrt(dt)*xi_k, u[0] = 0. The
    stationary variance is sigma^2 / (2 theta).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    rng = np.random.default_rng(seed)
    u = np.zeros((n_steps, m))
    scale = sigma * np.sqrt(dt)
    for k in range(n_steps - 1):
        u[k + 1] = u[k] - theta * u[k] * dt + scale * rng.standard_normal(m)
    return u


def sample_initial_state(model, spread, seed):
    """Uniform perturbation of the downward rest state: q and qd each drawn
    from U(-spread, spread)."""
    rng = np.random.default_rng(seed)
    n = model.n_bodies
    return JointState(rng.uniform(-spread, spread, n),
                      rng.uniform(-spread, spread, n))


# ---- line-oriented model file format ----
#
#   gravity=<gx,gy,gz>
#   body <idx> parent=<idx> axis=<x,y,z> mass=<kg> com=<x,y,z> \
#        inertia=<i11,i12,i13,i22,i23,i33> offset_rot=<9 vals> \
#        offset_trans=<x,y,z>
#   actuated=<idx list>
#
# Body indices are 1-based in the file; parent=0 denotes the root. '#'
# starts a comment. `actuated` defaults to every joint.

def _floats(text, count, where):
    parts = text.split(",")
    if len(parts) != count:
        raise ValueError(f"{where}: expected {count} comma-separated values")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise ValueError(f"{where}: {e}") from None


def load_model(path):
    gravity = np.asarray(_GRAVITY_DEFAULT)
    bodies = {}
    actuated = None
    with open(path) as fh:
        lines = fh.readlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if line.startswith("gravity="):
            gravity = np.asarray(_floats(line[len("gravity="):], 3, where))
        elif line.startswith("actuated="):
            try:
                actuated = [int(t) for t in
                            line[len("actuated="):].split(",")]
            except ValueError:
                raise ValueError(f"{where}: bad actuated index list") from None
        elif line.startswith("body "):
            tokens = re.split(r"\s+", line)
            try:
                idx = int(tokens[1])
            except (IndexError, ValueError):
                raise ValueError(f"{where}: body line needs an index") from None
            kv = {}
            for tok in tokens[2:]:
                if "=" not in tok:
                    raise ValueError(f"{where}: expected key=value, got "
                                     f"{tok!r}")
                k, v = tok.split("=", 1)
                kv[k] = v
            required = ("parent", "axis", "mass", "com", "inertia",
                        "offset_rot", "offset_trans")
            missing = [k for k in required if k not in kv]
            if missing:
                raise ValueError(f"{where}: missing fields {missing}")
            i11, i12, i13, i22, i23, i33 = _floats(kv["inertia"], 6, where)
            rot = np.asarray(_floats(kv["offset_rot"], 9,
                                     where)).reshape(3, 3)
            bodies[idx] = dict(
                parent=int(kv["parent"]),
                axis=_floats(kv["axis"], 3, where),
                mass=float(kv["mass"]),
                com=_floats(kv["com"], 3, where),
                rot_inertia=np.array([[i11, i12, i13],
                                      [i12, i22, i23],
                                      [i13, i23, i33]]),
                offset=SpatialTransform(rot, _floats(kv["offset_trans"], 3,
                                                     where)),
            )
        else:
            raise ValueError(f"{where}: unrecognized directive {line!r}")
    n = len(bodies)
    if n == 0:
        raise ValueError(f"{path}: no bodies defined")
    if sorted(bodies) != list(range(1, n + 1)):
        raise ValueError(f"{path}: body indices must be 1..{n}")
    parent = np.array([bodies[i + 1]["parent"] - 1 for i in range(n)])
    axes = np.zeros((n, 6))
    for i in range(n):
        axes[i, :3] = bodies[i + 1]["axis"]
    offsets = tuple(bodies[i + 1]["offset"] for i in range(n))
    inertias = tuple(SpatialInertia(bodies[i + 1]["mass"],
                                    bodies[i + 1]["com"],
                                    bodies[i + 1]["rot_inertia"])
                     for i in range(n))
    if actuated is None:
        actuated = list(range(1, n + 1))
    act = np.zeros((n, len(actuated)))
    for col, j in enumerate(actuated):
        if not 1 <= j <= n:
            raise ValueError(f"{path}: actuated index {j} out of range")
        act[j - 1, col] = 1.0
    return RigidBodyModel(n, parent, axes, offsets, inertias, act, gravity)


def save_model(model, path):
    def fmt(vals):
        return ",".join(repr(float(v)) for v in vals)

    lines = [f"gravity={fmt(model.gravity)}"]
    for i in range(model.n_bodies):
        ine = model.inertia[i]
        off = model.frame_offset[i]
        ic = ine.rot_inertia
        upper = [ic[0, 0], ic[0, 1], ic[0, 2], ic[1, 1], ic[1, 2], ic[2, 2]]
        lines.append(
            f"body {i + 1} parent={model.parent[i] + 1} "
            f"axis={fmt(model.joint_axis[i, :3])} mass={model.inertia[i].mass!r} "
            f"com={fmt(ine.com)} inertia={fmt(upper)} "
            f"offset_rot={fmt(off.rotation.ravel())} "
            f"offset_trans={fmt(off.translation)}")
    cols = np.argmax(model.actuation, axis=0)
    actuated = [int(cols[j]) + 1 for j in range(model.actuation.shape[1])]
    lines.append("actuated=" + ",".join(str(j) for j in actuated))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
