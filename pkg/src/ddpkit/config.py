"""Plain-text problem configuration: key = value lines building swing-up
optimal control problems.

Recognized keys and defaults are in DEFAULTS. `system` selects the model
family (pendubot: last joint unactuated; arm: fully actuated); the target
is the upright configuration (first joint rotated by pi, the rest aligned)
at zero velocity. `init` selects the initial control guess: zero, the
joint-damping rollout, or an Ornstein-Uhlenbeck random sequence.
"""

import numpy as np

from . import ddp, rbmodel

DEFAULTS = {
    "system": "pendubot",
    "n": 2,
    "horizon": 500,
    "h": 0.01,
    "mode": "ddp",
    "backend": "modrnea2",
    "seed": 0,
    "max_iter": 500,
    "tol_cost": 1e-9,
    "tol_grad": 1e-9,
    "w_q": 1.0,
    "w_qd": 0.1,
    "w_u": 0.01,
    "w_terminal": 100.0,
    "init": "dissipative",
    "dissipative_gain": 0.5,
    "ou_theta": 2.0,
    "ou_sigma": 1.0,
    "x0_spread": 0.0,
    "link_mass": 1.0,
    "link_length": 0.5,
}

_TYPES = {k: type(v) for k, v in DEFAULTS.items()}
_CHOICES = {
    "system": ("pendubot", "arm"),
    "mode": ("ddp", "ilqr"),
    "init": ("zero", "dissipative", "ou"),
}


def parse_config(path):
    """Read a key = value file into a full config dict (defaults filled
    in). Unknown keys, bad values, and out-of-set choices raise
    ValueError with the offending line."""
    cfg = dict(DEFAULTS)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            ty = _TYPES[key]
            try:
                cfg[key] = ty(val) if ty is not str else val
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: cannot parse {val!r} as "
                    f"{ty.__name__}") from None
            if key in _CHOICES and cfg[key] not in _CHOICES[key]:
                raise ValueError(
                    f"{path}:{lineno}: {key} must be one of "
                    f"{_CHOICES[key]}")
    return cfg


def build_model(cfg):
    n = cfg["n"]
    masses = [cfg["link_mass"]] * n
    lengths = [cfg["link_length"]] * n
    if cfg["system"] == "pendubot":
        return rbmodel.build_pendubot(n, cfg["link_mass"],
                                      cfg["link_length"])
    return rbmodel.build_serial_arm(n, masses, lengths)


def build_problem(cfg, model=None):
    """OcpProblem for the swing-up task described by cfg."""
    if model is None:
        model = build_model(cfg)
    n = model.n_bodies
    m = model.n_controls
    x_ref = np.zeros(2 * n)
    x_ref[0] = np.pi
    qx = np.diag([cfg["w_q"]] * n + [cfg["w_qd"]] * n)
    if cfg["x0_spread"] > 0.0:
        st = rbmodel.sample_initial_state(model, cfg["x0_spread"],
                                          cfg["seed"])
        x0 = st.as_vector()
    else:
        x0 = np.zeros(2 * n)
    return ddp.OcpProblem(model, cfg["horizon"], cfg["h"], qx,
                          cfg["w_u"] * np.eye(m),
                          cfg["w_terminal"] * np.eye(2 * n), x_ref, x0)


def build_u_init(cfg, problem, seed=None, step_fn=None):
    """Initial control sequence for the configured guess mode. `seed`
    overrides the config seed (used by randomized trials)."""
    mode = cfg["init"]
    m = problem.model.n_controls
    if mode == "zero":
        return np.zeros((problem.horizon, m))
    noise = None
    if mode == "ou":
        # exploration noise rides on the dissipative guess: the noise
        # sequence alone destabilizes the undamped chain under the explicit
        # integrator, so randomize around a rollout that stays bounded
        noise = rbmodel.ou_control_sequence(
            problem.horizon, m, cfg["ou_theta"], cfg["ou_sigma"],
            problem.h, cfg["seed"] if seed is None else seed)
    if step_fn is None:
        step_fn = ddp.make_step_fn(problem.model, problem.h)
    us = np.empty((problem.horizon, m))
    x = problem.x0.copy()
    for k in range(problem.horizon):
        us[k] = rbmodel.dissipative_controller(problem.model, x,
                                               cfg["dissipative_gain"])
        if noise is not None:
            us[k] += noise[k]
        x = step_fn(x, us[k])
    return us
