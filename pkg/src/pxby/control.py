"""Optimal-control data generation and the diffusion-control rollout.

Continuous-time LTI plants are sampled inside the documented parameter
ranges, gated on stability/controllability/observability, and driven
by either an LQR state-feedback law (via the continuous algebraic
Riccati equation) or a delayed/noisy bang-bang law. Traces are
quantized into the 24 action bins for training corpora.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .tokenizer import (ACTION_BASE, LINE_BREAK_ID, Segment, TokenStream,
                        dequantize_actions, quantize_actions)
from .model import SeqModel, softmax, sample_categorical


@dataclass(frozen=True)
class StateSpaceSystem:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        n = self.a.shape[0]
        if self.a.shape != (n, n):
            raise ValueError("A must be square")
        if self.b.shape[0] != n or self.c.shape[1] != n:
            raise ValueError("B/C dimensions must match A")
        if self.d.shape != (self.c.shape[0], self.b.shape[1]):
            raise ValueError("D must be p x m")

    @property
    def order(self):
        return self.a.shape[0]


def _rank(mat):
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    tol = max(mat.shape) * s[0] * 1e-12
    return int((s > tol).sum())


def is_stable(sys: StateSpaceSystem) -> bool:
    return bool(np.all(np.linalg.eigvals(sys.a).real < 0))


def is_controllable(sys: StateSpaceSystem) -> bool:
    n = sys.order
    blocks = [sys.b]
    for _ in range(n - 1):
        blocks.append(sys.a @ blocks[-1])
    return _rank(np.hstack(blocks)) == n


def is_observable(sys: StateSpaceSystem) -> bool:
    n = sys.order
    blocks = [sys.c]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ sys.a)
    return _rank(np.vstack(blocks)) == n


@dataclass
class ControlDatasetConfig:
    """Parameter ranges for dataset generation (JSON-overridable)."""
    system_order: tuple = (1, 5)
    eigenvalues_of_a: tuple = (-5.0, -0.1)
    elements_of_b: tuple = (-1.0, 1.0)
    elements_of_c: tuple = (0.0, 1.0)
    initial_conditions: tuple = (-1.0, 1.0)
    setpoints: tuple = (-1.0, 1.0)
    bang_bang_delay: tuple = (0, 5)
    noise_standard_deviation: tuple = (0.0, 0.1)
    n_traces: int = 100
    lqr_fraction: float = 0.5
    steps: int = 200
    dt: float = 0.05
    u_min: float = -1.0
    u_max: float = 1.0
    r_weight: float = 0.1

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            raw = json.load(f)
        cfg = cls()
        for k, v in raw.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown control config key {k!r}")
            setattr(cfg, k, tuple(v) if isinstance(v, list) else v)
        return cfg


def sample_system(rng, config: ControlDatasetConfig | None = None,
                  order=None) -> StateSpaceSystem:
    """Draw a stable SISO system meeting all three Kalman conditions.

    Real eigenvalues are placed uniformly in the configured range and
    conjugated by a random well-conditioned basis; candidates failing
    the controllability or observability rank test are resampled.
    """
    cfg = config if config is not None else ControlDatasetConfig()
    for _ in range(100):
        n = int(order) if order is not None else int(rng.integers(cfg.system_order[0],
                                                                  cfg.system_order[1] + 1))
        lam = rng.uniform(*cfg.eigenvalues_of_a, size=n)
        basis = rng.uniform(-1.0, 1.0, size=(n, n))
        if np.linalg.cond(basis) > 1e3:
            continue
        a = basis @ np.diag(lam) @ np.linalg.inv(basis)
        b = rng.uniform(*cfg.elements_of_b, size=(n, 1))
        c = rng.uniform(*cfg.elements_of_c, size=(1, n))
        sys = StateSpaceSystem(a, b, c, np.zeros((1, 1)))
        if is_stable(sys) and is_controllable(sys) and is_observable(sys):
            return sys
    raise RuntimeError("no admissible system after 100 attempts")


# ---------------------------------------------------------------------------
# LQR via the continuous algebraic Riccati equation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LqrSolution:
    p: np.ndarray
    k: np.ndarray
    q: np.ndarray
    r: np.ndarray


def care_residual(sys: StateSpaceSystem, sol: LqrSolution) -> float:
    a, b = sys.a, sys.b
    res = a.T @ sol.p + sol.p @ a - sol.p @ b @ np.linalg.solve(sol.r, b.T @ sol.p) + sol.q
    return float(np.linalg.norm(res, "fro"))


def solve_care(sys: StateSpaceSystem, q=None, r=None, r_weight=0.1) -> LqrSolution:
    """Stabilizing CARE solution and gain K = R^-1 B^T P.

    Defaults to Q = C^T C and R = r_weight * I. The returned solution
    is verified: Frobenius residual within 1e-8 * (1 + ||P||_F) and
    A - B K strictly Hurwitz.
    """
    q = sys.c.T @ sys.c if q is None else np.asarray(q, dtype=np.float64)
    r = r_weight * np.eye(sys.b.shape[1]) if r is None else np.asarray(r, dtype=np.float64)
    if np.any(np.linalg.eigvalsh(r) <= 0):
        raise ValueError("R must be positive definite")
    if np.allclose(q, 0):
        p = np.zeros_like(sys.a)  # zero cost: doing nothing is optimal
    else:
        p = scipy.linalg.solve_continuous_are(sys.a, sys.b, q, r)
    k = np.linalg.solve(r, sys.b.T @ p)
    sol = LqrSolution(p=p, k=k, q=q, r=r)
    resid = care_residual(sys, sol)
    if resid > 1e-8 * (1.0 + np.linalg.norm(p, "fro")):
        raise RuntimeError(f"CARE residual {resid:.3e} out of tolerance")
    if not np.all(np.linalg.eigvals(sys.a - sys.b @ k).real < 0):
        raise RuntimeError("closed loop A - BK is not stable")
    return sol


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class ControlTrace:
    dt: float
    times: np.ndarray
    setpoint: np.ndarray
    action: np.ndarray
    output: np.ndarray
    controller: str
    delay: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.setpoint) == len(self.action) == len(self.output) == n):
            raise ValueError("trace channels must share one length")

    @property
    def quantized(self):
        """(3, T) bin indices for (setpoint, action, output)."""
        return quantize_actions(np.stack([self.setpoint, self.action, self.output]))


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def steady_state_target(sys: StateSpaceSystem, r):
    """(x_ss, u_ss) holding the output at r."""
    n, m = sys.order, sys.b.shape[1]
    lhs = np.block([[sys.a, sys.b], [sys.c, sys.d]])
    rhs = np.concatenate([np.zeros(n), np.atleast_1d(float(r))])
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("plant cannot hold this setpoint") from exc
    return sol[:n], sol[n:n + m]


def lqr_rollout(sys: StateSpaceSystem, sol: LqrSolution, x0, r, dt, steps,
                u_limit=None) -> ControlTrace:
    """Closed-loop u = u_ss - K (x - x_ss), integrated with fixed-step RK4.

    With ``u_limit`` the law saturates at +-u_limit, keeping the applied
    input representable by the [-1, 1] action bins.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x_ss, u_ss = steady_state_target(sys, r)
    x = np.asarray(x0, dtype=np.float64).reshape(sys.order)

    def control(state):
        u = u_ss - sol.k @ (state - x_ss)
        if u_limit is not None:
            u = np.clip(u, -u_limit, u_limit)
        return u

    def f(state):
        return sys.a @ state + sys.b @ control(state)

    us = np.zeros(steps)
    ys = np.zeros(steps)
    for t in range(steps):
        u = control(x)
        us[t] = u[0]
        ys[t] = (sys.c @ x + sys.d @ u)[0]
        x = _rk4(f, x, dt)
    times = dt * np.arange(steps)
    return ControlTrace(dt, times, np.full(steps, float(r)), us, ys, "lqr")


def bang_bang_rollout(sys: StateSpaceSystem, x0, r, u_min, u_max,
                      delay_steps, noise_sigma, dt, steps, rng) -> ControlTrace:
    """Two-level switching on the (delayed, noisy) error; zero error holds
    the previous input. The input is zero-order-held over each step."""
    if u_min >= u_max:
        raise ValueError("u_min must be below u_max")
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=np.float64).reshape(sys.order)
    errors = []
    u_prev = 0.0
    us = np.zeros(steps)
    ys = np.zeros(steps)
    for t in range(steps):
        y = (sys.c @ x)[0]
        ys[t] = y
        e = r - y + (rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0)
        errors.append(e)
        e_delayed = errors[t - delay_steps] if t >= delay_steps else 0.0
        if e_delayed > 0:
            u = u_max
        elif e_delayed < 0:
            u = u_min
        else:
            u = u_prev
        us[t] = u
        u_prev = u
        bu = sys.b @ np.array([u])
        x = _rk4(lambda s: sys.a @ s + bu, x, dt)
    times = dt * np.arange(steps)
    return ControlTrace(dt, times, np.full(steps, float(r)), us, ys, "bang-bang",
                        delay=delay_steps, noise_sigma=noise_sigma)


def chatter_amplitude(trace: ControlTrace, tail_fraction=0.5) -> float:
    """Half the peak-to-peak output swing over the trace's tail."""
    tail = trace.output[int(len(trace.output) * (1.0 - tail_fraction)):]
    return float(tail.max() - tail.min()) / 2.0


def gameboy_filter(samples, k_gain, omega_n, zeta, sample_rate):
    """Second-order low-pass K*w^2 / (s^2 + 2*zeta*w*s + w^2), discretized
    by the bilinear transform and run as a direct-form difference equation."""
    if sample_rate <= 0 or omega_n <= 0 or zeta <= 0:
        raise ValueError("sample_rate, omega_n and zeta must be positive")
    x = np.asarray(samples, dtype=np.float64)
    c = 2.0 * sample_rate
    w2 = omega_n * omega_n
    a0 = c * c + 2.0 * zeta * omega_n * c + w2
    a1 = 2.0 * (w2 - c * c)
    a2 = c * c - 2.0 * zeta * omega_n * c + w2
    b0 = b2 = k_gain * w2
    b1 = 2.0 * k_gain * w2
    y = np.zeros_like(x)
    x1 = x2 = y1 = y2 = 0.0
    for i, xi in enumerate(x):
        yi = (b0 * xi + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0
        y[i] = yi
        x2, x1 = x1, xi
        y2, y1 = y1, yi
    return y


# ---------------------------------------------------------------------------
# Token encoding of traces and dataset assembly
# ---------------------------------------------------------------------------

def encode_control_trace(trace: ControlTrace) -> TokenStream:
    """Per step: setpoint, action, output tokens, then a line break."""
    ids = trace.quantized + ACTION_BASE          # (3, T)
    steps = ids.shape[1]
    grid = np.empty((steps, 4), dtype=np.int64)
    grid[:, :3] = ids.T
    grid[:, 3] = LINE_BREAK_ID
    seg = Segment("audio", 0, 4 * steps)
    return TokenStream(grid.reshape(-1), (seg,))


def build_control_dataset(config: ControlDatasetConfig, rng,
                          plant: StateSpaceSystem | None = None):
    """Mix of LQR and bang-bang traces as token streams.

    Returns (streams, traces). A fixed plant overrides system sampling
    for every trace; otherwise each trace draws its own system.
    """
    streams, traces = [], []
    n_lqr = round(config.n_traces * config.lqr_fraction)
    for i in range(config.n_traces):
        sys = plant if plant is not None else sample_system(rng, config)
        x0 = rng.uniform(*config.initial_conditions, size=sys.order)
        r = rng.uniform(*config.setpoints)
        if i < n_lqr:
            sol = solve_care(sys, r_weight=config.r_weight)
            # saturate so the applied input matches its tokenized form
            u_limit = max(abs(config.u_min), abs(config.u_max))
            trace = lqr_rollout(sys, sol, x0, r, config.dt, config.steps,
                                u_limit=u_limit)
        else:
            delay = int(rng.integers(config.bang_bang_delay[0],
                                     config.bang_bang_delay[1] + 1))
            sigma = rng.uniform(*config.noise_standard_deviation)
            trace = bang_bang_rollout(sys, x0, r, config.u_min, config.u_max,
                                      delay, sigma, config.dt, config.steps, rng)
        traces.append(trace)
        streams.append(encode_control_trace(trace))
    return streams, traces


# ---------------------------------------------------------------------------
# Setpoint following with diffusion generation
# ---------------------------------------------------------------------------

def _step_rows(sp_prev, act_prev, out_prev, prev_token, sp_now):
    """Context rows (sp, act, out) for one step of the 4-wide trace grid."""
    return np.array([
        [0, sp_prev, 0, 0, 0, prev_token],
        [0, act_prev, 0, 0, sp_now, sp_now],
        [0, out_prev, 0, 0, 0, 0],   # cols 4/5 hold the unknown action
    ], dtype=np.int64)


def diffusion_control_rollout(model: SeqModel, plant: StateSpaceSystem, r,
                              warmup_steps, horizon, n_repeat, rng,
                              dt=0.05, u_min=-1.0, u_max=1.0, delay_steps=0,
                              noise_sigma=0.05, history_steps=8,
                              temperature=0.1, x0=None) -> ControlTrace:
    """Bang-bang warmup, then one diffusion-generated action per step.

    Each step builds a context of the recent trace plus ``n_repeat``
    replicated next-step blocks whose action entries are masked (the
    setpoint entries stay clean); the blocks are filled one at a time
    by masked diffusion, and the mean of the sampled action values is
    applied to the plant for exactly one step.
    """
    if model.cfg.mode != "diffusion":
        raise ValueError("rollout requires a diffusion-mode model")
    toks = lambda v: int(quantize_actions(np.array([v]))[0]) + ACTION_BASE

    x = (np.zeros(plant.order) if x0 is None
         else np.asarray(x0, dtype=np.float64).reshape(plant.order))
    sp_tok = toks(r)
    total = warmup_steps + horizon
    us = np.zeros(total)
    ys = np.zeros(total)
    grid = []  # per step: (sp_tok, act_tok, out_tok)
    errors = []
    u_prev = 0.0

    for t in range(total):
        y = (plant.c @ x)[0]
        ys[t] = y
        if t < warmup_steps:
            e = r - y + (rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0)
            errors.append(e)
            e_delayed = errors[t - delay_steps] if t >= delay_steps else 0.0
            u = u_max if e_delayed > 0 else u_min if e_delayed < 0 else u_prev
        else:
            u = _diffusion_action(model, grid, sp_tok, n_repeat,
                                  history_steps, temperature, rng)
        us[t] = u
        u_prev = u
        grid.append((sp_tok, toks(u), toks(y)))
        bu = plant.b @ np.array([u])
        x = _rk4(lambda s: plant.a @ s + bu, x, dt)

    times = dt * np.arange(total)
    return ControlTrace(dt, times, np.full(total, float(r)), us, ys,
                        "diffusion", delay=delay_steps, noise_sigma=noise_sigma)


def _diffusion_action(model, grid, sp_tok, n_repeat,
                      history_steps, temperature, rng):
    """Masked infilling of the next action; returns the dequantized mean.

    Each replicated next-step block carries the setpoint unmasked and
    its action-bearing row fully masked (matching the whole-row masks
    seen in training); the action token is read from the two context
    slots that replicate it, and the row's known entries are restored
    after sampling.
    """
    rows = []
    hist = grid[-history_steps:]
    for s, (sp, act, out) in enumerate(hist):
        gi = len(grid) - len(hist) + s
        if gi == 0:
            sp_p, act_p, out_p, prev = 0, 0, 0, 0
        else:
            sp_p, act_p, out_p = grid[gi - 1]
            prev = LINE_BREAK_ID
        step = _step_rows(sp_p, act_p, out_p, prev, sp)
        step[2, 4] = step[2, 5] = act           # known action for history rows
        rows.append(step)
        rows.append(np.array([[0, LINE_BREAK_ID if gi > 0 else 0, 0, 0, out, out]],
                             dtype=np.int64))  # break row
    if grid:
        sp_p, act_p, out_p = grid[-1]
        prev = LINE_BREAK_ID
    else:
        sp_p = act_p = out_p = prev = 0
    query_rows = []
    for _ in range(n_repeat):
        query_rows.append(_step_rows(sp_p, act_p, out_p, prev, sp_tok))
    ctx = np.concatenate(rows + query_rows) if rows else np.concatenate(query_rows)
    length = len(ctx)
    n_hist = length - 3 * n_repeat

    mask = np.ones((1, length, 6), dtype=np.int64)
    action_rows = [n_hist + 3 * k + 2 for k in range(n_repeat)]
    for ar in action_rows:
        mask[0, ar, :] = 0

    c = ctx[None, :, :].copy()
    known = np.array([0, out_p, 0, 0], dtype=np.int64)
    samples = []
    for ar in rng.permutation(action_rows):
        logits = model.forward(c, t=model.cfg.n_diffusion_steps, m=mask, rng=rng)
        p = 0.5 * (softmax(logits[0, ar, 4] / temperature)
                   + softmax(logits[0, ar, 5] / temperature))
        tok = int(sample_categorical(p[None, :], rng)[0])
        c[0, ar, :4] = known
        c[0, ar, 4] = c[0, ar, 5] = tok
        mask[0, ar, :] = 1
        samples.append(tok)
    vals = dequantize_actions(np.clip(np.array(samples) - ACTION_BASE, 0, 23))
    return float(vals.mean())
