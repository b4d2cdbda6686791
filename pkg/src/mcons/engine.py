"""Driver for distributed Riemannian optimization with consensus.

Each iteration k runs three synchronous rounds over all agents:

* S1 consensus: v^i = R_{w^i}(-eps_k grad_i phi(w))
* S2 gradient consensus: xi^i = sum_j (Q^{n_k})_ij T_{v^j -> v^i} grad f^j(v^j)
  (``power`` mode), or the one-hop tracking recursion (``tracking`` mode)
* S3 descent: w^i <- R_{v^i}(-a_k xi^i)

Agent state is held as stacked ``(N, n, r)`` arrays; :meth:`RunResult.agents`
exposes it per agent.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from mcons.consensus import Configuration, estimate_mu_max, make_params, potential_from_dist
from mcons.errors import ConfigError, ConvergenceError, ManifoldError
from mcons.manifolds import ManifoldPoint, TangentVector, streams
from mcons.network import consensus_rounds_for, delta, matrix_power
from mcons.oracles import frechet_mean

POLICIES = ("halt", "reset_to_best", "ignore")
MODES = ("power", "tracking")


@dataclass(frozen=True)
class StepSchedule:
    """a_k = a0 / (k + k0 + 1)^p."""

    a0: float = 1.0
    k0: int = 0
    p: float = 1.0

    def __post_init__(self):
        if not self.a0 > 0:
            raise ConfigError("step_schedule.a0 must be positive")
        if self.k0 < 0:
            raise ConfigError("step_schedule.k0 must be nonnegative")
        if not 0.5 < self.p <= 1.0:
            raise ConfigError("step_schedule.p must lie in (0.5, 1]")

    def __call__(self, k):
        return self.a0 / (k + self.k0 + 1) ** self.p


@dataclass(frozen=True)
class RunConfig:
    """Algorithm parameters.

    ``epsilon="auto"`` sets eps = 1 / mu_max estimated at the initial
    configuration. ``consensus_decay`` (default 0, i.e. constant) makes the
    consensus step eps_k = eps / (k + 1)^consensus_decay.
    """

    epsilon: float | str = "auto"
    step_schedule: StepSchedule = field(default_factory=StepSchedule)
    consensus_mode: str = "power"
    delta0: float = 0.1
    n_cap: int = 10_000
    noise_sigma: float = 0.0
    max_iters: int = 1000
    restart_policy: str = "reset_to_best"
    master_seed: int = 0
    consensus_decay: float = 0.0
    minibatch: bool = False
    diagnostics: bool = False
    mu_samples: int = 20

    def __post_init__(self):
        if isinstance(self.epsilon, str):
            if self.epsilon != "auto":
                raise ConfigError("epsilon must be a positive number or 'auto'")
        elif not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.consensus_mode not in MODES:
            raise ConfigError(f"consensus_mode must be one of {MODES}")
        if self.restart_policy not in POLICIES:
            raise ConfigError(f"restart_policy must be one of {POLICIES}")
        if not self.delta0 > 0:
            raise ConfigError("delta0 must be positive")
        if self.n_cap < 1 or self.max_iters < 1 or self.mu_samples < 1:
            raise ConfigError("n_cap, max_iters and mu_samples must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.consensus_mode == "tracking" and (self.noise_sigma > 0 or self.minibatch):
            raise ConfigError("tracking mode requires noise-free gradients (noise_sigma = 0, no minibatch)")
        if not 0 <= self.consensus_decay <= 1:
            raise ConfigError("consensus_decay must lie in [0, 1]")


@dataclass(frozen=True)
class Problem:
    manifold: object
    graph: object
    costs: object
    oracle: ManifoldPoint | None = None


@dataclass
class AgentState:
    w: ManifoldPoint
    v: ManifoldPoint
    g: TangentVector | None
    prev_v: ManifoldPoint | None
    prev_grad: TangentVector | None
    cost: object
    stream: np.random.Generator


@dataclass(slots=True)
class IterationRecord:
    """Metrics of the configuration w_{k+1} produced by iteration k."""

    k: int
    phi: float
    max_pair_dist_sq: float
    cost_values: np.ndarray
    dist_to_oracle: float
    in_s_conv: bool
    n_k: int
    a_k: float
    delta_k: float
    restart: bool = False
    deviation: float = math.nan
    deviation_bound: float = math.nan
    tracking_error: float = math.nan
    tracking_tolerance: float = math.nan

    @property
    def mean_cost(self):
        return float(np.mean(self.cost_values))

    @property
    def min_cost(self):
        return float(np.min(self.cost_values))

    @property
    def max_cost(self):
        return float(np.max(self.cost_values))


@dataclass
class RunResult:
    records: list
    final: Configuration
    consensus_point: ManifoldPoint | None
    final_dist_to_oracle: float
    status: str
    restarts: int
    s_conv_violation: bool
    initial_in_s_conv: bool
    epsilon: float
    mu_max: float | None
    wall_ms: float
    communication_rounds: int
    message: str = ""
    trajectory: list | None = None
    _agent_arrays: dict = field(default_factory=dict, repr=False)
    _costs: list = field(default_factory=list, repr=False)
    _streams: list = field(default_factory=list, repr=False)

    def agents(self):
        """Per-agent view of the state after the last completed iteration."""
        a = self._agent_arrays
        m = self.final.manifold
        out = []
        for i in range(len(self.final)):
            w = ManifoldPoint(m, a["w"][i], check=False)
            v = ManifoldPoint(m, a["v"][i], check=False)
            g = TangentVector(v, a["g"][i], check=False) if a.get("g") is not None else None
            pv = ManifoldPoint(m, a["prev_v"][i], check=False) if a.get("prev_v") is not None else None
            pg = TangentVector(pv, a["prev_grad"][i], check=False) if pv is not None else None
            out.append(AgentState(w, v, g, pv, pg, self._costs[i], self._streams[i]))
        return out


def n_k_schedule(g, k, cfg):
    """Smallest n with gamma^n <= delta0 / (k + 1), capped at n_cap."""
    return min(consensus_rounds_for(g, cfg.delta0 / (k + 1)), cfg.n_cap)


def step_size(k, cfg):
    return cfg.step_schedule(k)


def init_spread(center, n_agents, sigma, stream):
    """w^i = exp(center, random_tangent(center, sigma)); one stream draws all agents."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    m = center.descriptor
    C = np.broadcast_to(center.coords, (n_agents,) + m.shape)
    if sigma == 0:
        return Configuration(m, C)
    return Configuration(m, m.exp(C, m.random_tangent(C, sigma, stream)))


def gradient_consensus_power(v, grads, g, n_k):
    """xi^i = sum_j (Q^{n_k})_ij T_{v^j -> v^i} grads^j, as an (N, n, r) array."""
    m = v.manifold
    G = grads if isinstance(grads, np.ndarray) else np.stack([t.coords for t in grads])
    return m.transport_mix(v.coords, v.coords, G, matrix_power(g, n_k))


def gradient_consensus_tracking(v_prev, v_new, trackers, grads_prev, grads_new, g):
    """One-hop tracking update; all inputs are stacked arrays.

    g_k^i = sum_j q_ij T_{v_{k-1}^j -> v_k^i} g_{k-1}^j + grad^i(v_k^i) - T_{v_{k-1}^i -> v_k^i} grad^i(v_{k-1}^i)
    """
    m = v_new.manifold
    mixed = m.transport_mix(v_prev.coords, v_new.coords, trackers, g.weights)
    return mixed + grads_new - m.transp(v_prev.coords, v_new.coords, grads_prev)


def descent_step(v, xi, a_k):
    m = v.manifold
    X = xi if isinstance(xi, np.ndarray) else np.stack([t.coords for t in xi])
    return v.replace(m.retr(v.coords, -a_k * X))


def _noise(m, V, sigma, node_streams):
    out = np.empty_like(V)
    for i, s in enumerate(node_streams):
        out[i] = m.random_tangent(V[i], sigma, s)
    return out


def _max_norm(G):
    return float(np.max(np.sqrt(np.sum(G * G, axis=(-2, -1)))))


def run(problem, cfg, init, keep_trajectory=False):
    m, g, costs = problem.manifold, problem.graph, problem.costs
    N = g.num_nodes
    if len(init) != N or len(costs) != N:
        raise ConfigError(f"graph has {N} nodes but init has {len(init)} and costs {len(costs)}")
    t_start = time.perf_counter()
    all_streams = streams(cfg.master_seed, N + 1)
    node_streams, engine_stream = all_streams[:N], all_streams[N]

    mu_max = None
    if cfg.epsilon == "auto":
        mu_max = estimate_mu_max(init, g, cfg.mu_samples, engine_stream)
        eps = 1.0 / mu_max
    else:
        eps = float(cfg.epsilon)
    params = make_params(m, g, eps, mu_max)
    Qoff = g.edge_weights
    Adj = g.adjacency.astype(float)
    thr = params.s_conv_threshold
    avg = np.full((N, N), 1.0 / N)

    def s_conv(D):
        return potential_from_dist(D, Adj) <= thr

    W = np.array(init.coords)
    initial_in = s_conv(m.pair_dist_sq(W))
    if not initial_in:
        warnings.warn("initial configuration lies outside S_conv; consensus is not guaranteed", stacklevel=2)

    def local_grads(V):
        G = costs.minibatch_rgrad(V, node_streams) if cfg.minibatch else costs.local_rgrad(V)
        if cfg.noise_sigma > 0:
            G = G + _noise(m, V, cfg.noise_sigma, node_streams)
        return G

    oracle = problem.oracle.coords if problem.oracle is not None else None
    records = []
    traj = [W.copy()] if keep_trajectory else None
    restarts = 0
    violation = not initial_in
    status, message = "completed", ""
    rounds = 0
    V_prev = G_prev = T_prev = None
    V = Xi = None

    for k in range(cfg.max_iters):
        a_k = step_size(k, cfg)
        eps_k = eps / (k + 1) ** cfg.consensus_decay if cfg.consensus_decay else eps
        try:
            V = m.retr(W, -eps_k * m.consensus_grad(W, Qoff))
            G = local_grads(V)
            rec_extra = {}
            if cfg.consensus_mode == "power":
                n_k = n_k_schedule(g, k, cfg)
                Xi = m.transport_mix(V, V, G, matrix_power(g, n_k))
                if cfg.diagnostics:
                    exact = m.transport_mix(V, V, G, avg)
                    rec_extra["deviation"] = _max_norm(Xi - exact)
                    rec_extra["deviation_bound"] = N * delta(g, n_k) * _max_norm(G)
            else:
                n_k = 1
                if T_prev is None:
                    Xi = G.copy()
                else:
                    Xi = m.transport_mix(V_prev, V, T_prev, g.weights) + G - m.transp(V_prev, V, G_prev)
                if cfg.diagnostics:
                    rec_extra["tracking_error"] = _max_norm(m.transport_mix(V, V, Xi - G, avg))
                    rec_extra["tracking_tolerance"] = 10.0 * float(np.max(m.pair_dist_sq(V))) * _max_norm(G)
                V_prev, G_prev, T_prev = V, G, Xi
            rounds += n_k
            W_new = m.retr(V, -a_k * Xi)
            D = m.pair_dist_sq(W_new)
        except ManifoldError as exc:
            status, message = "aborted", f"iteration {k}: {exc}"
            break
        if not np.all(np.isfinite(W_new)):
            status, message = "aborted", f"iteration {k}: non-finite iterate"
            break

        inside = s_conv(D)
        restart = False
        if not inside:
            violation = True
            if cfg.restart_policy == "reset_to_best":
                best = int(np.argmin(costs.global_values(W_new)))
                W_new = np.broadcast_to(W_new[best], W_new.shape).copy()
                D = np.zeros((N, N))
                inside = True
                restart = True
                restarts += 1
                V_prev = G_prev = T_prev = None
        W = W_new
        vals = costs.global_values(W)
        dist = float(np.max(m.oracle_distance(W, oracle))) if oracle is not None else math.nan
        records.append(
            IterationRecord(
                k=k,
                phi=potential_from_dist(D, Qoff),
                max_pair_dist_sq=float(np.max(D)),
                cost_values=vals,
                dist_to_oracle=dist,
                in_s_conv=bool(inside),
                n_k=n_k,
                a_k=a_k,
                delta_k=delta(g, n_k),
                restart=restart,
                **rec_extra,
            )
        )
        if keep_trajectory:
            traj.append(W.copy())
        if not inside and cfg.restart_policy == "halt":
            status, message = "halted", f"iteration {k}: left S_conv"
            break

    final = Configuration(m, W)
    try:
        cp = ManifoldPoint(m, frechet_mean(final).value.coords, check=False)
    except ConvergenceError:
        cp = None
    if oracle is not None:
        ref = cp.coords if cp is not None else W
        final_dist = float(np.max(m.oracle_distance(ref, oracle)))
    else:
        final_dist = math.nan
    arrays = {"w": W, "v": V if V is not None else W}
    if cfg.consensus_mode == "tracking" and T_prev is not None:
        arrays.update(g=T_prev, prev_v=V_prev, prev_grad=G_prev)
    return RunResult(
        records=records,
        final=final,
        consensus_point=cp,
        final_dist_to_oracle=final_dist,
        status=status,
        restarts=restarts,
        s_conv_violation=violation,
        initial_in_s_conv=bool(initial_in),
        epsilon=eps,
        mu_max=mu_max,
        wall_ms=1e3 * (time.perf_counter() - t_start),
        communication_rounds=rounds,
        message=message,
        trajectory=traj,
        _agent_arrays=arrays,
        _costs=list(costs.costs),
        _streams=node_streams,
    )


def centralized_descent(cost, x0, step, horizon):
    """Single-agent constant-step descent w <- exp(w, -step * grad f(w)) up to t = horizon.

    Returns the iterates stacked along the first axis; feed them to
    :func:`mcons.oracles.compare_to_flow` to measure the discretization error.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    m = cost.manifold
    x = np.array(x0.coords if hasattr(x0, "coords") else x0, dtype=float)
    out = [x]
    for _ in range(int(math.ceil(horizon / step - 1e-9))):
        x = m.exp(x, -step * cost.global_rgrad(x))
        out.append(x)
    return np.stack(out)
