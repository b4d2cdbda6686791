"""Experiment configuration: JSON parsing, validation, problem assembly, and output files."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from mcons import costs as costs_mod
from mcons import network
from mcons.engine import Problem, RunConfig, StepSchedule, init_spread
from mcons.errors import ConfigError, DegenerateSpectrum
from mcons.manifolds import ManifoldPoint, make_manifold
from mcons.oracles import OracleSolution, leading_eigenvector, top_subspace

METRICS_HEADER = "k,phi,max_pair_dist_sq,mean_cost,min_cost,max_cost,dist_to_oracle,in_s_conv,n_k,a_k,delta_k"

_ALGORITHM_KEYS = {
    "epsilon", "step_schedule", "consensus_mode", "delta0", "n_cap", "noise_sigma", "max_iters",
    "restart_policy", "master_seed", "consensus_decay", "minibatch", "diagnostics", "mu_samples",
}


class _Located(ConfigError):
    def __init__(self, path, msg):
        super().__init__(msg)
        self.path = path


@dataclass
class ExperimentConfig:
    manifold: dict
    graph: dict
    problem: dict
    algorithm: RunConfig
    init: dict
    output: dict
    debug: dict
    source: Path | None = None

    def resolve(self, p):
        p = Path(p)
        if p.is_absolute() or self.source is None:
            return p
        return self.source.parent / p

    def echo(self):
        """Flattened key=value view of the fully resolved configuration."""
        tree = {
            "manifold": self.manifold,
            "graph": self.graph,
            "problem": self.problem,
            "algorithm": asdict(self.algorithm),
            "init": self.init,
            "output": self.output,
        }
        out = []

        def walk(prefix, node):
            if isinstance(node, dict):
                for k in sorted(node):
                    walk(f"{prefix}.{k}" if prefix else k, node[k])
            else:
                out.append((f"config.{prefix}", node))

        walk("", tree)
        return out


def bundled_configs():
    return sorted(p.name for p in resources.files("mcons.configs").iterdir() if p.name.endswith(".json"))


def find_config(path):
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("mcons.configs") / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config file not found: {path}")


def _line_of(text, path):
    pos = 0
    for key in path:
        i = text.find(f'"{key}"', pos)
        if i < 0:
            break
        pos = i
    return text.count("\n", 0, pos) + 1


# -- typed field readers --------------------------------------------------------


def _section(d, key, path, required=True):
    if key not in d:
        if required:
            raise _Located(path, f"missing section '{'.'.join(path + [key])}'")
        return {}
    v = d[key]
    if not isinstance(v, dict):
        raise _Located(path + [key], f"'{'.'.join(path + [key])}' must be an object")
    return v


def _no_extra(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise _Located(path + [extra[0]], f"unknown key '{'.'.join(path + [extra[0]])}'")


def _get(d, key, path, kind, default=None, required=False, check=None, what=""):
    name = ".".join(path + [key])
    if key not in d:
        if required:
            raise _Located(path, f"missing key '{name}'")
        return default
    v = d[key]
    if kind is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
        v = float(v) if ok else v
    elif kind is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    elif kind is bool:
        ok = isinstance(v, bool)
    elif kind is str:
        ok = isinstance(v, str)
    else:
        ok = True
    if not ok:
        raise _Located(path + [key], f"'{name}' must be of type {kind.__name__}, got {v!r}")
    if check is not None and not check(v):
        raise _Located(path + [key], f"'{name}' {what}, got {v!r}")
    return v


def _parse(raw):
    if not isinstance(raw, dict):
        raise _Located([], "config root must be an object")
    _no_extra(raw, {"manifold", "graph", "problem", "algorithm", "init", "output", "debug"}, [])

    m = _section(raw, "manifold", [])
    _no_extra(m, {"kind", "n", "r"}, ["manifold"])
    kind = _get(m, "kind", ["manifold"], str, required=True,
                check=lambda v: v in ("sphere", "grassmann", "euclidean"), what="must be sphere, grassmann or euclidean")
    n = _get(m, "n", ["manifold"], int, required=True, check=lambda v: v >= 1, what="must be >= 1")
    r = _get(m, "r", ["manifold"], int, default=1, check=lambda v: 1 <= v <= n, what="must lie in [1, n]")
    if kind == "sphere" and r != 1:
        raise _Located(["manifold", "r"], "'manifold.r' must be 1 for the sphere")
    manifold = {"kind": kind, "n": n, "r": r}

    g = _section(raw, "graph", [])
    src = _get(g, "source", ["graph"], str, required=True,
               check=lambda v: v in ("metropolis_random", "edge_list_file"), what="must be metropolis_random or edge_list_file")
    if src == "metropolis_random":
        _no_extra(g, {"source", "nodes", "N", "edge_prob", "seed"}, ["graph"])
        key = "N" if "N" in g else "nodes"
        nodes = _get(g, key, ["graph"], int, required=True, check=lambda v: v >= 2, what="must be >= 2")
        graph = {
            "source": src,
            "nodes": nodes,
            "edge_prob": _get(g, "edge_prob", ["graph"], float, required=True,
                              check=lambda v: 0 < v <= 1, what="must lie in (0, 1]"),
            "seed": _get(g, "seed", ["graph"], int, required=True),
        }
    else:
        _no_extra(g, {"source", "path", "nodes"}, ["graph"])
        graph = {
            "source": src,
            "path": _get(g, "path", ["graph"], str, required=True),
            "nodes": _get(g, "nodes", ["graph"], int, check=lambda v: v >= 1, what="must be >= 1"),
        }

    p = _section(raw, "problem", [])
    _no_extra(p, {"kind", "data", "minibatch", "partition_seed"}, ["problem"])
    pkind = _get(p, "kind", ["problem"], str, required=True,
                 check=lambda v: v in costs_mod.KINDS, what=f"must be one of {costs_mod.KINDS}")
    expected = {"eigvec": "sphere", "pca": "grassmann", "quadratic": "euclidean"}[pkind]
    if kind != expected:
        raise _Located(["problem", "kind"], f"problem kind '{pkind}' needs manifold kind '{expected}'")
    d = _section(p, "data", ["problem"])
    dsrc = _get(d, "source", ["problem", "data"], str, required=True,
                check=lambda v: v in ("synthetic", "file"), what="must be synthetic or file")
    dp = ["problem", "data"]
    if dsrc == "synthetic" and pkind == "quadratic":
        _no_extra(d, {"source", "seed", "condition"}, dp)
        data = {
            "source": dsrc,
            "seed": _get(d, "seed", dp, int, required=True),
            "condition": _get(d, "condition", dp, float, default=10.0, check=lambda v: v >= 1, what="must be >= 1"),
        }
    elif dsrc == "synthetic":
        _no_extra(d, {"source", "dims", "num_samples", "spectrum_decay", "seed"}, dp)
        dims = _get(d, "dims", dp, int, default=n, check=lambda v: v == n, what=f"must equal manifold.n = {n}")
        data = {
            "source": dsrc,
            "dims": dims,
            "num_samples": _get(d, "num_samples", dp, int, required=True, check=lambda v: v >= dims,
                                what="must be >= dims"),
            "spectrum_decay": _get(d, "spectrum_decay", dp, float, required=True,
                                   check=lambda v: 0 < v <= 1, what="must lie in (0, 1]"),
            "seed": _get(d, "seed", dp, int, required=True),
        }
    else:
        if pkind == "quadratic":
            raise _Located(dp + ["source"], "quadratic problems only support synthetic data")
        _no_extra(d, {"source", "path"}, dp)
        data = {"source": dsrc, "path": _get(d, "path", dp, str, required=True)}
    problem = {
        "kind": pkind,
        "data": data,
        "minibatch": _get(p, "minibatch", ["problem"], bool, default=False),
        "partition_seed": _get(p, "partition_seed", ["problem"], int, default=0),
    }

    a = _section(raw, "algorithm", [])
    _no_extra(a, _ALGORITHM_KEYS, ["algorithm"])
    ap = ["algorithm"]
    eps = a.get("epsilon", "auto")
    if not (eps == "auto" or (isinstance(eps, (int, float)) and not isinstance(eps, bool) and eps > 0)):
        raise _Located(ap + ["epsilon"], f"'algorithm.epsilon' must be a positive number or \"auto\", got {eps!r}")
    s = _section(a, "step_schedule", ap, required=False)
    _no_extra(s, {"a0", "k0", "p"}, ap + ["step_schedule"])
    sp = ap + ["step_schedule"]
    sched = StepSchedule(
        a0=_get(s, "a0", sp, float, default=1.0, check=lambda v: v > 0, what="must be positive"),
        k0=_get(s, "k0", sp, int, default=0, check=lambda v: v >= 0, what="must be nonnegative"),
        p=_get(s, "p", sp, float, default=1.0, check=lambda v: 0.5 < v <= 1.0, what="must lie in (0.5, 1]"),
    )
    mode = _get(a, "consensus_mode", ap, str, default="power",
                check=lambda v: v in ("power", "tracking"), what="must be power or tracking")
    noise = _get(a, "noise_sigma", ap, float, default=0.0, check=lambda v: v >= 0, what="must be nonnegative")
    if mode == "tracking" and (noise > 0 or problem["minibatch"]):
        raise _Located(ap + ["consensus_mode"], "tracking mode requires noise_sigma = 0 and minibatch = false")
    algorithm = RunConfig(
        epsilon=eps if eps == "auto" else float(eps),
        step_schedule=sched,
        consensus_mode=mode,
        delta0=_get(a, "delta0", ap, float, default=0.1, check=lambda v: v > 0, what="must be positive"),
        n_cap=_get(a, "n_cap", ap, int, default=10_000, check=lambda v: v >= 1, what="must be >= 1"),
        noise_sigma=noise,
        max_iters=_get(a, "max_iters", ap, int, default=1000, check=lambda v: v >= 1, what="must be >= 1"),
        restart_policy=_get(a, "restart_policy", ap, str, default="reset_to_best",
                            check=lambda v: v in ("halt", "reset_to_best", "ignore"),
                            what="must be halt, reset_to_best or ignore"),
        master_seed=_get(a, "master_seed", ap, int, required=True),
        consensus_decay=_get(a, "consensus_decay", ap, float, default=0.0,
                             check=lambda v: 0 <= v <= 1, what="must lie in [0, 1]"),
        minibatch=problem["minibatch"],
        diagnostics=_get(a, "diagnostics", ap, bool, default=False),
        mu_samples=_get(a, "mu_samples", ap, int, default=20, check=lambda v: v >= 1, what="must be >= 1"),
    )

    i = _section(raw, "init", [])
    _no_extra(i, {"sigma", "seed"}, ["init"])
    init = {
        "sigma": _get(i, "sigma", ["init"], float, required=True, check=lambda v: v >= 0, what="must be nonnegative"),
        "seed": _get(i, "seed", ["init"], int, required=True),
    }

    o = _section(raw, "output", [], required=False)
    _no_extra(o, {"directory", "write_trajectory"}, ["output"])
    output = {
        "directory": _get(o, "directory", ["output"], str, default="out"),
        "write_trajectory": _get(o, "write_trajectory", ["output"], bool, default=False),
    }

    dbg = _section(raw, "debug", [], required=False)
    _no_extra(dbg, {"corrupt_gradient"}, ["debug"])
    debug = {"corrupt_gradient": _get(dbg, "corrupt_gradient", ["debug"], bool, default=False)}
    return manifold, graph, problem, algorithm, init, output, debug


def load_config(path):
    """Parse and validate a JSON config; errors carry ``file:line:`` prefixes."""
    p = find_config(path)
    text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        parts = _parse(raw)
    except _Located as exc:
        raise ConfigError(f"{p}:{_line_of(text, exc.path)}: {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"{p}:1: {exc}") from None
    cfg = ExperimentConfig(*parts, source=p)
    for section, key in (("graph", "path"), ("problem", "path")):
        tree = cfg.graph if section == "graph" else cfg.problem["data"]
        if key in tree and not cfg.resolve(tree[key]).exists():
            line = _line_of(text, [section, key] if section == "graph" else ["problem", "data", key])
            raise ConfigError(f"{p}:{line}: referenced file not found: {tree[key]}")
    return cfg


# -- problem assembly ---------------------------------------------------------------


def build_graph(cfg):
    g = cfg.graph
    if g["source"] == "metropolis_random":
        adj = network.random_connected_graph(g["nodes"], g["edge_prob"], g["seed"])
    else:
        adj = network.read_edge_list(cfg.resolve(g["path"]), g["nodes"])
    return network.metropolis_weights(adj)


def build_costs(cfg, manifold, num_nodes):
    prob = cfg.problem
    data = prob["data"]
    n, r = manifold.shape
    if prob["kind"] == "quadratic":
        return costs_mod.random_quadratics(num_nodes, n, r, data["seed"], data["condition"])
    if data["source"] == "synthetic":
        Z = costs_mod.synthetic_samples(data["dims"], data["num_samples"], data["spectrum_decay"], data["seed"])[0]
    else:
        Z = costs_mod.load_dataset(cfg.resolve(data["path"]))
    if Z.shape[1] != n:
        raise ConfigError(f"data has dimension {Z.shape[1]} but manifold.n = {n}")
    return costs_mod.partition_dataset(Z, num_nodes, prob["partition_seed"], kind=prob["kind"])


def compute_oracle(stack):
    """Ground-truth minimizer of the global cost as a ManifoldPoint."""
    m = stack.manifold
    if stack.kind == "eigvec":
        return leading_eigenvector(stack.data_matrix())
    if stack.kind == "pca":
        return top_subspace(stack.data_matrix(), m.cols)
    H = stack.C.sum(axis=0)
    rhs = -stack.B.sum(axis=0)
    x = np.linalg.solve(H, rhs)
    res = float(np.linalg.norm(H @ x - rhs))
    return OracleSolution("quadratic", ManifoldPoint(m, x), res)


def build_problem(cfg, with_oracle=True):
    m = cfg_manifold(cfg)
    g = build_graph(cfg)
    stack = costs_mod.CostStack(build_costs(cfg, m, g.num_nodes), m)
    oracle = None
    if with_oracle:
        try:
            oracle = compute_oracle(stack).value
        except DegenerateSpectrum:
            oracle = None
    return Problem(m, g, stack, oracle)


def cfg_manifold(cfg):
    mm = cfg.manifold
    return make_manifold(mm["kind"], mm["n"], mm["r"])


def build_init(cfg, manifold, num_nodes):
    rng = np.random.default_rng(cfg.init["seed"])
    center = ManifoldPoint(manifold, manifold.random_point(rng))
    return init_spread(center, num_nodes, cfg.init["sigma"], rng)


# -- outputs ---------------------------------------------------------------------------


def _g(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_metrics(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in records:
            row = (r.k, r.phi, r.max_pair_dist_sq, r.mean_cost, r.min_cost, r.max_cost,
                   r.dist_to_oracle, r.in_s_conv, r.n_k, r.a_k, r.delta_k)
            fh.write(",".join(_g(v) for v in row) + "\n")


def read_metrics(path):
    """Parse metrics.csv into a dict of column arrays."""
    rows = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.atleast_1d(rows[name]) for name in rows.dtype.names}


def write_trajectory(traj, path):
    with open(path, "w") as fh:
        N = traj[0].shape[0]
        width = traj[0].shape[1] * traj[0].shape[2]
        fh.write("k,node," + ",".join(f"c{j}" for j in range(width)) + "\n")
        for k, W in enumerate(traj):
            for i in range(N):
                fh.write(f"{k},{i}," + ",".join(_g(v) for v in W[i].ravel()) + "\n")


def write_summary(result, cfg, path, extra=()):
    last = result.records[-1] if result.records else None
    pairs = [
        ("final_phi", last.phi if last else math.nan),
        ("final_max_pair_dist", math.sqrt(last.max_pair_dist_sq) if last else math.nan),
        ("final_max_pair_dist_sq", last.max_pair_dist_sq if last else math.nan),
        ("final_dist_to_oracle", result.final_dist_to_oracle),
        ("restarts", result.restarts),
        ("wall_ms", round(result.wall_ms, 3)),
        ("status", result.status),
        ("message", result.message),
        ("iterations", len(result.records)),
        ("s_conv_violation", result.s_conv_violation),
        ("initial_in_s_conv", result.initial_in_s_conv),
        ("epsilon", result.epsilon),
        ("mu_max", result.mu_max if result.mu_max is not None else "none"),
        ("communication_rounds", result.communication_rounds),
    ]
    pairs += list(extra) + cfg.echo()
    with open(path, "w") as fh:
        for k, v in pairs:
            if isinstance(v, (bool, np.bool_)):
                v = int(v)
            elif isinstance(v, float):
                v = _g(v)
            fh.write(f"{k}={v}\n")


def read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def prepare_run(cfg):
    """Problem, RunConfig and initial configuration for ``cfg``."""
    problem = build_problem(cfg)
    init = build_init(cfg, problem.manifold, problem.graph.num_nodes)
    return problem, cfg.algorithm, init


def config_from_dict(raw, source=None):
    """Validate an in-memory config (used by tests and notebooks)."""
    try:
        parts = _parse(raw)
    except _Located as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(*parts, source=Path(source) if source else None)


__all__ = [
    "ExperimentConfig",
    "METRICS_HEADER",
    "build_graph",
    "build_init",
    "build_problem",
    "bundled_configs",
    "compute_oracle",
    "config_from_dict",
    "find_config",
    "load_config",
    "prepare_run",
    "read_metrics",
    "read_summary",
    "write_metrics",
    "write_summary",
    "write_trajectory",
]
