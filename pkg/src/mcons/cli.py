"""Command-line interface: ``mcons run|gradcheck|oracle|graphgen``.

Exit codes: 0 success, 1 bad config or arguments, 2 run aborted or halted,
3 degenerate spectrum, 4 graph not connected, 5 gradient check failed.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from mcons import experiment as ex
from mcons import kernels, network
from mcons.consensus import potential_from_dist
from mcons.engine import run
from mcons.errors import ConfigError, DegenerateSpectrum, GraphNotConnected
from mcons.manifolds import ManifoldPoint
from mcons.oracles import fd_gradient_check

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_DEGENERATE, EXIT_GRAPH, EXIT_GRADCHECK = range(6)
GRADCHECK_TOL = 1e-4
GRADCHECK_POINTS = 20


def _err(msg):
    print(f"mcons: error: {msg}", file=sys.stderr)


def _out_dir(cfg, override):
    d = Path(override) if override else Path(cfg.output["directory"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_run(args):
    cfg = ex.load_config(args.config)
    problem, rc, init = ex.prepare_run(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run(problem, rc, init, keep_trajectory=cfg.output["write_trajectory"])
    for w in caught:
        print(f"mcons: warning: {w.message}", file=sys.stderr)
    out = _out_dir(cfg, args.out)
    ex.write_metrics(result.records, out / "metrics.csv")
    extra = [("backend", kernels.backend()), ("oracle", "available" if problem.oracle is not None else "unavailable")]
    ex.write_summary(result, cfg, out / "summary.txt", extra)
    if result.trajectory is not None:
        ex.write_trajectory(result.trajectory, out / "trajectory.csv")
    print(f"{result.status}: {len(result.records)} iterations, "
          f"final max pair d^2 = {result.records[-1].max_pair_dist_sq:.3e}, "
          f"dist to oracle = {result.final_dist_to_oracle:.3e}, restarts = {result.restarts}"
          if result.records else f"{result.status}: no iterations completed")
    if result.s_conv_violation:
        print("S_conv violation detected", file=sys.stderr)
    if result.status != "completed":
        _err(result.message)
        return EXIT_ABORT
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = ex.load_config(args.config)
    problem = ex.build_problem(cfg, with_oracle=False)
    m, g, stack = problem.manifold, problem.graph, problem.costs
    rng = np.random.default_rng(cfg.algorithm.master_seed)
    scale = 1.5 if cfg.debug["corrupt_gradient"] else 1.0

    def grad_f(X):
        return scale * stack.global_rgrad(X)

    cost_err = 0.0
    for _ in range(GRADCHECK_POINTS):
        x = ManifoldPoint(m, m.random_point(rng), check=False)
        cost_err = max(cost_err, fd_gradient_check(stack.global_values, grad_f, x, directions=5, stream=rng))

    Qoff = g.edge_weights
    sigma = cfg.init["sigma"] or 0.1
    phi_err = 0.0
    for _ in range(GRADCHECK_POINTS):
        center = ManifoldPoint(m, m.random_point(rng), check=False)
        w = ex.init_spread(center, g.num_nodes, sigma, rng)
        phi_err = max(phi_err, fd_gradient_check(
            lambda X: potential_from_dist(m.pair_dist_sq(X), Qoff),
            lambda X: m.consensus_grad(X, Qoff), w, directions=5, stream=rng))
    ok = cost_err <= GRADCHECK_TOL and phi_err <= GRADCHECK_TOL
    print(f"cost: max relative error {cost_err:.3e}")
    print(f"phi: max relative error {phi_err:.3e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_oracle(args):
    cfg = ex.load_config(args.config)
    if cfg.problem["kind"] not in ("eigvec", "pca"):
        raise ConfigError("oracle supports eigvec and pca problems only")
    problem = ex.build_problem(cfg, with_oracle=False)
    sol = ex.compute_oracle(problem.costs)
    out = _out_dir(cfg, args.out)
    np.savetxt(out / "oracle.txt", sol.value.coords, fmt="%.17g")
    print(f"{sol.kind}: residual {sol.residual:.3e}")
    print(f"eigenvalues: {' '.join(format(v, '.12g') for v in sol.eigenvalues)}")
    return EXIT_OK


def cmd_graphgen(args):
    adj = network.random_connected_graph(args.nodes, args.edge_prob, args.seed)
    g = network.metropolis_weights(adj)
    network.write_edge_list(adj, args.out)
    d = np.diag(g.weights)
    print(f"nodes={g.num_nodes} edges={len(g.edges)}")
    print(f"gamma={g.spectral_gap_norm:.12g}")
    print(f"diameter={g.diameter}")
    print(f"self_weight_min={d.min():.12g} self_weight_max={d.max():.12g}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mcons", description="Distributed optimization on Riemannian manifolds.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output.directory)")
    r.set_defaults(func=cmd_run)
    gc = sub.add_parser("gradcheck", help="finite-difference check of the cost and consensus gradients")
    gc.add_argument("--config", required=True)
    gc.set_defaults(func=cmd_gradcheck)
    o = sub.add_parser("oracle", help="compute the ground-truth solution")
    o.add_argument("--config", required=True)
    o.add_argument("--out", help="output directory (overrides output.directory)")
    o.set_defaults(func=cmd_oracle)
    gg = sub.add_parser("graphgen", help="draw a connected random graph and write its edge list")
    gg.add_argument("--nodes", type=int, required=True)
    gg.add_argument("--edge-prob", type=float, required=True)
    gg.add_argument("--seed", type=int, required=True)
    gg.add_argument("--out", required=True)
    gg.set_defaults(func=cmd_graphgen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except DegenerateSpectrum as exc:
        _err(str(exc))
        return EXIT_DEGENERATE
    except GraphNotConnected as exc:
        _err(str(exc))
        return EXIT_GRAPH
    except (ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
