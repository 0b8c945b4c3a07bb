"""Numerical verification suites with JSON-ready reports."""
from __future__ import annotations

import numpy as np

from .analysis import (chebnet_to_l3net, edgenet_to_l3net, equivariance_check, cheb_layer, gat_to_l3net,
                       l3net_layer, mirror_flip_permutation, permute_signal, random_bank,
                       ring_difference_bank, ring_difference_filter, spectral_residual, verify_theorem1,
                       verify_theorem2)
from .graph import build_grid, build_ring, normalized_adjacency
from .layers import (ChebParams, EdgeNetParams, GATParams, chebnet_forward, edgenet_forward, gat_attention,
                     gat_forward, l3net_forward, cheb_adjacency)
from .regularization import RegContext, verify_strong_reg_limit

SUITES = ("reductions", "expressiveness", "equivariance", "stability", "strong-reg")


def relative_discrepancy(y: np.ndarray, ref: np.ndarray) -> float:
    """``max|y - ref| / max|ref|``, absolute when the target is below 1e-8."""
    err = float(np.abs(y - ref).max(initial=0.0))
    scale = float(np.abs(ref).max(initial=0.0))
    return err if scale < 1e-8 else err / scale


def _check(name, value, threshold, op="<=", **extra) -> dict:
    ok = value <= threshold if op == "<=" else value >= threshold
    return {"name": name, "value": float(value), "threshold": threshold, "op": op, "passed": bool(ok), **extra}


def reduction_discrepancies(graph, kind: str, draws: int, inputs: int, rng: np.random.Generator,
                            channels=(2, 3)) -> float:
    cin, cout = channels
    worst = 0.0
    for _ in range(draws):
        X = rng.standard_normal((inputs, graph.n, cin))
        if kind in ("cheb", "gcn"):
            cp = ChebParams.random(3, cin, cout, rng, tied_gcn=kind == "gcn")
            cp.bias = rng.standard_normal(cout)
            ref = chebnet_forward(X, cp, cheb_adjacency(graph, kind == "gcn")).value
            got = l3net_forward(X, chebnet_to_l3net(cp, graph)).value
            worst = max(worst, relative_discrepancy(got, ref))
        elif kind == "edgenet":
            ep = EdgeNetParams.random(graph, 3, cin, cout, rng)
            ep.bias = rng.standard_normal(cout)
            ref = edgenet_forward(X, ep).value
            got = l3net_forward(X, edgenet_to_l3net(ep)).value
            worst = max(worst, relative_discrepancy(got, ref))
        elif kind == "gat":
            gp = GATParams.random(graph, 3, cin, cout, rng)
            gp.bias = rng.standard_normal(cout)
            ref = gat_forward(X, gp).value
            att = gat_attention(X, gp)
            for b in range(inputs):
                got = l3net_forward(X[b:b + 1], gat_to_l3net(att[b], gp)).value
                worst = max(worst, relative_discrepancy(got, ref[b:b + 1]))
        else:
            raise ValueError(f"unknown reduction {kind!r}")
    return worst


def suite_reductions(trials: int = 50, seed: int = 0, inputs: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    checks = []
    for gname, g in (("ring8", build_ring(8)), ("grid7x7", build_grid(7, 7))):
        for kind in ("cheb", "gcn", "gat", "edgenet"):
            d = reduction_discrepancies(g, kind, trials, inputs, rng)
            checks.append(_check(f"{kind}_to_l3net[{gname}]", d, 1e-10))
    return {"checks": checks}


def difference_filter_residual(n: int = 8) -> float:
    g = build_ring(n)
    B = ring_difference_filter(n)
    return spectral_residual(g, B)[0] / np.linalg.norm(B)


def suite_expressiveness(trials: int = 0, seed: int = 0) -> dict:
    g = build_ring(8)
    A = normalized_adjacency(g, "sym").matrix
    rel = difference_filter_residual(8)
    return {"checks": [
        _check("difference_filter_normalized_residual", rel, 0.1, op=">="),
        _check("identity_residual", spectral_residual(g, np.eye(8))[0], 1e-10),
        _check("A_sym_residual", spectral_residual(g, A)[0], 1e-10),
    ]}


def mirror_probe_deviation(n: int = 8, u: int = 3, j: int = 0) -> float:
    """Equivariance gap of the ring difference filter under the mirror flip at ``u`` for a delta probe at ``j``."""
    g = build_ring(n)
    perm = mirror_flip_permutation(g, u)
    x = np.zeros((1, n, 1))
    x[0, j, 0] = 1.0
    layer = l3net_layer(ring_difference_bank(g))
    return float(np.linalg.norm(layer(permute_signal(x, perm), g) - permute_signal(layer(x, g), perm)))


def suite_equivariance(trials: int = 100, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    g = build_ring(8)
    cheb = ChebParams.random(5, 2, 3, rng)
    gcn = ChebParams.random(1, 2, 3, rng, tied_gcn=True)
    return {"checks": [
        _check("chebnet_L5", equivariance_check(cheb_layer(cheb), g, trials, 2, rng), 1e-12),
        _check("gcn", equivariance_check(cheb_layer(gcn), g, trials, 2, rng), 1e-12),
        _check("l3net_difference_mirror_flip", mirror_probe_deviation(), 0.1, op=">="),
    ]}


def suite_stability(trials: int = 1000, seed: int = 0, bank=None) -> dict:
    rng = np.random.default_rng(seed)
    g = build_ring(64)
    fb = bank if bank is not None else random_bank(g, (0, 1, 2), 1, 4, rng)
    ctx = RegContext.for_bank(fb)
    checks, constants = [], {}
    for act in ("identity", "relu"):
        t1 = verify_theorem1(fb, trials, act, rng)
        checks.append(_check(f"theorem1_violations[{act}]", t1.violations, 0, max_ratio=t1.max_ratio,
                             bound1=t1.bound, slack=t1.slack))
        for fam, rep in verify_theorem2(fb, ctx, trials=trials, activation=act, rng=rng).items():
            checks.append(_check(f"theorem2_violations[{act},{fam}]", rep.violations, 0, max_ratio=rep.max_ratio,
                                 rho=rep.rho, bound2=rep.bound2, improves=rep.improves))
            constants.update(beta1=rep.beta1, beta2=rep.beta2, bound1=rep.bound1)
    return {"checks": checks, "constants": constants}


def suite_strong_reg(trials: int = 0, seed: int = 0) -> dict:
    checks = []
    for gname, g in (("ring8", build_ring(8)), ("grid7x7", build_grid(7, 7))):
        rep = verify_strong_reg_limit(g, (1,))
        checks.append(_check(f"min_cosine[{gname}]", rep.min_cosine, 1 - 1e-8, op=">="))
        checks.append(_check(f"sign_constant[{gname}]", float(rep.all_sign_constant), 1.0, op=">="))
        checks.append(_check(f"energy_error[{gname}]", rep.max_energy_error, 1e-8))
    return {"checks": checks}


def run_suite(name: str, trials: int | None = None, seed: int = 0) -> dict:
    fns = {"reductions": suite_reductions, "expressiveness": suite_expressiveness,
           "equivariance": suite_equivariance, "stability": suite_stability, "strong-reg": suite_strong_reg}
    if name not in fns:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    kw = {"seed": seed}
    if trials is not None:
        kw["trials"] = trials
    report = fns[name](**kw)
    report = {"suite": name, "seed": seed, **report}
    report["passed"] = all(c["passed"] for c in report["checks"])
    return report
