"""Independent reference computations used by the test suite only.

These deliberately avoid the code paths they check: the Riemann oracle
integrates the smoothing integral by brute force, and the LP oracle
minimizes the quadrature-discretized check objective exactly via linear
programming.
"""

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix, eye, hstack

from auctionrisk.aqr import _level_nodes
from auctionrisk.data import AuctionDataset, AuctionRecord


def riemann_objective(b, alpha, data, cfg, n_points=100_000):
    """Midpoint Riemann sum of the kernel-integrated check objective."""
    lo = max(-1.0, -alpha / cfg.h)
    hi = min(1.0, (1.0 - alpha) / cfg.h)
    t = lo + (hi - lo) * (np.arange(n_points) + 0.5) / n_points
    width = (hi - lo) / n_points
    levels = alpha + cfg.h * t
    if cfg.link_bidders is not None:
        from auctionrisk.orderstat import phi

        levels = phi(np.clip(levels, 0.0, 1.0), cfg.link_bidders)
    bmat = np.asarray(b, dtype=float).reshape(cfg.s + 1, data.D + 1)
    import math

    inv_fact = np.array([1.0 / math.factorial(j) for j in range(cfg.s + 1)])
    pi_th = (cfg.h * t)[:, None] ** np.arange(cfg.s + 1) * inv_fact
    resid = data.B[:, None] - (data.X1 @ bmat.T) @ pi_th.T  # L x n
    check = resid * (levels[None, :] - (resid < 0))
    kern = 0.75 * (1.0 - t * t) * (np.abs(t) <= 1.0)
    return float(check.sum(axis=0) @ (kern * width)) / data.L


def lp_minimize_discretized(alpha, data, cfg):
    """Exact minimizer of the fixed-node discretized objective via HiGHS.

    min sum_{l,k} omega_k [ a_k u_{lk} + (1 - a_k) v_{lk} ] / L
    s.t. P_lk . b + u_lk - v_lk = B_l,   u, v >= 0, b free.
    """
    import math

    t, omega, levels, _ = _level_nodes(alpha, cfg)
    n_nodes = t.size
    dim = (cfg.s + 1) * (data.D + 1)
    inv_fact = np.array([1.0 / math.factorial(j) for j in range(cfg.s + 1)])
    pi_th = (cfg.h * t)[:, None] ** np.arange(cfg.s + 1) * inv_fact  # K x (s+1)
    # rows ordered (l, k); design P_lk = kron(pi_th[k], X1[l])
    design = np.einsum("kj,ld->lkjd", pi_th, data.X1).reshape(data.L * n_nodes, dim)
    n_rows = data.L * n_nodes
    a_eq = hstack(
        [csr_matrix(design), eye(n_rows, format="csr"), -eye(n_rows, format="csr")],
        format="csr",
    )
    b_eq = np.repeat(data.B, n_nodes)
    w_pos = np.tile(omega * levels, data.L) / data.L
    w_neg = np.tile(omega * (1.0 - levels), data.L) / data.L
    cost = np.concatenate([np.zeros(dim), w_pos, w_neg])
    bounds = [(None, None)] * dim + [(0, None)] * (2 * n_rows)
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return res.x[:dim], float(res.fun)


def random_instance(rng, n_auctions, d_cov, s, h=None, n_bidders=3):
    """Small random dataset + config for oracle comparisons."""
    x_mat = rng.random((n_auctions, d_cov)) if d_cov else np.empty((n_auctions, 0))
    bids = 1.0 + rng.random(n_auctions) + (x_mat.sum(axis=1) if d_cov else 0.0)
    records = [
        AuctionRecord(float(bids[i]), tuple(x_mat[i]), n_bidders) for i in range(n_auctions)
    ]
    data = AuctionDataset(records)
    if h is None:
        h = 0.1 + 0.2 * rng.random()
    return data, h
