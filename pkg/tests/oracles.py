"""Independent brute-force oracles shared by unit and acceptance tests.

These deliberately avoid the library's solver paths: plain grid
enumeration and exhaustive candidate evaluation only.
"""

import numpy as np


def grid_search_2stage_scalar(a, b, x0, lo, hi, res=1e-4):
    """Exhaustive grid minimum of the 2-stage scalar problem
    x'Qx + u'Ru with Q=R=1. Returns (u_pair, cost)."""
    grid = np.arange(lo, hi + res / 2, res)
    u0 = grid[:, None]
    u1 = grid[None, :]
    x1 = a * x0 + b * u0
    cost = x0**2 + u0**2 + x1**2 + u1**2
    idx = np.unravel_index(np.argmin(cost), cost.shape)
    return np.array([grid[idx[0]], grid[idx[1]]]), float(cost[idx])


def refine_grid_min(f, dims, lo, hi, rounds=4, pts=21):
    """Nested zooming grid minimization of f over [lo, hi]^dims."""
    center = np.zeros(dims)
    half = (hi - lo) / 2.0
    center[:] = (hi + lo) / 2.0
    best = np.inf
    for _ in range(rounds):
        axes = [np.linspace(c - half, c + half, pts) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.array([f(row) for row in flat])
        k = int(np.argmin(vals))
        best = float(vals[k])
        center = flat[k]
        half /= pts / 2.5
    return best


def enumerate_select_pairs(thetas, x_options, y, t, t_end, cost, constraints,
                           solve_fixed):
    """Exhaustive (theta, x0) enumeration for the selection step.

    solve_fixed(theta, x0) must return the optimal window cost for a fixed
    initial state; this helper just takes the argmin over the grid.
    """
    best = None
    for ti, theta in enumerate(thetas):
        for xi, x0 in enumerate(x_options):
            c = solve_fixed(theta, x0)
            key = (c, ti, xi)
            if best is None or key < best[0]:
                best = (key, theta, x0)
    _, theta, x0 = best
    return theta, x0, best[0][0]


def weiszfeld_geometric_median(points, iters=500, tol=1e-12):
    """Geometric median of a list of matrices (Frobenius metric)."""
    pts = [np.asarray(p, dtype=float) for p in points]
    x = np.mean(pts, axis=0)
    for _ in range(iters):
        dists = np.array([max(np.linalg.norm(x - p), 1e-15) for p in pts])
        w = 1.0 / dists
        x_new = sum(wi * p for wi, p in zip(w, pts)) / np.sum(w)
        if np.linalg.norm(x_new - x) < tol:
            return x_new
        x = x_new
    return x
