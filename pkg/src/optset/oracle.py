"""Brute-force ground truth, independent of any network.

Grid scans plus deterministic refinement. Every reported point's residual is
re-evaluated from the analytic sources before it leaves this module, so these
results can stand as oracles for the trained solvers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .approximator import sample_domain
from .functions import FunctionSource

BISECTION_XTOL = 1e-10
REFINE_STEPS = 20


@dataclass
class OracleReport:
    method: str
    resolution: tuple[int, ...]
    points: np.ndarray  # (n_found, n_dim)
    residuals: np.ndarray  # (n_found,) re-evaluated from the sources
    wall_time: float


def _scalar(h: FunctionSource, x: np.ndarray) -> float:
    return float(h(x.reshape(1, -1))[0])


def _bisect(h: FunctionSource, lo: float, hi: float, flo: float) -> float:
    while hi - lo > BISECTION_XTOL:
        mid = 0.5 * (lo + hi)
        fmid = _scalar(h, np.array([mid]))
        if fmid == 0.0:
            return mid
        if (flo < 0) == (fmid < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def grid_roots(h: FunctionSource, domain, resolution) -> OracleReport:
    """Locate the zero set of h on a bounded box.

    1-D: sign-change bracketing refined by bisection to 1e-10. Higher
    dimensions: keep grid points whose |h| is below a local Lipschitz bound,
    then run a fixed number of damped Gauss-Newton steps on h^2.
    """
    start = time.perf_counter()
    domain = [(float(lo), float(hi)) for lo, hi in domain]
    n = len(domain)
    if np.isscalar(resolution):
        resolution = [int(resolution)] * n
    resolution = tuple(int(r) for r in resolution)

    if n == 1:
        lo, hi = domain[0]
        xs = np.linspace(lo, hi, resolution[0])
        vals = h(xs.reshape(-1, 1))
        roots = [float(xs[i]) for i in np.nonzero(vals == 0.0)[0]]
        for i in range(len(xs) - 1):
            if vals[i] == 0.0 or vals[i + 1] == 0.0:
                continue
            if (vals[i] < 0) != (vals[i + 1] < 0):
                roots.append(_bisect(h, xs[i], xs[i + 1], vals[i]))
        points = np.array(sorted(roots)).reshape(-1, 1)
        residuals = np.abs(h(points)) if len(points) else np.zeros(0)
        return OracleReport("grid+bisection", resolution, points, residuals,
                            time.perf_counter() - start)

    grid = sample_domain(domain, resolution=resolution, mode="grid")
    vals = h(grid)
    spacing = np.array([(hi - lo) / max(r - 1, 1) for (lo, hi), r in zip(domain, resolution)])
    field = vals.reshape(resolution)
    partials = np.gradient(field, *[np.linspace(lo, hi, r) for (lo, hi), r in zip(domain, resolution)])
    lipschitz = np.sqrt(sum(p**2 for p in partials)).reshape(-1)
    half_diag = 0.5 * float(np.sqrt((spacing**2).sum()))
    keep = np.abs(vals) <= 1.5 * lipschitz * half_diag + 1e-12
    candidates = grid[keep]

    points = _refine_descent(h, candidates)
    residuals = np.abs(h(points)) if len(points) else np.zeros(0)
    tol = 1.5 * float(lipschitz.max()) * half_diag if len(lipschitz) else 0.0
    inside = residuals <= tol + 1e-12
    return OracleReport("grid+descent", resolution, points[inside], residuals[inside],
                        time.perf_counter() - start)


def _refine_descent(h: FunctionSource, x: np.ndarray) -> np.ndarray:
    """Damped Gauss-Newton on h^2: x <- x - t * h * grad_h / |grad_h|^2."""
    if len(x) == 0:
        return x
    x = x.copy()
    vals = h(x)
    for _ in range(REFINE_STEPS):
        grads = h.gradient(x)
        norms = (grads**2).sum(axis=1)
        norms = np.maximum(norms, 1e-300)
        step = (vals / norms)[:, None] * grads
        t = np.ones(len(x))
        for _ in range(20):
            trial = x - t[:, None] * step
            trial_vals = h(trial)
            worse = np.abs(trial_vals) > np.abs(vals)
            if not worse.any():
                break
            t[worse] *= 0.5
        x = x - t[:, None] * step
        vals = h(x)
    return x


def surface_intersection_oracle(
    f: FunctionSource, g: FunctionSource, domain, resolution, tol: float
) -> OracleReport:
    """Grid points on {f = 0} ∩ {g = 0} after one Newton-like refinement step.

    Each grid point takes a least-norm Gauss-Newton step for the stacked
    residual (f, g); points whose refined residuals both fall within ``tol``
    are kept.
    """
    start = time.perf_counter()
    domain = [(float(lo), float(hi)) for lo, hi in domain]
    if np.isscalar(resolution):
        resolution = [int(resolution)] * len(domain)
    resolution = tuple(int(r) for r in resolution)
    grid = sample_domain(domain, resolution=resolution, mode="grid")

    rf = f(grid)
    rg = g(grid)
    gf = f.gradient(grid)
    gg = g.gradient(grid)
    # solve (J J^T) w = r for the 2x2 system, then step along J^T w
    a = (gf * gf).sum(axis=1)
    b = (gf * gg).sum(axis=1)
    c = (gg * gg).sum(axis=1)
    det = a * c - b * b
    degenerate = det <= 1e-12 * np.maximum(a * c, 1e-300)
    safe_det = np.where(degenerate, 1.0, det)
    w1 = (c * rf - b * rg) / safe_det
    w2 = (a * rg - b * rf) / safe_det
    # parallel gradients: decouple into independent per-surface steps
    w1 = np.where(degenerate, rf / np.maximum(a, 1e-300), w1)
    w2 = np.where(degenerate, rg / np.maximum(c, 1e-300), w2)
    refined = grid - (w1[:, None] * gf + w2[:, None] * gg)

    res_f = np.abs(f(refined))
    res_g = np.abs(g(refined))
    keep = (res_f <= tol) & (res_g <= tol)
    points = refined[keep]
    residuals = np.maximum(res_f[keep], res_g[keep])
    return OracleReport("grid+newton", resolution, points, residuals,
                        time.perf_counter() - start)


def non_dominated(f_values, method: str = "auto") -> np.ndarray:
    """Boolean mask of non-dominated rows (minimization, all objectives).

    Row i is dropped iff some row j satisfies F[j] <= F[i] componentwise with
    at least one strict inequality. ``method`` picks the O(N^2) reference or
    the k=2 sort-based sweep; ``auto`` uses the sweep whenever k == 2.
    """
    f = np.asarray(f_values, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] < 2:
        raise ValueError(f"need (n_points, k>=2) objective values, got {f.shape}")
    if method == "auto":
        method = "sweep" if f.shape[1] == 2 else "reference"
    if method == "reference":
        n = f.shape[0]
        mask = np.ones(n, dtype=bool)
        for i in range(n):
            le = (f <= f[i]).all(axis=1)
            lt = (f < f[i]).any(axis=1)
            if (le & lt).any():
                mask[i] = False
        return mask
    if method != "sweep":
        raise ValueError(f"unknown method {method!r}")
    if f.shape[1] != 2:
        raise ValueError("sweep method is defined for k == 2 only")

    n = f.shape[0]
    order = np.lexsort((f[:, 1], f[:, 0]))
    mask = np.ones(n, dtype=bool)
    best_f2 = np.inf  # min f2 among points with strictly smaller f1
    i = 0
    while i < n:
        j = i
        while j < n and f[order[j], 0] == f[order[i], 0]:
            j += 1
        group = order[i:j]
        group_min = f[group, 1].min()
        for idx in group:
            f2 = f[idx, 1]
            if best_f2 <= f2 or group_min < f2:
                mask[idx] = False
        best_f2 = min(best_f2, group_min)
        i = j
    return mask
