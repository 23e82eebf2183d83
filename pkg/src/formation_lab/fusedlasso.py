"""Least squares with an L1 penalty on adjacent-coefficient differences.

Solves

    min_beta  0.5 * ||y - X beta||^2  +  lam * sum_j |beta[j+1] - beta[j]|

which drives ``beta`` toward a piecewise-constant profile whose jumps mark
the informative regions of the input curve.

Solver strategy
---------------
The difference penalty is reduced to an ordinary partially-penalized lasso
by the change of variables ``beta = L alpha`` with ``L`` lower-triangular of
ones: ``alpha[0]`` is the (unpenalized) level and ``alpha[1:]`` are the
jumps.  The lasso is solved by accelerated proximal gradient (FISTA with
gradient-based restarts).  Periodically the current jump support is
"polished": the segment values are re-solved exactly from the normal
equations of the reduced problem, jumps whose sign flips are dropped, and
the candidate is certified through the closed-form dual of the difference
penalty.  A certified candidate is optimal to the reported KKT residual,
so warm-started path solves terminate long before the iteration cap.

Duals: stationarity requires ``X'(X beta - y) + D' u = 0`` which pins
``u = cumsum(g)`` for ``g = X'(X beta - y)``.  Optimality holds iff
``sum(g) = 0``, ``|u_j| <= lam`` on flat stretches and ``u_j = lam *
sign(jump)`` at jumps; the KKT residual is the largest violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class FusedLassoProblem:
    """Problem data for one solve. ``lam >= 0``; X is n x p with n, p >= 2."""

    X: np.ndarray
    y: np.ndarray
    lam: float

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ShapeError(f"X {X.shape} incompatible with y {y.shape}")
        if X.shape[0] < 2 or X.shape[1] < 2:
            raise ShapeError("need n >= 2 and p >= 2")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class SolverOptions:
    rel_obj_tol: float = 1e-10
    kkt_tol: float = 1e-6
    max_iter: int = 200_000
    check_every: int = 50
    power_iters: int = 50
    # Skip the exact segment refit while the support is still too dense to
    # be a plausible solution pattern.
    max_polish_jumps: int = 400


@dataclass(frozen=True)
class FusedLassoFit:
    beta: np.ndarray
    lam: float
    iterations: int
    objective_value: float
    kkt_residual: float
    converged: bool


def objective(X, y, beta, lam) -> float:
    r = y - X @ beta
    return 0.5 * float(r @ r) + lam * path_length_of(beta)


def path_length_of(beta) -> float:
    return float(np.sum(np.abs(np.diff(beta))))


def kkt_residual(problem: FusedLassoProblem, beta) -> float:
    """Largest violation of the subgradient optimality conditions at beta.

    Flat/jump classification uses exact zero differences, so the residual is
    meaningful for exactly piecewise-constant candidates (as produced by
    this solver) and for hand-built test points.
    """
    X, y, lam = problem.X, problem.y, problem.lam
    beta = np.asarray(beta, dtype=float).ravel()
    g = X.T @ (X @ beta - y)
    u = np.cumsum(g)
    viol = abs(u[-1])  # stationarity along the unpenalized constant direction
    u = u[:-1]
    d = np.diff(beta)
    jumps = d != 0.0
    if np.any(jumps):
        viol = max(viol, float(np.max(np.abs(u[jumps] - lam * np.sign(d[jumps])))))
    if np.any(~jumps):
        viol = max(viol, float(np.max(np.maximum(np.abs(u[~jumps]) - lam, 0.0))))
    return viol


def lambda_max(X, y) -> float:
    """Smallest lam at which the constant-beta solution is optimal."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    s = X.sum(axis=1)  # X @ ones
    ss = float(s @ s)
    c = float(s @ y) / ss if ss > 0 else 0.0
    g = X.T @ (c * s - y)
    u = np.cumsum(g)[:-1]
    return float(np.max(np.abs(u))) if u.size else 0.0


# --- internal helpers -------------------------------------------------------

def _jump_operator(X):
    """A = X L where L is lower-triangular ones; A[:, j] = sum_{k>=j} X[:, k]."""
    return np.cumsum(X[:, ::-1], axis=1)[:, ::-1]


def _spectral_step(A, iters):
    v = np.full(A.shape[1], 1.0 / np.sqrt(A.shape[1]))
    lam_sq = 1.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        lam_sq = float(np.linalg.norm(w))
        if lam_sq == 0.0:
            return 1.0
        v = w / lam_sq
    # small safety margin: power iteration approaches the norm from below
    return 1.0 / (lam_sq * 1.01)


def _segment_columns(csum, starts, p):
    """M[:, k] = sum of X columns in segment k, from the column prefix sums."""
    ends = np.append(starts[1:], p)
    M = csum[:, ends - 1].copy()
    inner = starts > 0
    M[:, inner] -= csum[:, starts[inner] - 1]
    return M


def _penalty_gradient(lam, signs):
    v = np.zeros(len(signs))
    if len(signs) > 1:
        v[1:] += lam * signs[1:]
        v[:-1] -= lam * signs[1:]
    return v


def _drop_jumps(starts, signs, gamma, drop_mask):
    """Merge segments whose entering jump is in drop_mask (gamma values equal
    at the blocking point, so either side's value represents the merge)."""
    keep = np.concatenate([[True], ~drop_mask])
    return starts[keep], signs[keep], gamma[keep]


def _refit_feasible(csum, y, lam, starts, signs, gamma, p):
    """Exact minimizer over piecewise-constant beta with fixed jump signs.

    Lawson-Hanson style: from the sign-feasible point ``gamma``, move toward
    the unconstrained stationary point of the reduced problem (or along an
    unbounded descent direction when the reduced system is inconsistent),
    stop at the first sign constraint, drop the blocking jump, repeat.
    """
    for _ in range(2 * len(starts) + 4):
        k = len(starts)
        M = _segment_columns(csum, starts, p)
        v = _penalty_gradient(lam, signs)
        U, sv, Vt = np.linalg.svd(M, full_matrices=False)
        rank = int(np.sum(sv > 1e-11 * max(sv[0], 1e-300)))
        Vr = Vt[:rank]
        v_null = v - Vr.T @ (Vr @ v)
        nv = float(np.linalg.norm(v_null))
        if nv > 1e-9 * (1.0 + lam):
            # Penalty gradient has a null-space component: the restricted
            # objective is unbounded along -v_null until a sign flips.
            direction = -v_null / nv
            full_step = np.inf
        else:
            rhs = M.T @ y - v
            gamma_new = Vr.T @ ((Vr @ rhs) / sv[:rank] ** 2)
            direction = gamma_new - gamma
            full_step = 1.0
        if k == 1:
            return gamma + direction * min(full_step, 1.0), starts, signs
        dcur = np.diff(gamma) * signs[1:]
        ddir = np.diff(direction) * signs[1:]
        blocking = ddir < 0.0
        if not np.any(blocking):
            theta = full_step
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                theta_j = np.where(blocking, -dcur / ddir, np.inf)
            theta = float(np.min(theta_j))
            theta = max(theta, 0.0)
        if theta >= full_step:
            return gamma + direction, starts, signs
        gamma = gamma + theta * direction
        drop = blocking & (theta_j <= theta * (1 + 1e-12))
        if not np.any(drop):
            drop = blocking  # numerical tie fallback; never loop in place
        starts, signs, gamma = _drop_jumps(starts, signs, gamma, drop)
    return gamma, starts, signs


def _expand_segments(gamma, starts, p):
    reps = np.diff(np.append(starts, p))
    return np.repeat(gamma, reps)


def _active_set(problem, starts, signs, gamma, opts, max_moves):
    """Refine a jump pattern to optimality: exact sign-restricted refits plus
    adding the worst dual violator, until the KKT residual certifies.

    Returns (beta, kkt, starts, signs, certified) for the best candidate.
    """
    X, y, lam = problem.X, problem.y, problem.lam
    p = X.shape[1]
    csum = np.cumsum(X, axis=1)
    best = None
    for _ in range(max_moves):
        gamma, starts, signs = _refit_feasible(csum, y, lam, starts, signs, gamma, p)
        beta = _expand_segments(gamma, starts, p)
        res = kkt_residual(problem, beta)
        if best is None or res < best[1]:
            best = (beta, res, starts, signs)
        if res <= opts.kkt_tol:
            return beta, res, starts, signs, True
        g = X.T @ (X @ beta - y)
        u = np.cumsum(g)[:-1]
        over = np.abs(u) - lam
        over[np.diff(beta) != 0.0] = -np.inf  # jump positions already pinned
        j = int(np.argmax(over))
        if not np.isfinite(over[j]) or over[j] <= 0.0:
            break  # residual comes from the linear algebra, not the pattern
        pos = j + 1
        idx = int(np.searchsorted(starts, pos))
        starts = np.insert(starts, idx, pos)
        signs = np.insert(signs, idx, np.sign(u[j]))
        gamma = np.insert(gamma, idx, gamma[idx - 1])  # new jump opens at zero
        if len(starts) > opts.max_polish_jumps:
            break
    return best[0], best[1], best[2], best[3], False


def _pattern_from_alpha(alpha):
    active = np.flatnonzero(alpha[1:] != 0.0) + 1
    starts = np.concatenate([[0], active])
    signs = np.concatenate([[0.0], np.sign(alpha[active])])
    gamma = np.cumsum(alpha)[starts]
    return starts, signs, gamma


def _soft_threshold(w, t):
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def solve(problem: FusedLassoProblem, opts: SolverOptions | None = None,
          warm_beta: np.ndarray | None = None) -> FusedLassoFit:
    """Minimize the penalized objective; deterministic for fixed inputs.

    A fit is flagged converged only when its KKT residual is within
    ``opts.kkt_tol``; hitting the iteration cap returns the best candidate
    found, flagged not converged.
    """
    opts = opts or SolverOptions()
    X, y, lam = problem.X, problem.y, problem.lam

    if lam == 0.0:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        fit_obj = objective(X, y, beta, 0.0)
        res = kkt_residual(problem, beta)
        return FusedLassoFit(beta, 0.0, 0, fit_obj, res, res <= opts.kkt_tol)

    p = X.shape[1]

    if warm_beta is not None:
        alpha = np.concatenate([[warm_beta[0]], np.diff(warm_beta)])
    else:
        alpha = np.zeros(p)

    # Fast path: refine the warm jump pattern directly.  Certified output is
    # exact; otherwise fall through to the accelerated proximal iteration.
    starts, signs, gamma = _pattern_from_alpha(alpha)
    beta_a, kkt_a, starts, signs, ok = _active_set(problem, starts, signs, gamma, opts,
                                                   max_moves=opts.max_polish_jumps)
    if ok:
        return FusedLassoFit(beta_a, lam, 0, objective(X, y, beta_a, lam), kkt_a, True)

    best_beta, best_kkt = beta_a, kkt_a
    best_obj = objective(X, y, beta_a, lam)
    alpha0 = np.concatenate([[beta_a[0]], np.diff(beta_a)])
    if objective(X, y, np.cumsum(alpha), lam) < best_obj:
        alpha0 = alpha
    alpha = alpha0

    A = _jump_operator(X)
    step = _spectral_step(A, opts.power_iters)
    thresh = lam * step

    alpha_prev = alpha.copy()
    t = 1.0
    last_check_obj = best_obj
    stall_count = 0
    it = 0
    while it < opts.max_iter:
        for _ in range(min(opts.check_every, opts.max_iter - it)):
            it += 1
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = alpha + ((t - 1.0) / t_next) * (alpha - alpha_prev)
            grad = A.T @ (A @ z - y)
            w = z - step * grad
            alpha_next = w.copy()
            alpha_next[1:] = _soft_threshold(w[1:], thresh)
            # gradient-scheme restart: kill momentum when it points uphill
            if float((z - alpha_next) @ (alpha_next - alpha)) > 0.0:
                t_next = 1.0
            alpha_prev, alpha, t = alpha, alpha_next, t_next

        beta_it = np.cumsum(alpha)
        obj_it = objective(X, y, beta_it, lam)
        if obj_it < best_obj:
            best_obj, best_beta = obj_it, beta_it

        if np.count_nonzero(alpha[1:]) <= opts.max_polish_jumps:
            st, sg, gm = _pattern_from_alpha(alpha)
            beta_p, kkt_p, *_ , ok = _active_set(problem, st, sg, gm, opts, max_moves=50)
            obj_p = objective(X, y, beta_p, lam)
            if ok:
                return FusedLassoFit(beta_p, lam, it, obj_p, kkt_p, True)
            if obj_p < best_obj:
                best_obj, best_beta, best_kkt = obj_p, beta_p, kkt_p
                # resume iterating from the refined point
                alpha = np.concatenate([[beta_p[0]], np.diff(beta_p)])
                alpha_prev = alpha.copy()
                t = 1.0

        stalled = abs(last_check_obj - obj_it) <= opts.rel_obj_tol * max(1.0, abs(obj_it)) * opts.check_every
        last_check_obj = obj_it
        stall_count = stall_count + 1 if stalled else 0
        if stalled and best_kkt <= opts.kkt_tol:
            break
        if stall_count >= 20:
            break  # objective flat for many checks and still uncertified

    return FusedLassoFit(best_beta, lam, it, best_obj, best_kkt,
                         best_kkt <= opts.kkt_tol)


def solve_path(X, y, lambda_grid, opts: SolverOptions | None = None) -> list[FusedLassoFit]:
    """Warm-started solves over a strictly descending penalty grid."""
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ShapeError("lambda grid must be a nonempty 1-D sequence")
    if np.any(np.diff(grid) >= 0):
        raise ValueError("lambda grid must be strictly descending")
    fits = []
    warm = None
    for lam in grid:
        fit = solve(FusedLassoProblem(X, y, float(lam)), opts, warm_beta=warm)
        fits.append(fit)
        warm = fit.beta
    return fits


def default_lambda_grid(lam_max: float, points: int = 60, min_ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced descending grid from lam_max down to lam_max * min_ratio."""
    if lam_max <= 0:
        raise ValueError("lam_max must be positive")
    return np.geomspace(lam_max, lam_max * min_ratio, points)


def predict(fit: FusedLassoFit, X_std, y_mean: float, y_scale: float,
            y_is_log: bool = False) -> np.ndarray:
    """Map standardized rows through beta and invert the output transform."""
    X_std = np.asarray(X_std, dtype=float)
    if X_std.ndim == 1:
        X_std = X_std[None, :]
    if X_std.shape[1] != fit.beta.shape[0]:
        raise ShapeError(f"{X_std.shape[1]} columns vs {fit.beta.shape[0]} coefficients")
    out = X_std @ fit.beta * y_scale + y_mean
    return np.exp(out) if y_is_log else out
