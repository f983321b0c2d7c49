"""Nearest implied correlation matrix with factor structure.

Given a target matrix A (typically an ex-post estimate, possibly indefinite)
and a market constraint, find loadings X solving

    min_X  f(X) = || J o (X X') - (A - I) ||_F^2
    s.t.   g(X) = sigma_m^2 - w' diag(sigma) C(X) diag(sigma) w = 0
           h_i(X) = 1 - ||X_i||^2 >= 0  for every row i,

so that C(X) = J o (X X') + I is the factor-structured correlation matrix
nearest to A that is both PSD by construction and consistent with the
option-implied index variance.

The solver is a spectral projected gradient method with inexact
restoration: each outer iterate moves along the negative gradient with a
Barzilai-Borwein step, and the trial point is *restored* to the
intersection of Omega (the row-norm ball products) and the variance
surface E = {X : g(X) = 0} by alternating two cheap projections:

* P_Omega rescales only the rows whose squared norm exceeds one.
* P_E moves along the first-order (Neumann) direction of the constraint,
  X_E = X + lambda (v v' o J) X with v = sigma o w, where lambda solves
  the scalar quadratic obtained by substituting X_E into g.  The quadratic
  has two roots; the restoration picks a branch on first use and keeps it
  for all subsequent projections of the same run, which prevents the
  alternation from oscillating between the two sheets of the surface.

A monotone Armijo arc search on s |-> P_feas(X - s alpha grad f) keeps the
objective trace non-increasing, so convergence of f is a certificate the
caller can check.  Because the Neumann step is only first order, the guard
in solve_nicm rescales volatilities by a common time-scale factor whenever
max_i |v_i| approaches one, and reports residuals in original units.

reference_solve is an independent cross-check for small instances: an
augmented Lagrangian on the same objective and constraints, minimized with
scipy's L-BFGS-B from the same starting point.  It shares no projection or
line-search code with solve_nicm, so agreement of the two objective values
is meaningful evidence of correctness.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import scipy.optimize

from .core import (
    CorrMatrix,
    FactorLoadings,
    MarketSpec,
    IndexConstraint,
    _corr_array,
    _loadings_array,
    assemble_correlation,
)

logger = logging.getLogger(__name__)

# Spectral (Barzilai-Borwein) step bounds.
STEP_MIN = 1e-10
STEP_MAX = 1e10

# Rescale volatilities when max |sigma_i w_i| reaches this level; the
# first-order equality projection degrades as the entries approach one.
V_RESCALE_AT = 0.9


class RestorationError(RuntimeError):
    """Restoration to the feasible set failed; carries the last residual."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration limits of the nearest-matrix solver.

    var_tol bounds the admissible constraint residual |g| of a converged
    solution.  fn_tol stops the outer loop once the objective improvement
    per accepted step falls below it; improvement is measured absolutely
    by default or relative to max(1, |f|) with improvement="relative".
    """

    k: int = 1
    var_tol: float = 1e-6
    fn_tol: float = 1e-3
    improvement: str = "absolute"
    max_outer_iter: int = 200
    max_restoration_iter: int = 100
    restoration_tol: float = 1e-10
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    step_min: float = STEP_MIN
    step_max: float = STEP_MAX

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        for name in ("var_tol", "fn_tol", "restoration_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.improvement not in ("absolute", "relative"):
            raise ValueError(f"improvement must be 'absolute' or 'relative', got {self.improvement!r}")
        if self.max_outer_iter < 1 or self.max_restoration_iter < 1 or self.max_backtracks < 1:
            raise ValueError("iteration limits must be at least 1")
        if not 0.0 < self.armijo_c1 < 1.0:
            raise ValueError(f"armijo_c1 must lie in (0, 1), got {self.armijo_c1!r}")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError(f"backtrack must lie in (0, 1), got {self.backtrack!r}")
        if not 0.0 < self.step_min <= self.step_max:
            raise ValueError("spectral step bounds must satisfy 0 < step_min <= step_max")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver config fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class SolverResult:
    """Converged (or best-effort) output of solve_nicm / reference_solve."""

    X_star: FactorLoadings
    C_star: CorrMatrix
    fn: float
    fn_trace: np.ndarray
    constraint_residual: float
    outer_iterations: int
    restorations: int
    wall_time: float
    converged: bool
    time_scale: float = 1.0
    message: str = ""

    def to_dict(self) -> dict:
        """JSON-ready summary; the matrices are exported separately as CSV."""
        return {
            "fn": self.fn,
            "fn_trace": [float(v) for v in self.fn_trace],
            "constraint_residual": self.constraint_residual,
            "outer_iterations": self.outer_iterations,
            "restorations": self.restorations,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "time_scale": self.time_scale,
            "message": self.message,
            "n": self.X_star.n,
            "k": self.X_star.k,
        }


def _target_offdiag(A) -> np.ndarray:
    """A - I realized as A with its diagonal zeroed."""
    A_hat = _corr_array(A).copy()
    np.fill_diagonal(A_hat, 0.0)
    return A_hat


def objective(X, A) -> float:
    """f(X) = || J o (X X') - (A - I) ||_F^2."""
    arr = _loadings_array(X)
    A_hat = _target_offdiag(A)
    M = arr @ arr.T
    np.fill_diagonal(M, 0.0)
    D = M - A_hat
    return float(np.sum(D * D))


def objective_gradient(X, A) -> np.ndarray:
    """grad f(X) = 4 (J o (X X') - (A - I)) X."""
    arr = _loadings_array(X)
    A_hat = _target_offdiag(A)
    M = arr @ arr.T
    np.fill_diagonal(M, 0.0)
    return 4.0 * ((M - A_hat) @ arr)


def lagrangian_gradient_g(X, spec: MarketSpec, lam: np.ndarray) -> np.ndarray:
    """Gradient of sum_j lam_j g_j(X).

    Each g_j(X) = sigma_j^2 - v_j' (J o X X' + I) v_j with v_j = sigma o w_j
    has gradient -2 (v_j v_j' o J) X, so the weighted sum is
    -2 (sum_j lam_j v_j v_j' o J) X, assembled in a single rank-k update.
    """
    arr = _loadings_array(X)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size != len(spec.constraints):
        raise ValueError(f"{lam.size} multipliers for {len(spec.constraints)} constraints")
    V = spec.sigma[:, None] * np.column_stack([c.weights for c in spec.constraints])
    M = (V * lam) @ V.T
    np.fill_diagonal(M, 0.0)
    return -2.0 * (M @ arr)


def lagrangian_gradient_h(X, kappa: np.ndarray) -> np.ndarray:
    """Gradient of sum_i kappa_i h_i(X) with h_i = 1 - ||X_i||^2."""
    arr = _loadings_array(X)
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != (arr.shape[0],):
        raise ValueError(f"kappa has shape {kappa.shape}, expected ({arr.shape[0]},)")
    return -2.0 * kappa[:, None] * arr


def _project_omega_raw(arr: np.ndarray) -> np.ndarray:
    r2 = np.einsum("ij,ij->i", arr, arr)
    over = r2 > 1.0
    if not np.any(over):
        return arr.copy()
    scale = np.ones(arr.shape[0])
    scale[over] = 1.0 / np.sqrt(r2[over])
    return arr * scale[:, None]


def project_omega(X) -> np.ndarray:
    """Nearest point of Omega: rescale rows with squared norm above one.

    Rows already inside the ball are returned bit-identically, so the
    projection is idempotent.
    """
    return _project_omega_raw(_loadings_array(X))


class EqualityProjection(NamedTuple):
    """Both first-order moves onto the variance surface g(X) = 0."""

    X_plus: np.ndarray
    X_minus: np.ndarray
    lam_plus: float
    lam_minus: float
    dist_plus: float
    dist_minus: float

    def pick(self, branch: str) -> np.ndarray:
        return self.X_plus if branch == "plus" else self.X_minus

    def nearer_branch(self) -> str:
        # Tie goes to the plus branch.
        return "minus" if self.dist_minus < self.dist_plus else "plus"


def _project_equality_raw(arr: np.ndarray, v: np.ndarray, target: float) -> EqualityProjection:
    # K = v v' o J = v v' - diag(v^2) has rank-one-plus-diagonal structure,
    # so K X and every coefficient below cost O(n k); no n x n product.
    v2 = v * v
    p = arr.T @ v                          # X' v
    Y = v[:, None] * p[None, :] - v2[:, None] * arr   # K X
    t = Y.T @ v                            # X' K v  (K symmetric)

    # Hollow quadratic forms v' (M o J) v = v' M v - sum_i v_i^2 M_ii:
    row_xx = np.einsum("ij,ij->i", arr, arr)
    row_xy = np.einsum("ij,ij->i", arr, Y)
    row_yy = np.einsum("ij,ij->i", Y, Y)

    a = float(t @ t - v2 @ row_yy)
    b = 2.0 * float(p @ t - v2 @ row_xy)
    c = float(p @ p - v2 @ row_xx) + float(v @ v) - target

    if a == 0.0:
        if b == 0.0:
            if c == 0.0:
                # Constraint already satisfied and flat along K X; stay put.
                lam_plus = lam_minus = 0.0
            else:
                raise RestorationError(
                    "variance constraint is insensitive to the loadings at this "
                    "point (degenerate projection direction)",
                    residual=-c,
                )
        else:
            lam_plus = lam_minus = -c / b
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            # Closest approach of the quadratic to zero.
            lam_plus = lam_minus = -b / (2.0 * a)
        elif b == 0.0:
            r = math.sqrt(disc) / (2.0 * a)
            lam_plus, lam_minus = r, -r
        else:
            q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
            r1, r2 = q / a, c / q
            # Label by the textbook formula: plus root carries +sqrt(disc).
            if b > 0.0:
                lam_plus, lam_minus = r2, r1
            else:
                lam_plus, lam_minus = r1, r2

    X_plus = arr + lam_plus * Y
    X_minus = arr + lam_minus * Y
    norm_Y = float(np.linalg.norm(Y))
    return EqualityProjection(
        X_plus=X_plus,
        X_minus=X_minus,
        lam_plus=float(lam_plus),
        lam_minus=float(lam_minus),
        dist_plus=abs(lam_plus) * norm_Y,
        dist_minus=abs(lam_minus) * norm_Y,
    )


def project_equality(X, spec: MarketSpec) -> EqualityProjection:
    """First-order projection onto the index variance surface.

    The move direction is the constraint normal pulled back through the
    factor structure: X_E(lambda) = X + lambda K X with K = v v' o J and
    v = sigma o w.  Substituting into g gives the scalar quadratic

        a lambda^2 + b lambda + c = 0,
        a = v' [ (K X X' K) o J ] v,
        b = 2 v' [ (X X' K) o J ] v,
        c = v' [ (X X') o J + I ] v - sigma_m^2,

    solved with the numerically stable quadratic formula.  Both roots are
    returned; callers choose a branch and stick with it.  Degenerate cases:
    a = 0 falls back to the linear root -c/b on both branches; a = b = 0
    with the constraint unmet means it is insensitive to moves along K X
    and raises RestorationError.  A negative discriminant (surface
    unreachable at first order from X) keeps the real part -b/(2a) on both
    branches so the alternation can continue from the closest approach.
    """
    arr = _loadings_array(X)
    if len(spec.constraints) != 1:
        raise ValueError(
            f"equality projection handles a single market constraint, got {len(spec.constraints)}"
        )
    v = spec.scaled_weights(0)
    if v.size != arr.shape[0]:
        raise ValueError(f"spec has {v.size} assets, loadings have {arr.shape[0]} rows")
    return _project_equality_raw(arr, v, spec.market.variance)


def _residual_raw(arr: np.ndarray, v: np.ndarray, target: float) -> float:
    p = arr.T @ v
    v2 = v * v
    row_xx = np.einsum("ij,ij->i", arr, arr)
    model = float(p @ p - v2 @ row_xx) + float(v @ v)
    return target - model


def _residual(arr: np.ndarray, spec: MarketSpec) -> float:
    return _residual_raw(arr, spec.scaled_weights(0), spec.market.variance)


def _rescue_boundary(
    arr: np.ndarray,
    v: np.ndarray,
    target: float,
    config: SolverConfig,
) -> np.ndarray | None:
    """One-shot restoration for boundary-pinned alternation fixed points.

    When rows sit on the ball the two projections fight each other: the
    constraint step pushes rows out, the clip pulls them back, and the
    alternation converges at a rate that approaches one.  The cure is to
    treat the pair as a single curve lam |-> clip(X + lam K X) and solve
    the scalar residual equation on it directly.  Returns the feasible
    point, or None when no sign change brackets a root.
    """
    v2 = v * v

    def clipped(lam: float) -> np.ndarray:
        p = arr.T @ v
        moved = arr + lam * (v[:, None] * p[None, :] - v2[:, None] * arr)
        return _project_omega_raw(moved)

    def phi(lam: float) -> float:
        return _residual_raw(clipped(lam), v, target)

    phi0 = phi(0.0)
    if abs(phi0) <= config.restoration_tol:
        return clipped(0.0)
    lo, hi = 0.0, None
    for sign in (1.0, -1.0):
        mag = 1e-8
        prev = 0.0
        while mag <= 1e8:
            lam = sign * mag
            if phi(lam) * phi0 < 0.0:
                lo, hi = prev, lam
                break
            prev = lam
            mag *= 10.0
        if hi is not None:
            break
    if hi is None:
        return None
    lam_star = scipy.optimize.brentq(phi, lo, hi, xtol=1e-16, rtol=8.9e-16, maxiter=200)
    out = clipped(lam_star)
    if abs(_residual_raw(out, v, target)) <= config.restoration_tol:
        return out
    return None


def _project_feasible_raw(
    arr: np.ndarray,
    v: np.ndarray,
    target: float,
    config: SolverConfig,
    branch: str | None,
    fastfail: bool = False,
) -> np.ndarray:
    # Targets at the comonotonic bound admit exactly one feasible point
    # (every pairwise correlation equal to one).  The variance surface is
    # tangent to the ball there, so alternating projections stall; build
    # the point directly instead.
    max_var = float(np.abs(v).sum()) ** 2
    if target >= max_var - config.restoration_tol:
        com = np.zeros_like(arr)
        com[:, 0] = np.where(v < 0.0, -1.0, 1.0)
        resid = _residual_raw(com, v, target)
        if abs(resid) <= config.restoration_tol:
            return com
        raise RestorationError(
            f"index variance target {target:g} exceeds the comonotonic bound "
            f"{max_var:g}; no feasible loadings exist",
            residual=resid,
        )

    proj = _project_equality_raw(arr, v, target)
    locked = branch if branch is not None else proj.nearer_branch()
    cur = proj.pick(locked)

    # Row slack 1e-12 instead of exact membership: at targets sitting on
    # the comonotonic bound the fixed point straddles the ball boundary by
    # a few ulp, and the final clip below still leaves h >= -1e-12 while
    # perturbing g by far less than restoration_tol.
    resid = _residual_raw(cur, v, target)
    merits: list[float] = []
    for sweep in range(config.max_restoration_iter):
        r2 = np.einsum("ij,ij->i", cur, cur)
        if abs(resid) <= config.restoration_tol and np.all(r2 <= 1.0 + 1e-12):
            break
        # Line-search trial points can be rejected cheaply: the alternation
        # converges linearly at a rate set by the intersection angle, and a
        # sweep budget of 100 only suffices when each 20-sweep window cuts
        # the combined infeasibility by well over 95%.  Windows that fall
        # short mark a hopeless attempt.  The solve-level restoration keeps
        # the full sweep allowance (fastfail=False).
        if fastfail:
            merit = abs(resid) + max(0.0, float(np.max(r2)) - 1.0)
            merits.append(merit)
            if len(merits) > 20 and merit > 0.05 * merits[-21]:
                rescued = _rescue_boundary(cur, v, target, config)
                if rescued is not None:
                    return rescued
                raise RestorationError(
                    f"restoration stalled after {sweep + 1} sweeps "
                    f"(residual {resid!r} not improving)",
                    residual=resid,
                )
        cur = _project_omega_raw(cur)
        cur = _project_equality_raw(cur, v, target).pick(locked)
        resid = _residual_raw(cur, v, target)
    else:
        rescued = _rescue_boundary(cur, v, target, config)
        if rescued is not None:
            return rescued
        raise RestorationError(
            f"restoration did not reach |g| <= {config.restoration_tol:g} inside Omega "
            f"within {config.max_restoration_iter} sweeps (last residual {resid!r})",
            residual=resid,
        )
    # Final exact clip; rows can exceed one by at most ~1e-14 here, so the
    # induced residual change is far below restoration_tol.
    return _project_omega_raw(cur)


def project_feasible(
    X,
    spec: MarketSpec,
    config: SolverConfig | None = None,
    branch: str | None = None,
) -> np.ndarray:
    """Restore a point to Omega intersected with the variance surface.

    The first equality projection selects the branch (nearer root in
    Frobenius distance unless one is forced) and locks it; afterwards the
    restoration alternates P_Omega and the locked-branch P_E until the
    residual drops below restoration_tol with all rows inside Omega.
    Already-feasible points are returned unchanged.

    Raises RestorationError carrying the final residual when the
    alternation does not converge within max_restoration_iter sweeps.
    """
    if config is None:
        config = SolverConfig()
    if branch not in (None, "plus", "minus"):
        raise ValueError(f"branch must be 'plus' or 'minus', got {branch!r}")
    arr = _loadings_array(X)
    if len(spec.constraints) != 1:
        raise ValueError(
            f"restoration handles a single market constraint, got {len(spec.constraints)}"
        )
    v = spec.scaled_weights(0)
    if v.size != arr.shape[0]:
        raise ValueError(f"spec has {v.size} assets, loadings have {arr.shape[0]} rows")
    return _project_feasible_raw(arr, v, spec.market.variance, config, branch)


def initial_loadings(A, k: int) -> FactorLoadings:
    """Spectral starting point for the solver.

    Column d of X0 is a scaled copy of the d-th dominant eigenvector e_d of
    the target (eigenvalues iota_d in descending order):

        X0[:, d] = varsigma_d e_d,
        varsigma_d = min( sqrt( (iota_d - 1) ||e_d||^2
                                / (k (||e_d||^4 - sum_i e_{d,i}^4)) ),
                          1 / (sqrt(k) max_i |e_{d,i}|) ).

    The first argument matches the dominant off-diagonal mass of the
    target along e_d; the second caps every row so X0 lands inside Omega
    regardless.  Eigenvalues at or below one make the first argument zero
    or imaginary, in which case the cap (or zero, for iota_d = 1 exactly)
    is used alone; a degenerate denominator likewise falls back to the
    cap.  For the identity target all columns are zero.
    """
    A_arr = _corr_array(A)
    n = A_arr.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    evals, evecs = np.linalg.eigh(A_arr)
    order = np.argsort(-evals, kind="stable")

    X0 = np.zeros((n, k))
    for d in range(k):
        e = evecs[:, order[d]]
        # Deterministic eigenvector sign: largest-magnitude entry positive.
        imax = int(np.argmax(np.abs(e)))
        if e[imax] < 0.0:
            e = -e
        iota = float(evals[order[d]])
        norm2 = float(e @ e)
        num = (iota - 1.0) * norm2
        den = k * (norm2 * norm2 - float(np.sum(e**4)))
        cap = 1.0 / (math.sqrt(k) * float(np.max(np.abs(e))))
        if num == 0.0:
            varsigma = 0.0
        elif num > 0.0 and den > 0.0:
            varsigma = min(math.sqrt(num / den), cap)
        else:
            # iota_d < 1 (imaginary radicand) or a denominator that
            # vanishes: keep only the Omega cap.
            varsigma = cap
        X0[:, d] = varsigma * e
    return FactorLoadings(X0)


def _rescaled_spec(spec: MarketSpec) -> tuple[MarketSpec, float]:
    """Common time-scale change so that max |sigma_i w_i| < V_RESCALE_AT."""
    vmax = max(float(np.max(np.abs(spec.scaled_weights(j)))) for j in range(len(spec.constraints)))
    if vmax < V_RESCALE_AT:
        return spec, 1.0
    scale = vmax / (V_RESCALE_AT * 0.5)
    cons = tuple(
        IndexConstraint(c.name, c.weights, c.variance / (scale * scale))
        for c in spec.constraints
    )
    logger.info("rescaling volatilities by 1/%.4g (max |sigma_i w_i| = %.4g)", scale, vmax)
    return MarketSpec(spec.sigma / scale, cons), scale


def solve_nicm(A, spec: MarketSpec, config: SolverConfig | None = None) -> SolverResult:
    """Nearest factor-structured correlation matrix to the target A.

    Spectral projected gradient outer loop with inexact restoration, as
    described in the module docstring.  The target need not be PSD.  The
    spec must carry exactly one index constraint.

    A successful result satisfies, with X* the returned loadings:
    f trace non-increasing, |g(X*)| <= var_tol, min_i h_i(X*) >= -1e-12,
    and C_star = C(X*) PSD by construction.  converged=False (with the
    reason in message) is returned when the iteration limit is hit before
    the improvement test fires; a restoration failure from the starting
    point propagates as RestorationError.

    Parameters
    ----------
    A : CorrMatrix or array_like
        Target matrix (symmetric, unit diagonal; PSD not required).
    spec : MarketSpec
        Single index variance constraint.
    config : SolverConfig, optional
        Tolerances, factor count k and iteration limits.
    """
    t0 = time.perf_counter()
    if config is None:
        config = SolverConfig()
    A_arr = _corr_array(A)
    if len(spec.constraints) != 1:
        raise ValueError(f"solver expects a single market constraint, got {len(spec.constraints)}")
    if A_arr.shape[0] != spec.n:
        raise ValueError(f"target is {A_arr.shape[0]} x {A_arr.shape[0]} for {spec.n} assets")

    work_spec, scale = _rescaled_spec(spec)
    A_hat = A_arr.copy()
    np.fill_diagonal(A_hat, 0.0)

    def fval(Z: np.ndarray) -> float:
        M = Z @ Z.T
        np.fill_diagonal(M, 0.0)
        D = M - A_hat
        return float(np.sum(D * D))

    def fgrad(Z: np.ndarray) -> np.ndarray:
        M = Z @ Z.T
        np.fill_diagonal(M, 0.0)
        return 4.0 * ((M - A_hat) @ Z)

    v = work_spec.scaled_weights(0)
    v2 = v * v
    target = work_spec.market.variance
    restorations = 0

    def tangential(gr: np.ndarray, Y: np.ndarray) -> np.ndarray:
        # Remove the component along the constraint normal grad g = -2 K Y
        # (the factor -2 cancels inside the projection).  Steps along the
        # result leave g unchanged to first order, so the restoration only
        # has to absorb second-order drift and long moves survive it.
        p = Y.T @ v
        N = v[:, None] * p[None, :] - v2[:, None] * Y
        nn = float(np.sum(N * N))
        if nn == 0.0:
            return gr
        return gr - (float(np.sum(gr * N)) / nn) * N

    X = initial_loadings(A_arr, config.k).values
    X = _project_feasible_raw(X, v, target, config, None)
    restorations += 1

    f = fval(X)
    grad = fgrad(X)
    trace = [f]

    gnorm = float(np.max(np.abs(grad)))
    alpha = min(max(1.0 / gnorm, config.step_min), config.step_max) if gnorm > 0.0 else 1.0

    converged = False
    message = "iteration limit reached"
    outer = 0
    # Length of the last accepted move; seeds the arc search after a
    # safeguarded (denominator <= 0) spectral step, whose step_max
    # fallback carries no scale information of its own.
    accepted_len = None

    for outer in range(1, config.max_outer_iter + 1):
        if alpha >= config.step_max and accepted_len is not None:
            s = min(1.0, 8.0 * accepted_len / alpha)
        else:
            s = 1.0
        direction = tangential(grad, X)
        accepted = False
        T = X
        fT = f
        for _ in range(config.max_backtracks):
            try:
                trial = _project_omega_raw(X - (s * alpha) * direction)
                T = _project_feasible_raw(trial, v, target, config, None, fastfail=True)
                restorations += 1
            except RestorationError:
                s *= config.backtrack
                continue
            fT = fval(T)
            descent = float(np.sum(grad * (T - X)))
            if descent < 0.0 and fT <= f + config.armijo_c1 * descent:
                accepted = True
                break
            s *= config.backtrack
        if not accepted:
            converged = True
            message = "arc search exhausted without an acceptable step (projected stationary point)"
            outer -= 1
            break

        accepted_len = s * alpha
        dX = T - X
        dG = fgrad(T) - grad
        X = T
        grad = grad + dG
        improvement = f - fT
        f = fT
        trace.append(f)

        sty = float(np.sum(dX * dG))
        if sty <= 0.0:
            alpha = config.step_max
        else:
            alpha = min(max(float(np.sum(dX * dX)) / sty, config.step_min), config.step_max)

        threshold = config.fn_tol if config.improvement == "absolute" else config.fn_tol * max(1.0, abs(f))
        if improvement < threshold:
            converged = True
            message = "objective improvement below tolerance"
            break

    # Residual is reported against the original (unscaled) market spec.
    residual = _residual(X, spec)
    if converged and abs(residual) > config.var_tol:
        converged = False
        message = (
            f"constraint residual {residual!r} exceeds var_tol after rescaling "
            f"(time scale {scale:g})"
        )

    return SolverResult(
        X_star=FactorLoadings(X),
        C_star=assemble_correlation(X),
        fn=f,
        fn_trace=np.array(trace),
        constraint_residual=residual,
        outer_iterations=outer,
        restorations=restorations,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        time_scale=scale,
        message=message,
    )


def reference_solve(
    A,
    spec: MarketSpec,
    k: int,
    config: SolverConfig | None = None,
) -> SolverResult:
    """Independent augmented-Lagrangian solver for small cross-checks.

    Minimizes the same objective under the same constraints with a
    classical augmented Lagrangian (multiplier + quadratic penalty for the
    equality, Powell-Hestenes-Rockafellar terms for the row inequalities),
    using scipy's L-BFGS-B as inner solver on the flattened loadings.  It
    starts from the same spectral point as solve_nicm so both methods
    descend into the same basin, but shares none of the projection or
    line-search machinery.  Intended for n up to about 25.
    """
    t0 = time.perf_counter()
    if config is None:
        config = SolverConfig(k=k)
    A_arr = _corr_array(A)
    n = A_arr.shape[0]
    if len(spec.constraints) != 1:
        raise ValueError(f"reference solver expects a single market constraint, got {len(spec.constraints)}")
    if n > 30:
        raise ValueError(f"reference solver is meant for small instances (n <= 30), got n = {n}")

    work_spec, scale = _rescaled_spec(spec)
    A_hat = A_arr.copy()
    np.fill_diagonal(A_hat, 0.0)
    v = work_spec.scaled_weights(0)
    target = work_spec.market.variance
    K = np.outer(v, v)
    np.fill_diagonal(K, 0.0)

    def split_val_grad(x: np.ndarray, lam: float, kappa: np.ndarray, mu: float):
        Xm = x.reshape(n, k)
        M = Xm @ Xm.T
        np.fill_diagonal(M, 0.0)
        D = M - A_hat
        fv = float(np.sum(D * D))
        gf = 4.0 * (D @ Xm)

        g = target - float(v @ (M @ v)) - float(v @ v)
        coef = lam + mu * g
        # d g / d X = -2 K X
        g_grad = -2.0 * (K @ Xm)

        h = 1.0 - np.einsum("ij,ij->i", Xm, Xm)
        t_act = np.maximum(0.0, kappa - mu * h)
        # PHR term: sum_i (t_i^2 - kappa_i^2) / (2 mu); d/dh_i = -t_i,
        # d h_i / d X_i = -2 X_i.
        val = fv + lam * g + 0.5 * mu * g * g + float(np.sum(t_act**2 - kappa**2)) / (2.0 * mu)
        grad = gf + coef * g_grad + 2.0 * t_act[:, None] * Xm
        return val, grad.ravel(), g, h

    x = initial_loadings(A_arr, k).values.ravel().copy()
    lam = 0.0
    kappa = np.zeros(n)
    mu = 10.0
    viol_prev = math.inf
    g_last = math.nan
    inner_iters = 0

    for _ in range(30):
        res = scipy.optimize.minimize(
            lambda z: split_val_grad(z, lam, kappa, mu)[:2],
            x,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10},
        )
        x = res.x
        inner_iters += int(res.nit)
        _, _, g, h = split_val_grad(x, lam, kappa, mu)
        g_last = g
        viol = max(abs(g), float(np.max(np.maximum(0.0, -h), initial=0.0)))
        if viol <= min(config.var_tol, 1e-9):
            lam += mu * g
            kappa = np.maximum(0.0, kappa - mu * h)
            break
        lam += mu * g
        kappa = np.maximum(0.0, kappa - mu * h)
        if viol > 0.25 * viol_prev:
            mu *= 10.0
        viol_prev = viol

    X = x.reshape(n, k)
    # Snap the solution into Omega; the PHR terms leave at most tiny
    # violations, so the objective moves negligibly.
    X = project_omega(X)
    fn = objective(X, A_arr)
    residual = _residual(X, spec)
    converged = abs(residual) <= config.var_tol * max(1.0, scale * scale)

    return SolverResult(
        X_star=FactorLoadings(X),
        C_star=assemble_correlation(X),
        fn=fn,
        fn_trace=np.array([fn]),
        constraint_residual=residual,
        outer_iterations=inner_iters,
        restorations=0,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        time_scale=scale,
        message="augmented-lagrangian reference",
    )
