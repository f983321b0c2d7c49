"""Projected-gradient solver: gradients, projections, restoration, invariants.

Gradient formulas are checked against central finite differences; the
projections against their defining properties (idempotence, exact roots,
branch selection); the full solve against an independent augmented
Lagrangian on small instances.
"""

import warnings

import numpy as np
import pytest

from impliedcorr.core import (
    IndexConstraint,
    MarketSpec,
    assemble_correlation,
    inequality_slack,
    portfolio_variance,
)
from impliedcorr.solver import (
    RestorationError,
    SolverConfig,
    initial_loadings,
    lagrangian_gradient_g,
    lagrangian_gradient_h,
    objective,
    objective_gradient,
    project_equality,
    project_feasible,
    project_omega,
    reference_solve,
    solve_nicm,
)
from impliedcorr.synth import generate_synthetic_market


def random_spec(rng, n):
    sigma = rng.uniform(0.1, 0.5, size=n)
    w = rng.uniform(0.1, 1.0, size=n)
    w /= w.sum()
    w[np.argmax(w)] += 1.0 - w.sum()
    v = sigma * w
    lo, hi = float(v @ v), float(np.sum(v)) ** 2
    var = float(rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo)))
    return MarketSpec(sigma, (IndexConstraint("market", w, var),))


def random_target(rng, n):
    Z = rng.standard_normal((n, 3))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    X = Z * (rng.uniform(size=n) ** (1.0 / 3.0))[:, None]
    A = X @ X.T + rng.normal(scale=0.05, size=(n, n))
    A = (A + A.T) / 2.0
    np.fill_diagonal(A, 1.0)
    return np.clip(A, -0.99, 0.99) + np.eye(n) * (1.0 - np.clip(A, -0.99, 0.99)[0, 0]) * 0.0


def fd_gradient(f, X, h=1e-6):
    G = np.zeros_like(X)
    for i in range(X.shape[0]):
        for d in range(X.shape[1]):
            Xp = X.copy()
            Xm = X.copy()
            Xp[i, d] += h
            Xm[i, d] -= h
            G[i, d] = (f(Xp) - f(Xm)) / (2.0 * h)
    return G


def test_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(101)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, 4))
        X = rng.uniform(-0.5, 0.5, size=(n, k))
        A = random_target(rng, n)
        G = objective_gradient(X, A)
        G_fd = fd_gradient(lambda Z: objective(Z, A), X)
        scale = max(1.0, float(np.max(np.abs(G_fd))))
        np.testing.assert_allclose(G, G_fd, atol=1e-6 * scale)


def test_constraint_gradient_matches_finite_differences():
    rng = np.random.default_rng(103)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, 4))
        X = rng.uniform(-0.5, 0.5, size=(n, k))
        sigma = rng.uniform(0.1, 0.5, size=n)
        cons = []
        for name in ("market", "sub"):
            w = rng.uniform(0.1, 1.0, size=n)
            w /= w.sum()
            w[np.argmax(w)] += 1.0 - w.sum()
            cons.append(IndexConstraint(name, w, 0.05))
        spec = MarketSpec(sigma, tuple(cons))
        lam = rng.normal(size=2)

        def weighted_g(Z):
            C = assemble_correlation(Z)
            return sum(
                lam[j] * (c.variance - portfolio_variance(C, spec, j))
                for j, c in enumerate(spec.constraints)
            )

        G = lagrangian_gradient_g(X, spec, lam)
        G_fd = fd_gradient(weighted_g, X)
        scale = max(1.0, float(np.max(np.abs(G_fd))))
        np.testing.assert_allclose(G, G_fd, atol=1e-6 * scale)


def test_inequality_gradient_matches_finite_differences():
    rng = np.random.default_rng(105)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, 4))
        X = rng.uniform(-0.5, 0.5, size=(n, k))
        kappa = rng.normal(size=n)

        def weighted_h(Z):
            return float(kappa @ (1.0 - np.einsum("ij,ij->i", Z, Z)))

        G = lagrangian_gradient_h(X, kappa)
        G_fd = fd_gradient(weighted_h, X)
        np.testing.assert_allclose(G, G_fd, atol=1e-6)


def test_lagrangian_gradient_shape_checks():
    with pytest.raises(ValueError, match="multipliers"):
        spec = MarketSpec(np.array([0.2, 0.2]), (IndexConstraint("m", np.array([0.5, 0.5]), 0.03),))
        lagrangian_gradient_g(np.zeros((2, 1)), spec, np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="kappa"):
        lagrangian_gradient_h(np.zeros((2, 1)), np.zeros(3))


def test_project_omega_properties():
    rng = np.random.default_rng(107)
    for _ in range(30):
        n = int(rng.integers(1, 10))
        k = int(rng.integers(1, 4))
        X = rng.normal(scale=1.5, size=(n, k))
        P = project_omega(X)
        r2 = np.einsum("ij,ij->i", P, P)
        assert np.all(r2 <= 1.0 + 1e-12)
        # idempotent up to one rounding of the boundary rows; inside rows
        # pass through bit-identically
        np.testing.assert_allclose(project_omega(P), P, atol=1e-15)
        inside = np.einsum("ij,ij->i", X, X) <= 1.0
        np.testing.assert_array_equal(P[inside], X[inside])
        # projected rows keep their direction
        out = ~inside
        if np.any(out):
            np.testing.assert_allclose(
                P[out] * np.linalg.norm(X[out], axis=1, keepdims=True),
                X[out],
                atol=1e-12,
            )


def test_project_omega_nonexpansive():
    rng = np.random.default_rng(109)
    for _ in range(30):
        n, k = 6, 2
        X = rng.normal(scale=1.5, size=(n, k))
        Y = rng.normal(scale=1.5, size=(n, k))
        d_before = float(np.linalg.norm(X - Y))
        d_after = float(np.linalg.norm(project_omega(X) - project_omega(Y)))
        assert d_after <= d_before + 1e-12


def residual(X, spec):
    return spec.market.variance - portfolio_variance(assemble_correlation(X), spec)


def test_project_equality_both_roots_are_exact():
    # target chosen as the variance at a known point on the projection
    # curve, so a real root exists by construction and both roots of the
    # quadratic must then solve the constraint exactly
    rng = np.random.default_rng(111)
    checked = 0
    for _ in range(40):
        n = int(rng.integers(2, 10))
        k = int(rng.integers(1, 4))
        sigma = rng.uniform(0.1, 0.5, size=n)
        w = rng.uniform(0.1, 1.0, size=n)
        w /= w.sum()
        w[np.argmax(w)] += 1.0 - w.sum()
        v = sigma * w
        X = rng.uniform(-0.5, 0.5, size=(n, k))
        K = np.outer(v, v)
        np.fill_diagonal(K, 0.0)
        moved = X + rng.normal(scale=5.0) * (K @ X)
        C = assemble_correlation(moved)
        var = float(v @ C.values @ v)
        if var <= 1e-6:
            continue
        spec = MarketSpec(sigma, (IndexConstraint("market", w, var),))
        proj = project_equality(X, spec)
        for Z in (proj.X_plus, proj.X_minus):
            assert abs(residual(Z, spec)) <= 1e-8 * var
        checked += 1
    assert checked >= 30


def test_project_equality_branch_labels():
    rng = np.random.default_rng(113)
    spec = random_spec(rng, 5)
    X = rng.uniform(-0.4, 0.4, size=(5, 2))
    proj = project_equality(X, spec)
    # plus branch carries the +sqrt(disc) root, so lam_plus >= lam_minus
    # exactly when the leading coefficient is positive; for this fixture
    # check the ordering directly through the realized moves
    assert proj.pick("plus") is proj.X_plus
    assert proj.pick("minus") is proj.X_minus
    near = proj.nearer_branch()
    d = {"plus": proj.dist_plus, "minus": proj.dist_minus}
    assert d[near] == min(proj.dist_plus, proj.dist_minus)


def test_project_equality_feasible_point_keeps_zero_root():
    rng = np.random.default_rng(115)
    spec = random_spec(rng, 4)
    X = project_feasible(rng.normal(scale=0.4, size=(4, 2)), spec)
    proj = project_equality(X, spec)
    # one root is the (near-)zero move; the nearer branch picks it
    np.testing.assert_allclose(proj.pick(proj.nearer_branch()), X, atol=1e-8)


def test_project_equality_unreachable_target_ties_to_plus():
    # closest-approach case: the curve never meets the surface, both
    # branches collapse to -b/(2a) and the tie resolves to plus
    sigma = np.array([0.41483932, 0.19574778, 0.45059369])
    w = np.array([0.19319088, 0.50919873, 0.29761039])
    w[np.argmax(w)] += 1.0 - w.sum()
    X = np.array(
        [
            [-0.06952489, 0.41485398],
            [-0.37710091, -0.62717018],
            [-0.13362742, -0.42208174],
        ]
    )
    spec = MarketSpec(sigma, (IndexConstraint("market", w, 0.019059856078205258),))
    proj = project_equality(X, spec)
    assert proj.lam_plus == proj.lam_minus
    assert proj.dist_plus == proj.dist_minus
    assert proj.nearer_branch() == "plus"
    # the collapsed move is a genuine closest approach, not a root
    assert abs(residual(proj.X_plus, spec)) > 1e-6


def test_project_equality_degenerate_direction_raises():
    # X = 0 makes K X vanish; the constraint cannot be reached along it
    spec = MarketSpec(np.array([0.2, 0.2]), (IndexConstraint("m", np.array([0.5, 0.5]), 0.03),))
    with pytest.raises(RestorationError, match="insensitive"):
        project_equality(np.zeros((2, 1)), spec)


def test_project_equality_single_constraint_only():
    spec = MarketSpec(
        np.array([0.2, 0.2]),
        (
            IndexConstraint("m", np.array([0.5, 0.5]), 0.03),
            IndexConstraint("s", np.array([1.0, 0.0]), 0.04),
        ),
    )
    with pytest.raises(ValueError, match="single"):
        project_equality(np.full((2, 1), 0.3), spec)


def test_project_feasible_lands_in_both_sets():
    rng = np.random.default_rng(117)
    for _ in range(25):
        n = int(rng.integers(2, 12))
        k = int(rng.integers(1, 4))
        spec = random_spec(rng, n)
        X = rng.normal(scale=0.8, size=(n, k))
        config = SolverConfig(k=k)
        Z = project_feasible(X, spec, config)
        assert abs(residual(Z, spec)) <= config.restoration_tol
        assert np.min(inequality_slack(Z)) >= -1e-12


def test_project_feasible_keeps_feasible_points():
    rng = np.random.default_rng(119)
    spec = random_spec(rng, 5)
    X = project_feasible(rng.normal(scale=0.5, size=(5, 2)), spec)
    Z = project_feasible(X, spec)
    np.testing.assert_allclose(Z, X, atol=1e-12)


def test_project_feasible_branch_validation():
    spec = MarketSpec(np.array([0.2, 0.2]), (IndexConstraint("m", np.array([0.5, 0.5]), 0.03),))
    with pytest.raises(ValueError, match="branch"):
        project_feasible(np.full((2, 1), 0.3), spec, branch="sideways")


def test_project_feasible_comonotonic_target():
    # target exactly at the attainable maximum: the only feasible point has
    # every pairwise correlation equal to one
    sigma = np.array([0.2, 0.3, 0.4])
    w = np.array([0.5, 0.3, 0.2])
    v = sigma * w
    cap = float(np.sum(v)) ** 2
    spec = MarketSpec(sigma, (IndexConstraint("m", w, cap),))
    rng = np.random.default_rng(121)
    Z = project_feasible(rng.normal(size=(3, 2)), spec)
    C = assemble_correlation(Z).values
    np.testing.assert_allclose(C, np.ones((3, 3)), atol=1e-9)


def test_project_feasible_beyond_comonotonic_raises():
    sigma = np.array([0.2, 0.3])
    w = np.array([0.5, 0.5])
    cap = float(np.sum(sigma * w)) ** 2
    spec = MarketSpec(sigma, (IndexConstraint("m", w, cap * 1.01),))
    with pytest.raises(RestorationError, match="comonotonic"):
        project_feasible(np.full((2, 1), 0.3), spec)


def test_project_feasible_negative_weights_comonotonic_point():
    # short position: the comonotonic point flips the sign of that row
    sigma = np.array([0.2, 0.3, 0.25])
    w = np.array([0.7, 0.5, -0.2])
    v = sigma * w
    cap = float(np.sum(np.abs(v))) ** 2
    spec = MarketSpec(sigma, (IndexConstraint("m", w, cap),))
    Z = project_feasible(np.full((3, 2), 0.1), spec)
    assert abs(residual(Z, spec)) <= 1e-10
    assert np.min(inequality_slack(Z)) >= -1e-12


def test_initial_loadings_identity_target_is_zero():
    X0 = initial_loadings(np.eye(5), 2)
    np.testing.assert_array_equal(X0.values, np.zeros((5, 2)))


def test_initial_loadings_always_in_omega():
    rng = np.random.default_rng(123)
    for _ in range(20):
        n = int(rng.integers(2, 15))
        A = rng.normal(scale=0.4, size=(n, n))
        A = (A + A.T) / 2.0
        np.fill_diagonal(A, 1.0)
        A = np.clip(A, -0.99, 0.99)
        np.fill_diagonal(A, 1.0)
        for k in (1, 2, 3):
            if k > n:
                continue
            X0 = initial_loadings(A, k)
            assert X0.in_omega(eps=1e-12)


def test_initial_loadings_deterministic():
    rng = np.random.default_rng(125)
    A = rng.normal(size=(6, 6))
    A = (A + A.T) / 2.0
    np.fill_diagonal(A, 1.0)
    X0 = initial_loadings(A, 3).values
    X1 = initial_loadings(A.copy(), 3).values
    np.testing.assert_array_equal(X0, X1)


def test_initial_loadings_k_validation():
    with pytest.raises(ValueError, match="k must"):
        initial_loadings(np.eye(3), 0)
    with pytest.raises(ValueError, match="k must"):
        initial_loadings(np.eye(3), 4)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(k=0)
    with pytest.raises(ValueError):
        SolverConfig(var_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(improvement="sometimes")
    with pytest.raises(ValueError):
        SolverConfig(armijo_c1=1.5)
    with pytest.raises(ValueError):
        SolverConfig(step_min=1.0, step_max=0.5)
    d = SolverConfig(k=3, fn_tol=1e-5).to_dict()
    assert SolverConfig.from_dict(d) == SolverConfig(k=3, fn_tol=1e-5)
    with pytest.raises(ValueError, match="unknown"):
        SolverConfig.from_dict({"k": 1, "typo": 2})


def test_solve_nicm_invariants_on_synthetic_markets():
    for seed in range(6):
        snap, C_true = generate_synthetic_market(12, 2, 0.1, np.random.SeedSequence(seed))
        res = solve_nicm(snap.target, snap.spec, SolverConfig(k=2))
        assert res.converged, res.message
        # monotone objective trace
        assert np.all(np.diff(res.fn_trace) <= 0.0)
        assert abs(res.constraint_residual) <= 1e-6
        assert np.min(inequality_slack(res.X_star)) >= -1e-12
        assert res.C_star.is_psd()
        np.testing.assert_array_equal(np.diag(res.C_star.values), np.ones(12))


def test_solve_nicm_zero_premium_truth_target():
    snap, C_true = generate_synthetic_market(10, 1, 0.0, np.random.SeedSequence(42))
    res = solve_nicm(C_true.values, snap.spec, SolverConfig(k=1, fn_tol=1e-12))
    assert res.converged
    assert res.fn <= 1e-8


def test_solve_nicm_agrees_with_reference_on_small_instances():
    ok = 0
    for seed in range(12):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            snap, _ = generate_synthetic_market(4, 1, 0.12, np.random.SeedSequence(seed))
        if snap.meta["comonotonic_clipped"]:
            # a capped target admits a single feasible point; nothing to compare
            continue
        rng = np.random.default_rng(seed + 1000)
        A = snap.target + rng.normal(scale=0.15, size=(4, 4))
        A = (A + A.T) / 2.0
        A = np.clip(A, -0.99, 0.99)
        np.fill_diagonal(A, 1.0)
        config = SolverConfig(k=1, fn_tol=1e-9, max_outer_iter=500)
        res = solve_nicm(A, snap.spec, config)
        ref = reference_solve(A, snap.spec, 1, config)
        if not (res.converged and ref.converged):
            continue
        assert res.fn <= ref.fn + 1e-3
        ok += 1
    assert ok >= 7


def test_solve_nicm_rescales_large_scaled_weights():
    # annualized-vol convention pushed to a monthly-variance target:
    # max |sigma_i w_i| near 1 triggers the internal change of time scale
    sigma = np.array([2.0, 1.8])
    w = np.array([0.5, 0.5])
    v = sigma * w
    var = 0.9 * float(np.sum(v)) ** 2
    spec = MarketSpec(sigma, (IndexConstraint("m", w, var),))
    A = np.array([[1.0, 0.3], [0.3, 1.0]])
    res = solve_nicm(A, spec, SolverConfig(k=1))
    assert res.time_scale > 1.0
    assert res.converged
    # residual is reported in the original units
    assert abs(residual(res.X_star.values, spec)) <= 1e-6
    assert abs(res.constraint_residual) <= 1e-6


def test_solve_nicm_input_validation():
    spec = MarketSpec(np.array([0.2, 0.2]), (IndexConstraint("m", np.array([0.5, 0.5]), 0.03),))
    with pytest.raises(ValueError, match="single"):
        two = MarketSpec(
            np.array([0.2, 0.2]),
            (
                IndexConstraint("m", np.array([0.5, 0.5]), 0.03),
                IndexConstraint("s", np.array([1.0, 0.0]), 0.04),
            ),
        )
        solve_nicm(np.eye(2), two)
    with pytest.raises(ValueError, match="assets"):
        solve_nicm(np.eye(3), spec)


def test_solve_nicm_infeasible_market_raises():
    sigma = np.array([0.2, 0.2])
    w = np.array([0.5, 0.5])
    cap = float(np.sum(sigma * w)) ** 2
    spec = MarketSpec(sigma, (IndexConstraint("m", w, cap * 1.5),))
    with pytest.raises(RestorationError) as err:
        solve_nicm(np.eye(2), spec)
    assert np.isfinite(err.value.residual)


def test_reference_solve_size_guard():
    spec = MarketSpec(
        np.full(31, 0.2),
        (IndexConstraint("m", np.full(31, 1.0 / 31), 0.02),),
    )
    with pytest.raises(ValueError, match="small"):
        reference_solve(np.eye(31), spec, 1)


def test_result_to_dict_is_json_ready():
    snap, _ = generate_synthetic_market(6, 1, 0.05, np.random.SeedSequence(2))
    res = solve_nicm(snap.target, snap.spec)
    d = res.to_dict()
    assert d["n"] == 6 and d["k"] == 1
    assert isinstance(d["fn_trace"], list)
    assert d["converged"] is True
