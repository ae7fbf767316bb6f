import numpy as np
import pytest

from penexp.diagnostics import (curvature_fluctuations, debiased_estimate,
                                empirical_curvature_ratio, prox_risk_mc,
                                prox_risk_quadrature, risk_identity_check,
                                sparsity_constant, sparsity_count,
                                taylor_remainder_gap)
from penexp.losses import (curvature_lower_bound, curvature_matrix, get_loss)
from penexp.model import (CovarianceModel, GroupStructure, flat_signal,
                          generate_design, generate_linear, generate_logistic,
                          stream_rng)
from penexp.penalties import GroupPenalty, L1Penalty
from penexp.solver import fit_expansion, fit_penalized


SQ = get_loss("squared")
LG = get_loss("logistic")


def linear_dataset(n, p, s, seed, noise_sd=1.0, amplitude=1.0, rho=0.0,
                   design_kind="gaussian"):
    cov = CovarianceModel.identity(p) if rho == 0.0 else CovarianceModel.ar1(p, rho)
    X = generate_design(cov, n, design_kind=design_kind, seed=seed)
    beta = flat_signal(p, s, amplitude)
    return generate_linear(X, beta, noise_sd, seed + 1, covariance=cov,
                           design_kind=design_kind)


def test_prox_risk_identity_prox():
    # zero penalty level: prox is the identity, risk is tau^2 * p
    beta = np.array([1.0, -2.0, 0.0, 3.0])
    risk, se = prox_risk_mc(L1Penalty(0.0), beta, 2.0, n=100, n_draws=40000,
                            seed=11)
    assert abs(risk - 4.0 * 4.0 / 100.0) <= 3.0 * se


def test_prox_risk_huge_level():
    # the prox collapses to zero, every draw contributes ||beta*||^2
    beta = np.array([1.0, -2.0, 0.5])
    risk, se = prox_risk_mc(L1Penalty(1e6), beta, 1.0, n=50, n_draws=200,
                            seed=3)
    assert risk == pytest.approx(float(beta @ beta), rel=1e-12)
    assert se == 0.0


def test_prox_risk_mc_vs_quadrature():
    beta = np.array([1.0, 0.0, 0.0])
    pen = L1Penalty(0.2)
    risk, se = prox_risk_mc(pen, beta, 1.0, n=100, n_draws=1000000, seed=17)
    exact = prox_risk_quadrature(pen, beta, 1.0, n=100)
    assert abs(risk - exact) <= 3.0 * se


def test_prox_risk_quadrature_zero_tau():
    beta = np.array([2.0, 0.3])
    pen = L1Penalty(0.5)
    val = prox_risk_quadrature(pen, beta, 0.0, n=25)
    # deterministic: distance between beta and its soft threshold
    assert val == pytest.approx(0.5 ** 2 + 0.3 ** 2, rel=1e-12)


def test_prox_risk_quadrature_l1_only():
    groups = GroupStructure.contiguous(2, 2)
    with pytest.raises(ValueError):
        prox_risk_quadrature(GroupPenalty(0.1, groups), np.zeros(4), 1.0, 10)


def test_prox_risk_needs_draws():
    with pytest.raises(ValueError):
        prox_risk_mc(L1Penalty(0.1), np.zeros(3), 1.0, 10, n_draws=1, seed=0)


def test_group_prox_risk_blockwise_oracle():
    """Group shrinkage risk equals the sum of independent per-block risks."""
    groups = GroupStructure.contiguous(5, 3)
    pen = GroupPenalty(0.3, groups)
    beta = np.zeros(15)
    beta[0:3] = 1.0
    beta[3:6] = -0.5
    sigma, n = 1.0, 64
    risk, se = prox_risk_mc(pen, beta, sigma, n, n_draws=400000, seed=29)

    # independent blockwise MC with its own stream
    tau = sigma / np.sqrt(n)
    rng = stream_rng(999, 4)
    total = np.zeros(400000)
    for k in range(5):
        bk = beta[groups.groups[k]]
        Z = rng.standard_normal((400000, 3))
        pts = bk[None, :] + tau * Z
        norms = np.linalg.norm(pts, axis=1)
        scale = np.maximum(1.0 - pen.level / np.where(norms > 0, norms, 1.0),
                           0.0)
        diff = bk[None, :] - pts * scale[:, None]
        total += (diff * diff).sum(axis=1)
    oracle = total.mean()
    o_se = total.std(ddof=1) / np.sqrt(total.size)
    assert abs(risk - oracle) <= 3.0 * np.hypot(se, o_se)


def test_risk_identity_noiseless():
    ds = linear_dataset(60, 20, 3, seed=41, noise_sd=0.0)
    rep = risk_identity_check(ds, ds.beta_star, ds.beta_star, L1Penalty(0.0),
                              n_mc=100, seed=1)
    assert rep.lhs == 0.0
    assert rep.rhs == 0.0
    assert rep.within_bound
    assert rep.bound == rep.bound_noise_term + rep.bound_gap_term


def test_risk_identity_small_run():
    ds = linear_dataset(300, 40, 3, seed=43)
    pen = L1Penalty(0.25)
    fit = fit_penalized(ds, SQ, pen)
    K = curvature_matrix(SQ, ds.covariance, ds.beta_star)
    exp = fit_expansion(ds, SQ, K, ds.beta_star, pen)
    rep = risk_identity_check(ds, fit.solution, exp.solution, pen, n_mc=20000, seed=7)
    assert rep.ratio == pytest.approx(rep.lhs / rep.rhs, rel=1e-12)
    assert rep.within_bound == (abs(rep.lhs - rep.rhs) <= rep.bound)
    # at these sizes the identity is already fairly tight
    assert 0.5 <= rep.ratio <= 2.0


def test_risk_identity_refusals():
    cov = CovarianceModel.identity(10)
    X = generate_design(cov, 40, seed=5)
    beta = flat_signal(10, 2, 0.5)
    logit = generate_logistic(X, beta, seed=6, covariance=cov)
    with pytest.raises(ValueError):
        risk_identity_check(logit, beta, beta, L1Penalty(0.1), 10, 1)

    ds_ar = linear_dataset(40, 10, 2, seed=7, rho=0.5)
    with pytest.raises(ValueError):
        risk_identity_check(ds_ar, beta, beta, L1Penalty(0.1), 10, 1)

    ds_rad = linear_dataset(40, 10, 2, seed=8, design_kind="rademacher")
    with pytest.raises(ValueError):
        risk_identity_check(ds_rad, beta, beta, L1Penalty(0.1), 10, 1)


def test_debiased_at_truth():
    """With beta_hat = beta*, the error is exactly the score-averaged noise."""
    ds = linear_dataset(200, 30, 3, seed=51)
    cov = ds.covariance
    rep = debiased_estimate(ds, ds.beta_star, cov, np.eye(30)[0])
    z_a = ds.X[:, 0]
    expected = float(z_a @ ds.noise) / float(z_a @ z_a)
    assert rep.theta_hat - rep.target == pytest.approx(expected, abs=1e-14)
    assert rep.t_stat == pytest.approx(rep.noise_term, abs=1e-10)
    assert rep.remainder == pytest.approx(0.0, abs=1e-10)


def test_debiased_scale_invariance():
    ds = linear_dataset(150, 20, 2, seed=53, rho=0.4)
    pen = L1Penalty(0.3)
    fit = fit_penalized(ds, SQ, pen)
    a = np.zeros(20)
    a[3] = 1.0
    r1 = debiased_estimate(ds, fit.solution, ds.covariance, a)
    r2 = debiased_estimate(ds, fit.solution, ds.covariance, 5.0 * a)
    assert r1.theta_hat == pytest.approx(r2.theta_hat, rel=1e-12)
    assert r1.target == pytest.approx(r2.target, rel=1e-12)
    assert r1.t_stat == pytest.approx(r2.t_stat, rel=1e-9)


def test_debiased_score_is_design_column():
    # identity covariance and a = e1: the score vector is the first column
    ds = linear_dataset(100, 12, 2, seed=57)
    a = np.zeros(12)
    a[0] = 2.0  # normalization brings this back to e1
    rep = debiased_estimate(ds, np.zeros(12), ds.covariance, a)
    assert rep.target == ds.beta_star[0]
    manual = float(ds.X[:, 0] @ ds.y) / float(ds.X[:, 0] @ ds.X[:, 0])
    assert rep.theta_hat == pytest.approx(manual, rel=1e-12)


def test_debiased_interval_consistency():
    ds = linear_dataset(120, 15, 2, seed=59)
    pen = L1Penalty(0.2)
    fit = fit_penalized(ds, SQ, pen)
    rep = debiased_estimate(ds, fit.solution, ds.covariance, np.eye(15)[1])
    assert rep.covered == (rep.ci_low <= rep.target <= rep.ci_high)
    assert rep.ci_high - rep.ci_low == pytest.approx(2 * 1.96 / np.sqrt(120),
                                                    rel=1e-12)
    with pytest.raises(ValueError):
        debiased_estimate(ds, fit.solution, ds.covariance, np.zeros(15))


def test_sparsity_count_plain():
    assert sparsity_count(np.zeros(4)) == (0, None)
    assert sparsity_count(np.array([1.0, 0.0, -2.0, 0.0])) == (2, None)


def test_sparsity_count_groups():
    groups = GroupStructure.contiguous(2, 2)
    assert sparsity_count(np.zeros(4), groups) == (0, 0)
    assert sparsity_count(np.array([1.0, 0.0, 0.0, 2.0]), groups) == (2, 2)
    assert sparsity_count(np.array([1.0, 0.5, 0.0, 0.0]), groups) == (2, 1)


def test_sparsity_constant_value():
    assert sparsity_constant(1.0, 1.0, 1.0, 1.0) == 257.0
    # huge restricted eigenvalue kills the second term
    assert sparsity_constant(1.0, 1.0, 1.0, 1e9) == pytest.approx(1.0,
                                                                  abs=1e-12)
    base = sparsity_constant(1.0, 0.5, 1.0, 1.0)
    doubled = sparsity_constant(1.0, 0.5, 2.0, 1.0)
    assert doubled - 1.0 == pytest.approx(4.0 * (base - 1.0), rel=1e-12)
    with pytest.raises(ValueError):
        sparsity_constant(1.0, 0.0, 1.0, 1.0)


def test_fluctuations_shrink_with_n():
    """Sample curvature errors along a fixed direction decay like 1/sqrt(n)."""
    p = 15
    cov = CovarianceModel.identity(p)
    beta = flat_signal(p, 3, 1.0)
    K = curvature_matrix(SQ, cov, beta)
    rng = np.random.default_rng(61)
    u = rng.standard_normal(p)
    meds = {}
    for n in (2000, 32000):
        vals = []
        for rep in range(30):
            ds = linear_dataset(n, p, 3, seed=1000 * n + rep)
            out = curvature_fluctuations(ds, SQ, K, beta, [u])
            vals.append(out["quad_err"][0])
        meds[n] = np.median(vals)
        # q1 concentrates at scale sqrt(2/n)
        assert meds[n] <= 3.0 * np.sqrt(2.0 / n)
    assert meds[2000] > 2.0 * meds[32000]


def test_fluctuations_diagonal_matches():
    ds = linear_dataset(500, 10, 2, seed=63)
    K = curvature_matrix(SQ, ds.covariance, ds.beta_star)
    rng = np.random.default_rng(64)
    dirs = [rng.standard_normal(10) for _ in range(3)]
    out = curvature_fluctuations(ds, SQ, K, ds.beta_star, dirs)
    for i in range(3):
        assert out["cross_err"][i][i] == pytest.approx(out["quad_err"][i],
                                                       rel=1e-12)
        for j in range(3):
            assert out["cross_err"][i][j] == out["cross_err"][j][i]


def test_fluctuations_cubic_moment():
    # E|g|^3 = 2 sqrt(2/pi) for a standard normal index
    n = 200000
    ds = linear_dataset(n, 4, 1, seed=67)
    K = curvature_matrix(SQ, ds.covariance, ds.beta_star)
    u = np.eye(4)[0]
    out = curvature_fluctuations(ds, SQ, K, ds.beta_star, [u])
    w = np.abs(ds.X[:, 0]) ** 3
    se = w.std(ddof=1) / np.sqrt(n)
    assert abs(out["cubic_moment"][0] - 2.0 * np.sqrt(2.0 / np.pi)) <= 3.0 * se


def test_fluctuations_zero_direction():
    ds = linear_dataset(50, 5, 1, seed=69)
    K = curvature_matrix(SQ, ds.covariance, ds.beta_star)
    with pytest.raises(ValueError):
        curvature_fluctuations(ds, SQ, K, ds.beta_star, [np.zeros(5)])


def test_taylor_gap_squared_is_zero():
    ds = linear_dataset(40, 6, 2, seed=71)
    val = taylor_remainder_gap(ds, SQ, ds.beta_star + 0.3, ds.beta_star)
    assert val == 0.0


def test_taylor_gap_logistic():
    cov = CovarianceModel.identity(5)
    X = generate_design(cov, 30, seed=73)
    beta = flat_signal(5, 2, 0.5)
    ds = generate_logistic(X, beta, seed=74, covariance=cov)
    rng = np.random.default_rng(75)
    for _ in range(3):
        other = beta + 0.5 * rng.standard_normal(5)
        assert taylor_remainder_gap(ds, LG, other, beta) <= 1e-10
    # beta = beta*: the increment vanishes identically
    assert taylor_remainder_gap(ds, LG, beta, beta) <= 1e-12


def test_curvature_ratio_squared():
    """Squared loss: the remainder is exactly half the sample quadratic form."""
    n = 4000
    ds = linear_dataset(n, 8, 2, seed=77)
    K = curvature_matrix(SQ, ds.covariance, ds.beta_star)
    rng = np.random.default_rng(78)
    u = rng.standard_normal(8)
    u /= np.linalg.norm(u)
    ratio, in_ball = empirical_curvature_ratio(ds, SQ, K, ds.beta_star, u)
    assert in_ball
    manual = 0.5 * float(u @ (ds.X.T @ (ds.X @ u))) / n
    assert ratio == pytest.approx(manual, rel=1e-9)
    assert abs(ratio - 0.5) <= 0.5 * 3.0 * np.sqrt(2.0 / n)


def test_curvature_ratio_ball_flag():
    ds = linear_dataset(100, 6, 2, seed=79)
    K = curvature_matrix(SQ, ds.covariance, ds.beta_star)
    u = np.eye(6)[2]
    _, small = empirical_curvature_ratio(ds, SQ, K, ds.beta_star, 0.5 * u)
    _, big = empirical_curvature_ratio(ds, SQ, K, ds.beta_star, 2.0 * u)
    assert small and not big
    with pytest.raises(ValueError):
        empirical_curvature_ratio(ds, SQ, K, ds.beta_star, np.zeros(6))


def test_curvature_ratio_logistic_lower_bound():
    """Logistic remainders stay above the restricted strong convexity floor."""
    p = 6
    cov = CovarianceModel.identity(p)
    beta = flat_signal(p, 2, 0.5)
    K = curvature_matrix(LG, cov, beta)
    floor = curvature_lower_bound(LG, 1.0)
    hits = 0
    rng = np.random.default_rng(81)
    for rep in range(40):
        X = generate_design(cov, 500, seed=4000 + rep)
        ds = generate_logistic(X, beta, seed=8000 + rep, covariance=cov)
        u = rng.standard_normal(p)
        u /= K.norm(u) * 1.25  # keep ||u||_K safely inside the unit ball
        ratio, in_ball = empirical_curvature_ratio(ds, LG, K, beta, u)
        assert in_ball
        if ratio >= floor:
            hits += 1
    assert hits >= 36
