import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcmg import defaults
from dcmg.control import GainSet, gains_from_abgd, sample_stabilizing_gains
from dcmg.dynamics import PRIMARY_ONLY, assemble
from dcmg.equilibrium import primary_only_equilibrium, reconstruct_full, solve_zie_newton
from dcmg.loads import ZieLoad
from dcmg.stability import (
    Definiteness,
    Verdict,
    block_pd_test,
    build_P,
    build_Q,
    build_Q_full,
    check_load_condition,
    eigen_definiteness,
    exponential_admittance,
    f_limit,
    linearized_spectrum,
    lyapunov_blocks,
    lyapunov_decrease_check,
    stability_report,
)

from oracles import q_full_literal

PD, PSD, IND = Definiteness.POSITIVE_DEFINITE, Definiteness.POSITIVE_SEMIDEFINITE, Definiteness.INDEFINITE


def _equilibrium(cfg, gains):
    return reconstruct_full(cfg, gains, solve_zie_newton(cfg, tol=1e-12))


def _gains_with_delta(cfg, delta_shift):
    g = defaults.default_gains(cfg)
    return GainSet(g.k1, g.k2, g.k3, g.k4 + delta_shift, g.R_t, g.L_t)


# -- definiteness tests -----------------------------------------------------

def test_block_pd_examples():
    assert block_pd_test([2.0], [1.0], [2.0]) is PD
    assert block_pd_test([1.0], [1.0], [1.0]) is PSD
    assert block_pd_test([1.0], [2.0], [1.0]) is IND
    assert block_pd_test([0.0], [0.0], [0.0]) is PSD
    assert block_pd_test([-1.0], [0.0], [1.0]) is IND
    assert block_pd_test([2.0, 1.0], [1.0, 1.0], [2.0, 1.0]) is PSD


def test_eigen_definiteness_examples():
    assert eigen_definiteness(np.diag([1.0, 1e6])) is PD
    assert eigen_definiteness(np.array([[1.0, 1.0], [1.0, 1.0]])) is PSD
    assert eigen_definiteness(np.diag([1.0, -1.0])) is IND
    assert eigen_definiteness(np.zeros((3, 3))) is PSD


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6))
def test_block_test_agrees_with_eigenvalues(blocks):
    A, B, D = (np.array(x) for x in zip(*blocks))
    n = len(blocks)
    M = np.block([[np.diag(A), np.diag(B)], [np.diag(B), np.diag(D)]])
    w = min(np.linalg.eigvalsh(M[np.ix_([i, n + i], [i, n + i])]).min() for i in range(n))
    scale = max(np.abs(M).max(), 1e-300)
    verdict = block_pd_test(A, B, D)
    if w > 1e-6 * scale:
        assert verdict is PD
    elif w < -1e-6 * scale:
        assert verdict is IND


# -- Lyapunov matrices ------------------------------------------------------

def test_build_P_worked_example():
    R_t, L_t = np.array([0.2]), np.array([1.8e-3])
    k = gains_from_abgd(-1000.0, -500.0, 50000.0, -1000.0, R_t, L_t)
    g = GainSet(*k, R_t, L_t)
    assert g.mu[0] == pytest.approx(-450000.0)
    a, b, d = lyapunov_blocks(g)
    assert a[0] == pytest.approx(1 / 900) and b[0] == pytest.approx(-1 / 9)
    assert d[0] == pytest.approx(1000 / 9)
    cfg = defaults.two_node_config().subsystem([0])[0]
    P = build_P(cfg, g)
    np.testing.assert_allclose(P, np.diag([cfg.C_t[0], 1 / 900, 1000 / 9, 1.0]) + np.array(
        [[0, 0, 0, 0], [0, 0, -1 / 9, 0], [0, -1 / 9, 0, 0], [0, 0, 0, 0]]), rtol=1e-12)


def test_mu_zero_rejected():
    R_t, L_t = np.array([0.5]), np.array([0.5])
    g = GainSet(*gains_from_abgd(-10.0, -10.0, 100.0, -10.0, R_t, L_t), R_t, L_t)
    with pytest.raises(ValueError, match="alpha"):
        lyapunov_blocks(g)


@settings(max_examples=100)
@given(st.floats(0.05, 1.0), st.floats(5e-4, 5e-3), st.floats(0.01, 0.99), st.floats(0.1, 10.0))
def test_sampled_gains_give_positive_definite_P(R_t, L_t, margin, offset):
    g = sample_stabilizing_gains([R_t], [L_t], margin=margin, offset=offset)
    assert all(g.checks())
    assert g.mu[0] != 0
    assert block_pd_test(*lyapunov_blocks(g)) is PD


# -- Q(V) -------------------------------------------------------------------

@settings(max_examples=50)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.booleans())
def test_simplified_Q_matches_full_and_literal(n, seed, zip_only):
    rng = np.random.default_rng(seed)
    cfg = defaults.random_config(rng, n, zip_only=zip_only)
    g = defaults.default_gains(cfg, margin=float(rng.uniform(0.1, 0.9)))
    sol = _equilibrium(cfg, g)
    V = sol.V_bar * rng.uniform(0.8, 1.2, n)
    Q = build_Q(cfg, g, V, sol.V_bar)
    Qf = build_Q_full(cfg, g, V, sol.V_bar)
    Ql = q_full_literal(cfg, g, V, sol.V_bar)
    scale = np.abs(Q).max()
    assert np.abs(Q - Qf).max() <= 1e-9 * scale
    assert np.abs(Q - Ql).max() <= 1e-9 * scale


def test_literal_Q_differs_only_in_filter_consensus_block(five_dgu):
    g = _gains_with_delta(five_dgu, -0.3)
    sol = _equilibrium(five_dgu, g)
    V = sol.V_bar * 1.03
    diff = np.abs(build_Q_full(five_dgu, g, V, sol.V_bar) - q_full_literal(five_dgu, g, V, sol.V_bar))
    n, m = five_dgu.n, five_dgu.m
    mask = np.zeros_like(diff, dtype=bool)
    mask[n:2 * n, 3 * n + m:] = mask[3 * n + m:, n:2 * n] = True
    assert diff[~mask].max() <= 1e-9 * diff.max()
    assert diff[mask].max() > 0


def test_primary_only_Q_ignores_k4(five_dgu):
    V_bar = five_dgu.V_ref
    g = _gains_with_delta(five_dgu, 0.4)
    Q = build_Q(five_dgu, g, V_bar * 0.97, V_bar, PRIMARY_ONLY)
    Qf = build_Q_full(five_dgu, g, V_bar * 0.97, V_bar, PRIMARY_ONLY)
    np.testing.assert_allclose(Q, Qf, atol=1e-9 * np.abs(Q).max())
    with pytest.raises(ValueError, match="k4"):
        build_Q(five_dgu, g, V_bar, V_bar)


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(-1.0, 1.0))
def test_lyapunov_derivative_identity(n, seed, k4_shift):
    """dW/dt computed from the vector field equals the quadratic form in Q(V)."""
    rng = np.random.default_rng(seed)
    cfg = defaults.random_config(rng, n, zip_only=False)
    g = _gains_with_delta(cfg, k4_shift)
    sol = _equilibrium(cfg, g)
    sys = assemble(cfg, g)
    x_bar = sol.state().stack()
    x = x_bar + rng.normal(size=x_bar.size) * np.abs(x_bar).clip(1.0) * 0.05
    dx = x - x_bar
    W_dot = dx @ build_P(cfg, g) @ sys.rhs(x)
    quad = dx @ build_Q_full(cfg, g, x[:n], sol.V_bar) @ dx
    scale = np.abs(dx) @ np.abs(build_P(cfg, g)) @ np.abs(sys.rhs(x))
    assert abs(W_dot - quad) <= 1e-8 * max(scale, 1.0)


def test_exponential_admittance_limit_is_continuous():
    cfg = defaults.six_dgu_config()
    V_bar = cfg.V_ref
    limit = exponential_admittance(cfg, V_bar, V_bar)
    np.testing.assert_allclose(limit, (cfg.r - 1) * V_bar ** (cfg.r - 2) * cfg.P_star)
    near = exponential_admittance(cfg, V_bar * (1 + 1e-6), V_bar)
    np.testing.assert_allclose(near, limit, rtol=1e-5)
    np.testing.assert_allclose(f_limit(cfg, V_bar), cfg.Y + limit)
    with pytest.raises(ValueError):
        exponential_admittance(cfg, -V_bar, V_bar)


# -- load condition and verdicts --------------------------------------------

def test_load_condition_examples():
    cfg = defaults.two_node_config()
    V = np.array([50.0, 50.0])
    ok = cfg.with_loads([ZieLoad(Y=0.5, P_star=1000.0, r=0.0), ZieLoad(Y=0.5, P_star=1300.0, r=0.0)])
    np.testing.assert_array_equal(check_load_condition(ok, V), [True, False])
    zero = cfg.with_loads([ZieLoad(Y=0.0, P_star=10.0, r=0.5), ZieLoad(Y=0.0, P_star=10.0, r=1.5)])
    np.testing.assert_array_equal(check_load_condition(zero, V), [False, True])
    none = cfg.with_loads([ZieLoad(Y=0.0), ZieLoad(Y=0.2)])
    np.testing.assert_array_equal(check_load_condition(none, V), [True, True])


def test_verdict_local_for_default_grid(five_dgu):
    g = defaults.default_gains(five_dgu)
    rep = stability_report(five_dgu, g, _equilibrium(five_dgu, g).V_bar)
    assert rep.verdict is Verdict.CERTIFIED_LOCAL
    assert rep.methods_agree and rep.P_pd and rep.Q_nsd
    assert rep.to_dict()["verdict"] == "certified_local"


def test_verdict_global_without_power_terms(five_dgu):
    cfg = five_dgu.with_loads([ZieLoad(l.Y, l.I_bar) for l in five_dgu.loads])
    g = defaults.default_gains(cfg)
    assert stability_report(cfg, g, _equilibrium(cfg, g).V_bar).verdict is Verdict.CERTIFIED_GLOBAL


def test_verdict_not_certified_without_admittance(five_dgu):
    cfg = five_dgu.with_load(2, ZieLoad(Y=0.0, I_bar=1.0, P_star=20.0, r=0.5))
    g = defaults.default_gains(cfg)
    rep = stability_report(cfg, g, _equilibrium(cfg, g).V_bar)
    assert rep.verdict is Verdict.NOT_CERTIFIED
    assert not rep.load_ok[2] and rep.load_ok[[0, 1, 3, 4]].all()
    assert not rep.Q_nsd and rep.methods_agree


def test_verdict_not_certified_for_bad_gains(five_dgu):
    g = defaults.default_gains(five_dgu)
    V_bar = _equilibrium(five_dgu, g).V_bar
    bad = GainSet(g.k1, g.k2, g.k3 * 3.0, g.k4, g.R_t, g.L_t)
    rep = stability_report(five_dgu, bad, V_bar)
    assert rep.verdict is Verdict.NOT_CERTIFIED and not rep.gains_ok.any()
    assert "violated" in rep.gain_violations[0][0]
    shifted = stability_report(five_dgu, _gains_with_delta(five_dgu, 0.1), V_bar)
    assert shifted.verdict is Verdict.NOT_CERTIFIED
    assert "k4 = k1 - 1 violated" in shifted.gain_violations[0]
    assert stability_report(five_dgu, _gains_with_delta(five_dgu, 0.1), five_dgu.V_ref,
                            PRIMARY_ONLY).verdict is Verdict.CERTIFIED_LOCAL


@settings(max_examples=50)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.booleans())
def test_certified_equilibria_are_linearly_stable(n, seed, zip_only):
    rng = np.random.default_rng(seed)
    cfg = defaults.random_config(rng, n, zip_only=zip_only)
    g = defaults.default_gains(cfg, margin=float(rng.uniform(0.1, 0.9)))
    sol = _equilibrium(cfg, g)
    rep = stability_report(cfg, g, sol.V_bar)
    assert rep.methods_agree
    assert rep.verdict is not Verdict.NOT_CERTIFIED
    spec = linearized_spectrum(cfg, g, sol.state(), tol=1e-7 * np.abs(np.linalg.eigvals(
        assemble(cfg, g).A)).max())
    assert spec.stable
    assert abs(spec.structural_zero) <= 1e-6 * np.abs(spec.eigenvalues).max()


def test_spectrum_primary_only_has_no_structural_zero(five_dgu):
    g = defaults.default_gains(five_dgu)
    spec = linearized_spectrum(five_dgu, g, primary_only_equilibrium(five_dgu, g), PRIMARY_ONLY)
    assert spec.structural_zero is None and spec.stable
    assert spec.eigenvalues.size == 3 * five_dgu.n + five_dgu.m


# -- Lyapunov along samples -------------------------------------------------

def test_lyapunov_decrease_check_flags_increase(two_node):
    g = defaults.default_gains(two_node)
    x_bar = _equilibrium(two_node, g).state().stack()
    direction = np.ones_like(x_bar)
    shrinking = x_bar + np.outer([1.0, 0.5, 0.1, 0.0], direction)
    rep = lyapunov_decrease_check(two_node, g, x_bar, shrinking)
    assert rep.ok and rep.values[-1] == 0.0
    rep = lyapunov_decrease_check(two_node, g, x_bar, shrinking[::-1])
    assert not rep.ok and rep.first_increase == 1
