import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcmg import defaults
from dcmg.config import MicrogridConfig
from dcmg.dynamics import PRIMARY_ONLY, SystemState, assemble
from dcmg.equilibrium import primary_only_equilibrium, reconstruct_full, solve_zie_newton
from dcmg.loads import ZieLoad
from dcmg.simulator import (
    ScenarioEvent,
    SimulationTrace,
    detect_steady_state,
    grid_index,
    integrate,
    rk4_step,
    sharing_metrics,
)

from oracles import rk4_scalar_reference


def _single(P=0.0, r=0.0):
    return MicrogridConfig((defaults.dgu(48.0, 10.0),), (ZieLoad(Y=0.5, I_bar=1.0, P_star=P, r=r),))


def _balanced_start(cfg, g, V, I_t):
    """Integrator value that makes the converter voltage balance the filter at rest."""
    V, I_t = np.array([V]), np.array([I_t])
    v = (V + cfg.R_t * I_t - g.k1 * V - g.k2 * I_t) / g.k3
    return SystemState(V, I_t, v, np.zeros(0))


def _synthetic(times, states):
    states = np.asarray(states, dtype=float).reshape(len(times), -1)
    nan = np.full(len(times), np.nan)
    return SimulationTrace(np.asarray(times, dtype=float), states, 1, 0, np.ones(1), nan, nan)


# -- building blocks --------------------------------------------------------

@settings(max_examples=50)
@given(st.floats(-50.0, -0.1), st.floats(1e-4, 1e-2), st.integers(1, 50))
def test_rk4_matches_amplification_factor(lam, dt, steps):
    x = np.array([1.0])
    for k in range(steps):
        x = rk4_step(lambda y, t: lam * y, x, k * dt, dt)
    assert x[0] == pytest.approx(rk4_scalar_reference(lam, 1.0, dt, steps), rel=1e-12, abs=1e-300)


def test_grid_index():
    assert grid_index(1.5, 1e-5) == 150000
    assert grid_index(0.0, 1e-3) == 0
    with pytest.raises(ValueError, match="multiple"):
        grid_index(1.5e-5 + 3e-6, 1e-5)


def test_sharing_metrics_examples():
    s = np.array([10.0, 5.0, 4.0])
    V_ref = np.array([48.0, 48.0, 48.0])
    d, b = sharing_metrics(np.array([5.0, 2.5, 3.0]), np.array([49.0, 46.0, 48.0]), s, V_ref, [0, 1, 2])
    assert d == pytest.approx(0.25) and b == pytest.approx(0.0)
    d, b = sharing_metrics(np.array([5.0, 2.5, 3.0]), np.array([49.0, 46.0, 48.0]), s, V_ref, [0, 1])
    assert d == 0.0 and b == pytest.approx(0.0)
    assert all(np.isnan(sharing_metrics(np.ones(3), np.ones(3), s, V_ref, [])))


def test_event_validation():
    with pytest.raises(ValueError, match="unknown"):
        ScenarioEvent(0.1, "reboot")
    with pytest.raises(ValueError):
        ScenarioEvent(-1.0, "open_line", {"line": 0})


# -- steady-state detection -------------------------------------------------

def test_detect_steady_state_constant():
    t = np.linspace(0, 1, 101)
    assert detect_steady_state(_synthetic(t, np.full(101, 3.0)), 0.2, 1e-6) == pytest.approx(0.2)


def test_detect_steady_state_exponential():
    t = np.linspace(0, 20, 2001)
    found = detect_steady_state(_synthetic(t, np.exp(-t)), 0.5, 1e-6)
    # |x'| = e^-t drops below 1e-6 at t = ln(1e6), then the window must elapse
    assert found == pytest.approx(np.log(1e6) + 0.5, abs=0.02)


def test_detect_steady_state_diverging():
    t = np.linspace(0, 5, 501)
    assert detect_steady_state(_synthetic(t, np.exp(t)), 0.2, 1e-6) is None
    assert detect_steady_state(_synthetic(t, np.sin(5 * t)), 0.2, 1e-6) is None
    with pytest.raises(ValueError):
        detect_steady_state(_synthetic(t, t), 0.0, 1e-6)


def test_detect_steady_state_restricted_range():
    t = np.linspace(0, 2, 201)
    x = np.where(t < 1.0, 1.0, 1.0 + (t - 1.0))
    tr = _synthetic(t, x)
    assert detect_steady_state(tr, 0.3, 1e-6) == pytest.approx(0.3)
    assert detect_steady_state(tr, 0.3, 1e-6, t_from=0.9) is None


# -- integration ------------------------------------------------------------

def test_equilibrium_is_held(five_dgu):
    g = defaults.default_gains(five_dgu)
    X = reconstruct_full(five_dgu, g, solve_zie_newton(five_dgu, tol=1e-13)).state()
    tr = integrate(five_dgu, g, X, t_end=0.05, record_every=500)
    drift = np.max(np.abs(tr.states - X.stack()[None, :]))
    assert drift <= 1e-9 * np.max(np.abs(X.stack()))
    assert tr.termination.kind == "completed"


def test_single_dgu_primary_only_reaches_reference():
    cfg = _single(P=50.0)
    g = defaults.default_gains(cfg)
    # sagged voltage, filter current matched to the load there
    X0 = _balanced_start(cfg, g, 40.0, 0.5 * 40 + 1 + 50 / 40)
    tr = integrate(cfg, g, X0, t_end=6.0, dt=1e-4, record_every=1000)
    assert tr.termination.kind == "completed"
    assert tr.V[-1, 0] == pytest.approx(48.0, rel=1e-7)
    X_bar = primary_only_equilibrium(cfg, g).stack()
    np.testing.assert_allclose(tr.states[-1, :3], X_bar, rtol=1e-6)


def test_two_node_secondary_converges_to_equilibrium(two_node):
    g = defaults.default_gains(two_node)
    X0 = primary_only_equilibrium(two_node, g).with_omega()
    tr = integrate(two_node, g, X0, t_end=1.0, record_every=1000)
    target = reconstruct_full(two_node, g, solve_zie_newton(two_node, tol=1e-13))
    np.testing.assert_allclose(tr.V[-1], target.V_bar, rtol=1e-4)
    np.testing.assert_allclose(tr.I_t[-1], target.I_t_bar, rtol=1e-4)
    assert tr.sharing_dispersion[-1] <= 1e-4 * target.epsilon
    # the mean of Omega never moves
    assert np.max(np.abs(tr.Omega.sum(axis=1))) <= 1e-9 * np.abs(tr.Omega).max()


def test_primary_only_matches_manual_rk4_loop(two_node):
    g = defaults.default_gains(two_node)
    X0 = primary_only_equilibrium(two_node, g)
    X0 = SystemState(X0.V * 0.95, X0.I_t, X0.v, X0.I)
    dt, steps = 1e-5, 300
    tr = integrate(two_node, g, X0, t_end=steps * dt, dt=dt)
    sys = assemble(two_node, g, PRIMARY_ONLY)
    x = X0.stack()
    for k in range(steps):
        x = rk4_step(sys.rhs, x, k * dt, dt)
    np.testing.assert_array_equal(tr.states[-1, :x.size], x)
    np.testing.assert_array_equal(tr.Omega[-1], 0.0)
    assert len(tr.times) == steps + 1


def test_rk4_fourth_order_on_nonlinear_system():
    cfg = _single(P=300.0, r=0.0)
    g = defaults.default_gains(cfg)
    X0 = _balanced_start(cfg, g, 40.0, 0.5 * 40 + 1 + 300 / 40)
    T = 0.02

    def final(dt):
        tr = integrate(cfg, g, X0, t_end=T, dt=dt, record_every=10**9)
        assert tr.termination.kind == "completed" and tr.times[-1] == pytest.approx(T)
        return tr.states[-1, :3]

    ref = final(1.25e-6)
    e1 = np.max(np.abs(final(4e-5) - ref))
    e2 = np.max(np.abs(final(2e-5) - ref))
    assert 12.0 < e1 / e2 < 20.0


def test_trace_is_deterministic_and_csv_complete(two_node):
    g = defaults.default_gains(two_node)
    X0 = primary_only_equilibrium(two_node, g).with_omega()
    a = integrate(two_node, g, X0, t_end=0.01, record_every=100).to_csv()
    b = integrate(two_node, g, X0, t_end=0.01, record_every=100).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ("time,V_1,V_2,It_1,It_2,v_1,v_2,I_1,Omega_1,Omega_2,"
                        "sharing_dispersion,balance_error")
    assert len(lines) == 1 + 11
    row = [float(x) for x in lines[-1].split(",")]
    assert row[0] == pytest.approx(0.01)
    pu = integrate(two_node, g, X0, t_end=0.01, record_every=100).to_csv(per_unit=True)
    assert float(pu.splitlines()[-1].split(",")[3]) == pytest.approx(row[3] / 10.0, rel=1e-15)


def test_off_grid_and_late_events_rejected(two_node):
    g = defaults.default_gains(two_node)
    X0 = primary_only_equilibrium(two_node, g)
    with pytest.raises(ValueError, match="multiple"):
        integrate(two_node, g, X0, [ScenarioEvent(0.0012345, "open_line", {"line": 0})], t_end=0.01, dt=1e-4)
    with pytest.raises(ValueError, match="beyond"):
        integrate(two_node, g, X0, [ScenarioEvent(0.02, "open_line", {"line": 0})], t_end=0.01, dt=1e-4)
    with pytest.raises(ValueError, match="line 5"):
        integrate(two_node, g, X0, [ScenarioEvent(0.0, "open_line", {"line": 5})], t_end=0.01)


def test_open_line_zeroes_current_and_islands(two_node):
    g = defaults.default_gains(two_node)
    X0 = primary_only_equilibrium(two_node, g)
    tr = integrate(two_node, g, X0, [ScenarioEvent(0.001, "open_line", {"line": 0})], t_end=0.002)
    k = np.searchsorted(tr.times, 0.001 - 1e-12)
    assert tr.states[k - 1, 6] != 0.0
    assert np.all(tr.states[k:, 6] == 0.0)
    assert tr.segments[-1].closed_lines == ()


def test_plug_and_unplug_events(five_dgu):
    cfg = defaults.six_dgu_config()
    g = defaults.default_gains(cfg)
    sub, _, _ = cfg.subsystem(range(6), lines=[])
    Xs = primary_only_equilibrium(sub, g)
    X0 = SystemState(Xs.V, Xs.I_t, Xs.v, np.zeros(cfg.m), np.zeros(cfg.n))
    events = [ScenarioEvent(0.001, "plug_in_dgu", {"node": 5, "lines": [2], "secondary": False}),
              ScenarioEvent(0.002, "unplug_dgu", {"node": 0})]
    tr = integrate(cfg, g, X0, events, t_end=0.003, active=range(5), closed_lines=[0, 1], secondary=())
    s0, s1, s2 = tr.segments
    assert s0.active == (0, 1, 2, 3, 4) and s0.closed_lines == (0, 1)
    assert s1.active == (0, 1, 2, 3, 4, 5) and s1.closed_lines == (0, 1, 2)
    assert s2.closed_lines == () and s2.secondary == ()
    k = np.searchsorted(tr.times, 0.001 - 1e-12)
    # node 5 is frozen while unplugged
    assert np.all(tr.V[:k, 5] == X0.V[5])
    with pytest.raises(ValueError, match="already"):
        integrate(cfg, g, X0, events[:1], t_end=0.002)


def test_secondary_toggle_and_comm_link(ring4):
    g = defaults.default_gains(ring4)
    X0 = primary_only_equilibrium(ring4, g).with_omega()
    events = [ScenarioEvent(0.0, "disable_secondary", {"nodes": [3]}),
              ScenarioEvent(0.001, "set_comm_link", {"edge": (0, 3), "weight": 0.0}),
              ScenarioEvent(0.002, "enable_secondary", {"nodes": [3]})]
    tr = integrate(ring4, g, X0, events, t_end=0.003)
    assert tr.segments[0].secondary == (0, 1, 2)
    assert tr.segments[-1].secondary == (0, 1, 2, 3)
    assert (0, 3) not in tr.config.comm_weights
    k = np.searchsorted(tr.times, 0.002 - 1e-12)
    assert np.all(tr.Omega[:k, 3] == 0.0)


def test_voltage_floor_terminates(two_node):
    g = defaults.default_gains(two_node)
    X0 = primary_only_equilibrium(two_node, g)
    low = SystemState(X0.V * 0.9, X0.I_t, X0.v, X0.I)
    tr = integrate(two_node, g, low, t_end=0.1, voltage_floor=44.0)
    assert tr.termination.collapsed and tr.termination.time == pytest.approx(1e-5)
    assert tr.termination.node in (0, 1)
    with pytest.raises(ValueError, match="positive"):
        integrate(two_node, g, SystemState(-X0.V, X0.I_t, X0.v, X0.I), t_end=0.1)
