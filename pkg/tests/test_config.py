import numpy as np
import pytest

from dcmg import defaults
from dcmg.config import Line, MicrogridConfig
from dcmg.loads import ZieLoad
from dcmg.network import TopologyError


def test_vectors_follow_node_order(five_dgu):
    np.testing.assert_array_equal(five_dgu.V_ref, defaults.SIX_DGU_V_REF[:5])
    np.testing.assert_array_equal(five_dgu.I_s, defaults.SIX_DGU_RATINGS[:5])
    assert five_dgu.B.shape == (5, five_dgu.m)


def test_loads_must_match_dgus():
    with pytest.raises(TopologyError):
        MicrogridConfig((defaults.dgu(48, 10),), (), ())


def test_line_validation():
    with pytest.raises(TopologyError):
        Line(0, 1, -0.1, 1e-6)
    with pytest.raises(TopologyError):
        MicrogridConfig((defaults.dgu(48, 10),) * 2, (ZieLoad(),) * 2, (Line(0, 2, 0.1, 1e-6),))


def test_subsystem_renumbers_and_drops_dangling_lines():
    cfg = defaults.six_dgu_config()
    sub, nodes, lines = cfg.subsystem([5, 0, 2])
    np.testing.assert_array_equal(nodes, [0, 2, 5])
    # l2 = (0, 2) and l3 = (0, 5) survive
    np.testing.assert_array_equal(lines, [1, 2])
    assert [(l.source, l.sink) for l in sub.lines] == [(0, 1), (0, 2)]
    assert set(sub.comm_weights) == {(0, 1), (1, 2)}
    np.testing.assert_array_equal(sub.V_ref, [48.0, 49.0, 48.5])


def test_subsystem_with_line_subset():
    cfg = defaults.six_dgu_config()
    sub, _, lines = cfg.subsystem(range(6), lines=[0, 6])
    assert sub.m == 2 and list(lines) == [0, 6]
    assert not sub.electrically_connected()


def test_modifiers_do_not_mutate():
    cfg = defaults.two_node_config()
    scaled = cfg.scale_line_resistances(3.0)
    assert scaled.R_lines[0] == pytest.approx(3 * cfg.R_lines[0])
    assert cfg.R_lines[0] == 0.05
    changed = cfg.with_load(1, ZieLoad(Y=1.0))
    assert changed.Y[1] == 1.0 and cfg.Y[1] == 0.25
    assert cfg.with_comm_weights({}).comm_weights == {}


def test_connectivity_queries(five_dgu):
    assert five_dgu.electrically_connected() and five_dgu.comm_connected()
    cfg = defaults.six_dgu_config()
    iso, _, _ = cfg.subsystem(range(6), lines=[])
    assert len(iso.electrical_components()) == 6
    assert not cfg.with_comm_weights({(0, 1): 1.0}).comm_connected()
