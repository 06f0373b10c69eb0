import numpy as np
import pytest

from dynkinlab.drivers import (Driver, DriverError, Growth, ProblemSpec, SampleSpec, check_hypotheses,
                               condition_g_sum, make_preset_driver, node_probabilities)
from dynkinlab.instances import cumulative_forcing, d1
from dynkinlab.lattice import LatticeError, TimeGrid, TreeKind, build_lattice


def test_preset_values():
    z = make_preset_driver("zero")
    assert z.scalar(0.3, 5.0, -2.0) == 0.0
    assert make_preset_driver("linear", [-1, 0.5, 0]).scalar(0, 2, 4) == 0.0
    assert make_preset_driver("monotone_cubic", [1]).scalar(0, 1, 0) == -1.0


def test_preset_validation():
    with pytest.raises(DriverError, match="foo"):
        make_preset_driver("foo")
    with pytest.raises(DriverError):
        make_preset_driver("linear", [1, 2])
    with pytest.raises(DriverError):
        make_preset_driver("bounded_z", [1.0, 1.0])
    with pytest.raises(DriverError):
        Growth(1.0, 1.0)


def test_zero_driver_hypotheses_have_no_slack():
    rep = check_hypotheses(make_preset_driver("zero"))
    assert rep.passed
    assert all(r.worst_excess <= 0.0 for r in rep.results.values())


def test_understated_lipschitz_constant_is_caught():
    base = make_preset_driver("linear", [0, 2, 0])
    wrong = Driver(base.fn, lip_z=1.0, mono_y=0.0, label="understated")
    rep = check_hypotheses(wrong)
    assert not rep["H1"].passed
    w = rep["H1"].witness
    # witness gap equals 2|dz| against the declared |dz|
    assert abs(abs(2 * (w["z"] - w["z2"])) - abs(w["z"] - w["z2"]) - rep["H1"].worst_excess) < 1e-9


def test_cubic_is_monotone():
    rep = check_hypotheses(make_preset_driver("monotone_cubic", [1]))
    assert rep["H2"].passed
    assert rep.passed


@pytest.mark.parametrize("name,params", [("linear", [-1, 0.5, 0.2]), ("monotone_cubic", [0.8]),
                                         ("bounded_z", [0.5, 0.5])])
def test_presets_satisfy_their_declarations(name, params):
    rep = check_hypotheses(make_preset_driver(name, params), SampleSpec(count=2000, seed=3))
    assert rep.passed
    assert {"H1", "H2", "H3", "Z", "H4", "H5"} <= set(rep.results)


def test_non_finite_driver_is_reported():
    bad = Driver(lambda t, y, z: np.where(y > 9, np.inf, 0.0), 0.0, 0.0)
    rep = check_hypotheses(bad)
    assert not rep["H3"].passed


def test_forcing_increments_and_validation():
    spec = d1()
    lat = spec.lattice
    inc = np.linspace(-0.1, 0.1, lat.n_nodes)
    v = cumulative_forcing(lat, inc)
    dv = spec.replace(forcing=v).forcing_increments()
    interior = slice(0, lat.offsets[lat.steps])
    np.testing.assert_allclose(dv[interior], inc[interior])
    assert np.all(dv[lat.leaves] == 0)
    from dynkinlab.lattice import AdaptedProcess
    with pytest.raises(LatticeError):
        spec.replace(forcing=AdaptedProcess.constant(lat, 1.0))


def test_node_probabilities_sum_to_one_per_depth():
    for kind in TreeKind:
        lat = build_lattice(TimeGrid(1.0, 4), kind)
        p = node_probabilities(lat)
        for k in range(5):
            assert abs(p[lat.level(k)].sum() - 1.0) < 1e-12


def test_condition_g_sum():
    spec = d1()
    # f(t, 0, 0) = c = 0 for the desk driver
    assert condition_g_sum(spec) == 0.0
    spec = spec.replace(driver=make_preset_driver("linear", [0, 0, 2.0]))
    # N steps of probability mass one, each weighted by dt
    assert abs(condition_g_sum(spec) - 2.0) < 1e-12
