import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warmdsse.estimator import estimate, flat_start
from warmdsse.measurements import synthesize_measurements
from warmdsse.oracle3bus import (
    InfeasibleMeasurement,
    ThreeBusParams,
    angles_of,
    forward_3bus,
    inverse_3bus,
    load_threebus_fixture,
    roundtrip_table,
    sample_threebus,
    threebus_feeder,
    threebus_measurement_set,
    threebus_state,
)

P = ThreeBusParams()


def test_zero_angles():
    assert forward_3bus(P, 0.0, 0.0) == (0.0, 1.0 - 10.0, 0.0, 1.0 - 10.0)
    assert inverse_3bus(P, 0.0, 0.0) == (0.0, 0.0)


def test_known_point():
    P12, _, P13, _ = forward_3bus(P, math.pi / 6, -math.pi / 6)
    assert P12 == pytest.approx(5.0, rel=1e-15)
    assert P13 == pytest.approx(-5.0, rel=1e-15)


def test_infeasible():
    with pytest.raises(InfeasibleMeasurement):
        inverse_3bus(P, 10.5, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        ThreeBusParams(B12=0.0)
    with pytest.raises(ValueError):
        ThreeBusParams(vmag=(1.0, 1.0))


def test_roundtrip_grid():
    rows = roundtrip_table(P, 100, 1.4)
    assert len(rows) == 100
    assert max(max(r[2], r[3]) for r in rows) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(t12=st.floats(-1.5, 1.5), t13=st.floats(-1.5, 1.5), B=st.floats(0.5, 50.0))
def test_roundtrip_property(t12, t13, B):
    p = ThreeBusParams(B, 2 * B, (1.02, 0.98, 0.99))
    P12, _, P13, _ = forward_3bus(p, t12, t13)
    r12, r13 = inverse_3bus(p, P12, P13)
    assert abs(r12 - t12) <= 1e-12 * max(1.0, 1.0 / math.cos(t12))
    assert abs(r13 - t13) <= 1e-12 * max(1.0, 1.0 / math.cos(t13))


def test_shipped_fixture_matches_default():
    assert load_threebus_fixture() == threebus_feeder(P)


def test_pipeline_active_flow_matches_closed_form():
    model = threebus_feeder(P)
    ms = threebus_measurement_set(model)
    v = threebus_state(P, 0.3, -0.2)
    h = ms.h(v)
    by_kind = {}
    for f, x in zip(ms.fns, h):
        by_kind.setdefault(f.kind, []).append(x)
    P12, _, P13, _ = forward_3bus(P, 0.3, -0.2)
    assert by_kind["p_flow"] == pytest.approx([P12, P13], rel=1e-12)
    assert by_kind["vmag_sq"] == pytest.approx([1.0, 1.0, 1.0], rel=1e-14)


@pytest.mark.parametrize("t12,t13", [(0.0, 0.0), (0.5, -0.7), (-1.3, 1.2), (1.4, 1.4)])
def test_pipeline_gn_recovers_angles(t12, t13):
    model = threebus_feeder(P)
    ms = synthesize_measurements(threebus_measurement_set(model), threebus_state(P, t12, t13), 0, noise=False)
    rep = estimate(ms, flat_start(model))
    assert rep.converged
    a12, a13 = angles_of(rep.v_hat)
    assert abs(a12 - t12) <= 1e-8
    assert abs(a13 - t13) <= 1e-8


def test_sample_threebus_shapes():
    Z, V, fp = sample_threebus(P, 20, 0)
    assert Z.shape == (20, 8)
    assert V.shape == (20, 6)
    assert fp
    Z2, _, _ = sample_threebus(P, 20, 0)
    assert np.array_equal(Z, Z2)
