import numpy as np
import pytest

from skysched.errors import InconsistentTraceError, MalformedTraceError
from skysched.mobility import (
    MobilityTrace,
    UavState,
    VehicleState,
    advance_uav,
    generate_platoon,
    load_trace,
    write_trace,
)

CSV_2X2 = """slot,vehicle_id,x_m,y_m,speed_mps
0,0,0.0,0.0,13.89
0,1,-25.0,0.0,13.89
1,0,13.89,0.0,13.89
1,1,-11.11,0.0,13.89
"""


def test_load_trace_round_trip(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(CSV_2X2)
    trace = load_trace(path)
    assert trace.n_slots == 2
    assert trace.vehicle_ids == (0, 1)
    assert trace.frame(1)[0].x == 13.89

    out = tmp_path / "copy.csv"
    write_trace(trace, out)
    again = load_trace(out)
    assert again == trace


def test_load_trace_vehicle_missing_from_slot(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(
        "slot,vehicle_id,x_m,y_m,speed_mps\n0,0,0.0,0.0,10.0\n0,1,5.0,0.0,10.0\n1,0,10.0,0.0,10.0\n"
    )
    with pytest.raises(InconsistentTraceError):
        load_trace(path)


def test_load_trace_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(MalformedTraceError):
        load_trace(path)


def test_load_trace_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("slot,id,x,y,v\n0,0,0,0,1\n")
    with pytest.raises(MalformedTraceError, match="line 1"):
        load_trace(path)


def test_load_trace_bad_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("slot,vehicle_id,x_m,y_m,speed_mps\n0,0,0.0,0.0,10.0\n0,1,oops,0.0,10.0\n")
    with pytest.raises(MalformedTraceError, match="line 3"):
        load_trace(path)


def test_load_trace_missing_slot(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text(
        "slot,vehicle_id,x_m,y_m,speed_mps\n0,0,0.0,0.0,10.0\n0,1,1.0,0.0,10.0\n"
        "2,0,2.0,0.0,10.0\n2,1,3.0,0.0,10.0\n"
    )
    with pytest.raises(InconsistentTraceError, match="missing slots"):
        load_trace(path)


def test_platoon_determinism(tmp_path):
    a = generate_platoon(4, 13.89, 25.0, 10, seed=1)
    b = generate_platoon(4, 13.89, 25.0, 10, seed=1)
    assert a == b
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace(a, pa)
    write_trace(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_platoon_zero_jitter_exact_kinematics():
    trace = generate_platoon(3, 13.89, 25.0, 8, seed=5, position_jitter=0.0, speed_jitter=0.0)
    for t in range(8):
        frame = trace.frame(t)
        for i in range(3):
            assert frame[i].x == pytest.approx(-25.0 * i + 13.89 * t, abs=1e-12)
            assert frame[i].speed == 13.89


def test_platoon_gap_stays_within_jitter_band():
    jitter = 1.0
    trace = generate_platoon(2, 13.89, 25.0, 100, seed=3, position_jitter=jitter)
    gaps = [trace.frame(t)[0].x - trace.frame(t)[1].x for t in range(100)]
    assert all(25.0 - 2 * jitter <= g <= 25.0 + 2 * jitter for g in gaps)


def test_platoon_argument_errors():
    with pytest.raises(ValueError):
        generate_platoon(4, 13.89, 0.0, 10, seed=1)
    with pytest.raises(ValueError):
        generate_platoon(1, 13.89, 25.0, 10, seed=1)


def test_advance_uav_clamps_at_ceiling():
    uav = UavState(x=0.0, y=0.0, altitude=199.0)
    out = advance_uav(uav, 13.89, 5.0, 1.0, h_min=50.0, h_max=200.0, dh_max=5.0)
    assert out.altitude == 200.0
    assert out.velocity[2] == pytest.approx(1.0)


def test_advance_uav_zero_delta_is_identity_in_altitude():
    uav = UavState(x=10.0, y=0.0, altitude=120.0)
    out = advance_uav(uav, 13.89, 0.0, 1.0, h_min=50.0, h_max=200.0, dh_max=5.0)
    assert out.altitude == 120.0
    assert out.velocity[2] == 0.0
    assert out.x == pytest.approx(10.0 + 13.89)


def test_advance_uav_descent():
    uav = UavState(x=0.0, y=0.0, altitude=100.0)
    out = advance_uav(uav, 13.89, -5.0, 1.0, h_min=50.0, h_max=200.0, dh_max=5.0)
    assert out.altitude == 95.0
    assert out.velocity[2] == pytest.approx(-5.0)


def test_advance_uav_rejects_oversized_delta():
    uav = UavState(x=0.0, y=0.0, altitude=100.0)
    with pytest.raises(ValueError):
        advance_uav(uav, 13.89, 5.5, 1.0, h_min=50.0, h_max=200.0, dh_max=5.0)


def test_closed_loop_altitude_and_vz_invariants():
    rng = np.random.default_rng(0)
    uav = UavState(x=0.0, y=0.0, altitude=60.0)
    for _ in range(500):
        delta = rng.uniform(-5.0, 5.0)
        prev_alt = uav.altitude
        uav = advance_uav(uav, 13.89, delta, 1.0, h_min=50.0, h_max=200.0, dh_max=5.0)
        assert 50.0 <= uav.altitude <= 200.0
        assert uav.velocity[2] == pytest.approx((uav.altitude - prev_alt) / 1.0, abs=1e-12)


def test_vehicle_state_invariants():
    with pytest.raises(ValueError):
        VehicleState(id=0, x=0.0, y=0.0, speed=-1.0)
    with pytest.raises(ValueError):
        VehicleState(id=0, x=float("nan"), y=0.0, speed=1.0)


def test_trace_requires_matching_ids():
    v = VehicleState(id=0, x=0.0, y=0.0, speed=1.0)
    w = VehicleState(id=1, x=1.0, y=0.0, speed=1.0)
    with pytest.raises(InconsistentTraceError):
        MobilityTrace(slots=((v, w), (v,)))
