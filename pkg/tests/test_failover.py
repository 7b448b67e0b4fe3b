import pytest
from hypothesis import given, settings, strategies as st

from broadrel.failover import (
    DEFAULT_LADDER,
    FailoverPolicy,
    LinkModel,
    StreamClient,
    effective_capacity,
    load_scenario,
    mean_capacity,
    run_scenario,
    step_stream,
    write_trajectory,
)

POLICY = FailoverPolicy()


def client(buf, cap=240.0, q=1, stalled=False):
    return StreamClient(buf, cap, quality=q, stalled=stalled)


def test_link_validation():
    with pytest.raises(ValueError):
        LinkModel("p", 1e6, ((5, 5),))
    with pytest.raises(ValueError):
        LinkModel("p", 1e6, ((5, 10), (8, 12)))


def test_effective_capacity_phases():
    p = LinkModel("p", 20e6, ((100, 200),))
    s = LinkModel("s", 5e6)
    assert effective_capacity(99.9, p, s, POLICY) == 20e6
    assert effective_capacity(102, p, s, POLICY) == 0
    assert effective_capacity(105, p, s, POLICY) == 5e6
    assert effective_capacity(200, p, s, POLICY) == 20e6
    assert effective_capacity(200, p, s, FailoverPolicy(switchback_delay=30)) == 5e6
    assert effective_capacity(300, p, s, FailoverPolicy(switchback=False)) == 5e6
    assert effective_capacity(150, p, None, POLICY) == 0


def test_short_outage_never_fails_over():
    p = LinkModel("p", 20e6, ((100, 103),))
    s = LinkModel("s", 5e6)
    assert effective_capacity(103, p, s, POLICY) == 20e6


def test_mean_capacity_integrates_breakpoints():
    p = LinkModel("p", 10e6, ((100.05, 200),))
    assert mean_capacity(100.0, 0.1, p, None, POLICY) == pytest.approx(5e6)


def test_step_fills_and_drains():
    r = step_stream(client(10.0), 6e6, 1.0)  # 720p at 6 Mbps fills 2 s per s
    assert r.client.buffer_s == pytest.approx(11.0) and r.played_s == 1.0
    r = step_stream(client(0.5), 0.0, 1.0)
    assert r.client.stalled and r.played_s == 0.5 and r.client.buffer_s == 0


def test_resume_after_refill():
    c = client(4.9, q=0, stalled=True)
    c = step_stream(c, 1.5e6, 0.1).client
    assert not c.stalled


def test_buffer_cap_respected():
    r = step_stream(client(239.9, cap=240.0), 100e6, 1.0)
    assert r.client.buffer_s == 240.0


def test_abr_switches():
    assert step_stream(client(5.0, q=2), 10e6, 0.1).client.quality == 1
    assert step_stream(client(40.0, q=1), 7.3e6, 0.1).client.quality == 2
    assert step_stream(client(40.0, q=1), 7.0e6, 0.1).client.quality == 1


def test_dt_must_divide_duration():
    with pytest.raises(ValueError):
        run_scenario(LinkModel("p", 1e6), None, POLICY, client(10), 1.05, dt=0.1)


def test_stall_without_secondary():
    p = LinkModel("p", 20e6, ((60, 360),))
    traj = run_scenario(p, None, POLICY, client(220.0, cap=220.0), 400.0)
    assert traj.stalls == 1
    assert traj.stall_times[0] == pytest.approx(280.0, abs=0.1)
    assert traj.conservation_error < 1e-9


def test_failover_avoids_stall():
    p = LinkModel("p", 20e6, ((60, 360),))
    s = LinkModel("s", 4e6)
    traj = run_scenario(p, s, POLICY, client(220.0, cap=220.0), 400.0)
    assert traj.stalls == 0
    assert traj.summary()["stall_seconds"] == 0


def test_scenario_file_and_trajectory(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"primary": {"capacity": 1e7, "outages": [[1, 2]]}, "client": {"buffer_s": 10, '
                    '"quality": "480p"}, "duration": 3, "dt": 0.5}')
    sc = load_scenario(path)
    assert sc.client.quality == 0 and not sc.client.stalled
    traj = sc.run()
    write_trajectory(tmp_path / "t.csv", traj)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,capacity,buffer,quality,stalled" and len(lines) == 8


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 100), st.floats(5.5, 60), st.floats(1, 120), st.floats(0, 5), st.sampled_from(DEFAULT_LADDER))
def test_no_stall_when_secondary_covers_bitrate(onset, buf, length, delay, rung):
    c = StreamClient(buf, max(buf, 60.0), ladder=(rung,))
    p = LinkModel("p", 20e6, ((onset, onset + length),))
    s = LinkModel("s", rung.bitrate)
    traj = run_scenario(p, s, FailoverPolicy(detection_delay=delay), c, round(onset + length + 20))
    assert traj.stalls == 0
