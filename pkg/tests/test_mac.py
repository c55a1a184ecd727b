from collections import deque

import pytest
from hypothesis import given, strategies as st

from lwsim.mac import (DEFAULT_TX_CURRENT_MA, DeviceState, DownlinkFailure, DutyCycleGate, Frame,
                       FrameKind, GatewayState, MacParams, RxWindow, build_downlink,
                       duty_cycle_advance, gateway_schedule_downlink, on_ack_timeout,
                       open_rx_windows, retransmission_params, rx2_window_close, tx_energy,
                       uplink_start_time)
from lwsim.phy import Direction, RadioParams, airtime


def _device(sf=7, freq=868.1):
    return DeviceState(0, 100.0, 0.0, RadioParams(sf=sf, freq=freq), DutyCycleGate("g1", 0.01))


# --- duty cycle ---------------------------------------------------------------

def test_duty_cycle_advance_examples():
    g = duty_cycle_advance(DutyCycleGate("g1", 0.01), 1000.0, 56.576)
    assert g.blocked_until - 1000.0 == pytest.approx(5601.024)
    g = duty_cycle_advance(DutyCycleGate("g3", 0.10), 0.0, 1318.912)
    assert g.blocked_until == pytest.approx(11870.208)
    g = duty_cycle_advance(DutyCycleGate("g", 1.0), 42.0, 500.0)
    assert g.blocked_until == 42.0


def test_duty_cycle_advance_is_pure():
    gate = DutyCycleGate("g1", 0.01, 7.0)
    duty_cycle_advance(gate, 100.0, 10.0)
    assert gate.blocked_until == 7.0


@given(st.floats(0.001, 1.0), st.floats(0, 1e9), st.floats(0, 1e4))
def test_gap_is_at_least_airtime_over_limit(limit, end, air):
    g = duty_cycle_advance(DutyCycleGate("g1", limit), end, air)
    start = end - air
    # next start - previous start >= airtime / limit
    assert g.blocked_until - start >= air / limit * (1 - 1e-12) - 1e-6


def test_deferral_to_gate():
    dev = _device()
    dev.gate.blocked_until = 3000.0
    assert uplink_start_time(dev, 1000.0) == 3000.0
    assert uplink_start_time(dev, 4000.0) == 4000.0


# --- receive windows --------------------------------------------------------------

def test_rx_windows_default():
    dev = _device(sf=8, freq=868.1)
    rx1, rx2 = open_rx_windows(dev, 5000.0, MacParams())
    assert (rx1.opens_at, rx1.params.freq, rx1.params.sf) == (6000.0, 868.1, 8)
    assert (rx2.opens_at, rx2.params.freq, rx2.params.sf, rx2.params.bw) == (7000.0, 869.545, 12, 125)


def test_rx2_same_as_rx1():
    dev = _device(sf=8)
    _, rx2 = open_rx_windows(dev, 0.0, MacParams(rx2_mode="same_as_rx1"))
    assert rx2.params.sf == 8 and rx2.params.freq == 869.545


def test_rx2_window_close():
    dev = _device()
    close = rx2_window_close(dev, 100.0, MacParams())
    assert close == pytest.approx(100.0 + 2000.0 + 1318.912)


# --- gateway scheduling -----------------------------------------------------------

def _windows(dev, tx_end, mac):
    return open_rx_windows(dev, tx_end, mac)


def _ack():
    return Frame(Direction.DOWNLINK, FrameKind.ACK, 0, 0)


def test_ack_in_rx1_advances_g1():
    mac, gw, dev = MacParams(), GatewayState(), _device()
    res = gateway_schedule_downlink(gw, _ack(), _windows(dev, 0.0, mac), mac)
    assert res.delivered and res.window.index == 1
    ack_air = airtime(RadioParams(sf=7), 0)
    assert gw.gates["g1"].blocked_until == pytest.approx(1000.0 + ack_air * 100)


def test_ack_falls_back_to_rx2_when_g1_closed():
    """Two devices finish uplinks together; the first ACK closes g1 for the second."""
    mac, gw = MacParams(), GatewayState()
    a, b = _device(freq=868.1), _device(freq=868.3)
    first = gateway_schedule_downlink(gw, _ack(), _windows(a, 0.0, mac), mac)
    second = gateway_schedule_downlink(gw, _ack(), _windows(b, 0.0, mac), mac)
    assert first.window.index == 1
    assert second.delivered and second.window.index == 2
    assert second.window.params.sf == 12
    assert gw.gates["g3"].blocked_until == pytest.approx(2000.0 + 10 * airtime(second.window.params, 0))


def test_both_windows_gated_is_duty_cycle():
    mac, gw, dev = MacParams(), GatewayState(), _device()
    gw.gate_for("g1", mac).blocked_until = 1e9
    gw.gate_for("g3", mac).blocked_until = 1e9
    res = gateway_schedule_downlink(gw, _ack(), _windows(dev, 0.0, mac), mac)
    assert not res.delivered and res.reason == DownlinkFailure.DUTY_CYCLE


def test_both_windows_busy():
    mac, gw, dev = MacParams(), GatewayState(), _device()
    gw.reserve(0.0, 1e7, 0.0)
    res = gateway_schedule_downlink(gw, _ack(), _windows(dev, 0.0, mac), mac)
    assert not res.delivered and res.reason == DownlinkFailure.BUSY


def test_gated_and_busy_reports_duty_cycle():
    mac, gw, dev = MacParams(), GatewayState(), _device()
    gw.gate_for("g1", mac).blocked_until = 1e9
    gw.reserve(1500.0, 1e7, 0.0)
    res = gateway_schedule_downlink(gw, _ack(), _windows(dev, 0.0, mac), mac)
    assert res.reason == DownlinkFailure.DUTY_CYCLE


def test_ack_merged_with_queued_data():
    mac, gw = MacParams(), GatewayState()
    data = Frame(Direction.DOWNLINK, FrameKind.DATA, 20, 0, frame_id=5)
    gw.downlink_queue[0] = deque([data])
    frame = build_downlink(gw, 0, True, mac)
    assert frame.kind is FrameKind.DATA_WITH_ACK and frame.carries_ack and frame.carries_data
    assert frame.frame_id == 5 and not gw.downlink_queue[0]
    assert build_downlink(gw, 0, False, mac) is None
    assert build_downlink(gw, 0, True, mac).kind is FrameKind.ACK


def test_frame_invariants():
    with pytest.raises(ValueError):
        Frame(Direction.UPLINK, FrameKind.DATA_WITH_ACK, 0, -1)
    with pytest.raises(ValueError):
        Frame(Direction.DOWNLINK, FrameKind.DATA, 0, 1, confirmed=True)
    with pytest.raises(ValueError):
        Frame(Direction.DOWNLINK, FrameKind.MAC_COMMAND, 0, 1, command="Reboot")
    Frame(Direction.DOWNLINK, FrameKind.MAC_COMMAND, 0, 1, command="LinkADRReq")


# --- retransmission ---------------------------------------------------------------

def test_retransmit_same_params_without_decay():
    mac, dev = MacParams(), _device()
    dev.attempt = 1
    assert on_ack_timeout(dev, mac) == dev.radio
    assert dev.attempt == 2


def test_dr_decay_every_two_attempts():
    mac, dev = MacParams(dr_decay=True), _device(sf=7)
    dev.attempt = 1
    sfs = []
    while (p := on_ack_timeout(dev, mac)) is not None:
        sfs.append(p.sf)
    assert sfs == [7, 8, 8, 9, 9, 10, 10]   # attempts 2..8
    assert retransmission_params(_device(sf=11), 8, mac).sf == 12


def test_give_up_after_max_attempts():
    mac, dev = MacParams(max_attempts=8), _device()
    dev.attempt = 8
    assert on_ack_timeout(dev, mac) is None
    assert dev.attempt == 8
    with pytest.raises(ValueError):
        MacParams(max_attempts=0)


# --- energy -----------------------------------------------------------------------

def test_tx_energy_examples():
    assert tx_energy(RadioParams(), 56.576) == pytest.approx(8.215, abs=5e-4)
    assert tx_energy(RadioParams(sf=12), 0.0) == 0.0
    e7 = tx_energy(RadioParams(sf=7), airtime(RadioParams(sf=7), 20))
    e12 = tx_energy(RadioParams(sf=12), airtime(RadioParams(sf=12), 20))
    assert e12 / e7 == pytest.approx(1318.912 / 56.576)
    assert e12 / e7 == pytest.approx(23.3, abs=0.05)


def test_tx_energy_missing_current():
    with pytest.raises(ValueError):
        tx_energy(RadioParams(tx_power=13.0), 10.0)
    assert DEFAULT_TX_CURRENT_MA[14] == 44.0


def test_window_type():
    w = RxWindow(1, 10.0, RadioParams())
    with pytest.raises(Exception):
        w.opens_at = 5.0
