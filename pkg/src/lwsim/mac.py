"""LoRaWAN Class-A MAC: frames, duty-cycle gates, receive windows, retransmission.

The functions here own the protocol rules; :mod:`lwsim.network` wires them to
the event loop.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

from lwsim.phy import Direction, RadioParams, airtime, sub_band_of

# Downlink-driven exchanges (name of the downlink half)
MAC_COMMANDS = (
    "LinkCheckAns",
    "LinkADRReq",
    "DutyCycleReq",
    "RXParamSetupReq",
    "DevStatusReq",
    "NewChannelReq",
    "RXTimingSetupReq",
)

# Approximate SX1272 supply current (mA) by TX power (dBm).
DEFAULT_TX_CURRENT_MA = {
    2: 24.0, 5: 25.0, 8: 25.0, 11: 32.0, 14: 44.0, 17: 90.0, 20: 125.0,
}


class FrameKind(IntEnum):
    DATA = 0
    ACK = 1
    DATA_WITH_ACK = 2
    MAC_COMMAND = 3


class DownlinkFailure:
    DUTY_CYCLE = "duty_cycle"
    BUSY = "busy"
    COLLISION = "collision"
    LINK = "link"

    ALL = (DUTY_CYCLE, BUSY, COLLISION, LINK)


@dataclass
class Frame:
    direction: Direction
    kind: FrameKind
    payload_len: int
    target: int
    confirmed: bool = False
    attempt: int = 1
    frame_id: int = -1
    command: str | None = None
    cycles: int = 0

    def __post_init__(self):
        if self.kind is FrameKind.DATA_WITH_ACK and self.direction is not Direction.DOWNLINK:
            raise ValueError("ACK piggybacking exists only on downlink frames")
        if self.kind is FrameKind.MAC_COMMAND and self.command not in MAC_COMMANDS:
            raise ValueError(f"unknown MAC command {self.command!r}")
        if self.confirmed and self.direction is Direction.DOWNLINK:
            raise ValueError("downlink frames are never confirmed")
        if self.attempt < 1:
            raise ValueError("attempt index is 1-based")

    @property
    def carries_ack(self) -> bool:
        return self.kind in (FrameKind.ACK, FrameKind.DATA_WITH_ACK)

    @property
    def carries_data(self) -> bool:
        return self.kind in (FrameKind.DATA, FrameKind.DATA_WITH_ACK)


@dataclass
class MacParams:
    max_attempts: int = 8
    dr_decay: bool = False
    rx1_delay: float = 1000.0
    rx2_delay: float = 2000.0
    rx2_mode: str = "default"
    rx2_freq: float = 869.545
    rx2_sf: int = 12
    rx2_bw: int = 125
    ack_payload_len: int = 0
    downlink_payload_len: int = 20
    backoff_min: float = 1000.0
    backoff_max: float = 3000.0
    sub_band_limits: dict[str, float] = field(
        default_factory=lambda: {"g1": 0.01, "g3": 0.10})
    default_limit: float = 0.01
    downlink_max_cycles: int = 1
    gateway_tx_power: float = 14.0
    supply_voltage: float = 3.3
    tx_current_ma: dict[float, float] = field(
        default_factory=lambda: dict(DEFAULT_TX_CURRENT_MA))

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.rx2_mode not in ("default", "same_as_rx1"):
            raise ValueError(f"rx2_mode must be 'default' or 'same_as_rx1', got {self.rx2_mode!r}")
        if not 0 <= self.backoff_min <= self.backoff_max:
            raise ValueError("backoff bounds must satisfy 0 <= min <= max")
        for band, limit in self.sub_band_limits.items():
            if not 0 < limit <= 1:
                raise ValueError(f"duty-cycle limit for {band} must be in (0, 1]")

    def limit_for(self, sub_band: str) -> float:
        return self.sub_band_limits.get(sub_band, self.default_limit)


@dataclass
class DutyCycleGate:
    sub_band: str
    limit: float
    blocked_until: float = 0.0

    def is_open(self, t: float) -> bool:
        return t >= self.blocked_until

    def advance(self, tx_end: float, airtime_ms: float) -> None:
        self.blocked_until = off_period_end(self.limit, tx_end, airtime_ms)


def off_period_end(limit: float, tx_end: float, airtime_ms: float) -> float:
    if limit >= 1.0:
        return tx_end
    return tx_end + airtime_ms * (1.0 / limit - 1.0)


def duty_cycle_advance(gate: DutyCycleGate, tx_end: float, airtime_ms: float) -> DutyCycleGate:
    """Gate after a transmission of ``airtime_ms`` ending at ``tx_end``."""
    return dataclasses.replace(
        gate, blocked_until=off_period_end(gate.limit, tx_end, airtime_ms))


@dataclass(frozen=True)
class RxWindow:
    index: int
    opens_at: float
    params: RadioParams


@dataclass
class DeviceState:
    id: int
    x: float
    y: float
    radio: RadioParams
    gate: DutyCycleGate
    params: RadioParams | None = None
    pending: Frame | None = None
    attempt: int = 0
    energy_mj: float = 0.0
    received: bool = False
    last_tx_end: float = 0.0
    timeout: object = None

    def __post_init__(self):
        if self.params is None:
            self.params = self.radio

    @property
    def distance(self) -> float:
        return (self.x * self.x + self.y * self.y) ** 0.5


@dataclass
class GatewayState:
    id: int = -1
    rx2_params: RadioParams = RadioParams(sf=12, bw=125, freq=869.545)
    gates: dict[str, DutyCycleGate] = field(default_factory=dict)
    downlink_queue: dict[int, deque] = field(default_factory=dict)
    reservations: deque = field(default_factory=deque)

    def gate_for(self, sub_band: str, mac: MacParams) -> DutyCycleGate:
        gate = self.gates.get(sub_band)
        if gate is None:
            gate = self.gates[sub_band] = DutyCycleGate(sub_band, mac.limit_for(sub_band))
        return gate

    def is_busy(self, start: float, end: float) -> bool:
        return any(s < end and e > start for s, e in self.reservations)

    def reserve(self, start: float, end: float, now: float) -> None:
        res = self.reservations
        while res and res[0][1] <= now:
            res.popleft()
        res.append((start, end))


@dataclass
class ScheduleResult:
    delivered: bool
    window: RxWindow | None = None
    airtime: float = 0.0
    reason: str | None = None


def rx2_params_for(uplink: RadioParams, mac: MacParams) -> RadioParams:
    sf = uplink.sf if mac.rx2_mode == "same_as_rx1" else mac.rx2_sf
    bw = uplink.bw if mac.rx2_mode == "same_as_rx1" else mac.rx2_bw
    return RadioParams(sf=sf, bw=bw, cr=uplink.cr, freq=mac.rx2_freq,
                       tx_power=mac.gateway_tx_power)


def open_rx_windows(device: DeviceState, tx_end: float,
                    mac: MacParams) -> tuple[RxWindow, RxWindow]:
    """RX1 mirrors the uplink channel and data rate; RX2 uses the fixed RX2 settings."""
    up = device.params
    rx1 = RxWindow(1, tx_end + mac.rx1_delay,
                   RadioParams(up.sf, up.bw, up.cr, up.freq, mac.gateway_tx_power))
    rx2 = RxWindow(2, tx_end + mac.rx2_delay, rx2_params_for(up, mac))
    return rx1, rx2


def rx2_window_close(device: DeviceState, tx_end: float, mac: MacParams) -> float:
    """Instant by which any downlink sent in RX2 has been fully received."""
    params = rx2_params_for(device.params, mac)
    longest = max(mac.ack_payload_len, mac.downlink_payload_len)
    return tx_end + mac.rx2_delay + airtime(params, longest)


def build_downlink(gw: GatewayState, device_id: int, ack_due: bool,
                   mac: MacParams) -> Frame | None:
    """Next downlink for a device whose uplink was just decoded.

    Queued data is merged with a pending ACK into a single piggybacked frame.
    """
    queue = gw.downlink_queue.get(device_id)
    data = queue.popleft() if queue else None
    if data is not None and ack_due:
        merged = Frame(Direction.DOWNLINK, FrameKind.DATA_WITH_ACK, data.payload_len,
                       device_id, frame_id=data.frame_id, cycles=data.cycles)
        return merged
    if data is not None:
        return data
    if ack_due:
        return Frame(Direction.DOWNLINK, FrameKind.ACK, mac.ack_payload_len, device_id)
    return None


def gateway_schedule_downlink(gw: GatewayState, frame: Frame,
                              windows: tuple[RxWindow, RxWindow], mac: MacParams,
                              now: float | None = None) -> ScheduleResult:
    """Try RX1 then RX2; reserve the transmitter and advance the sub-band gate on success.

    A window is usable when its sub-band gate is open at the window start and
    no other downlink overlaps the frame. When both windows fail the reason is
    ``duty_cycle`` if either window was gated, else ``busy``.
    """
    reasons = []
    for window in windows:
        dur = airtime(window.params, frame.payload_len)
        start, end = window.opens_at, window.opens_at + dur
        gate = gw.gate_for(sub_band_of(window.params.freq), mac)
        if not gate.is_open(start):
            reasons.append(DownlinkFailure.DUTY_CYCLE)
            continue
        if gw.is_busy(start, end):
            reasons.append(DownlinkFailure.BUSY)
            continue
        gate.advance(end, dur)
        gw.reserve(start, end, start if now is None else now)
        return ScheduleResult(True, window, dur)
    reason = (DownlinkFailure.DUTY_CYCLE if DownlinkFailure.DUTY_CYCLE in reasons
              else DownlinkFailure.BUSY)
    return ScheduleResult(False, reason=reason)


def retransmission_params(device: DeviceState, attempt: int, mac: MacParams) -> RadioParams:
    """Radio settings for a given attempt; with dr_decay the SF rises one step per two failures."""
    if not mac.dr_decay:
        return device.radio
    sf = min(device.radio.sf + (attempt - 1) // 2, 12)
    return device.radio.with_sf(sf)


def on_ack_timeout(device: DeviceState, mac: MacParams) -> RadioParams | None:
    """Advance the attempt counter; ``None`` means give up."""
    if device.attempt >= mac.max_attempts:
        device.attempt = mac.max_attempts
        return None
    device.attempt += 1
    device.params = retransmission_params(device, device.attempt, mac)
    return device.params


def uplink_start_time(device: DeviceState, now: float) -> float:
    return max(now, device.gate.blocked_until)


def tx_energy(params: RadioParams, airtime_ms: float, mac: MacParams | None = None) -> float:
    """Transmit energy in millijoules: V * I(tx_power) * time."""
    mac = mac or MacParams()
    try:
        current = mac.tx_current_ma[params.tx_power]
    except KeyError:
        raise ValueError(f"no supply current entry for {params.tx_power} dBm") from None
    return mac.supply_voltage * current * airtime_ms / 1000.0
