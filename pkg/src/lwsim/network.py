"""One simulation run: a single gateway and a population of Class-A devices."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

from lwsim._kernels import UplinkTracker
from lwsim.engine import EventHandle, EventKind, Simulator, rng_stream
from lwsim.mac import (DeviceState, DownlinkFailure, Frame, FrameKind, GatewayState, RxWindow,
                       build_downlink, gateway_schedule_downlink, on_ack_timeout,
                       open_rx_windows, rx2_window_close, tx_energy, uplink_start_time)
from lwsim.metrics import (GATEWAY, FrameOutcome, MetricsLedger, TransmissionLog,
                           TxOutcome)
from lwsim.phy import Direction, RadioParams, airtime
from lwsim.scenario import (ScenarioConfig, Topology, downlink_interarrival_ms,
                            generate_topology, mark_confirmed, next_uplink_time)

log = logging.getLogger(__name__)

_FRESH = 0    # start the oldest backlogged frame
_RETRY = 1    # retransmit the pending confirmed frame
_ARRIVAL = 2  # application hands a new frame to the MAC


class _Plan(NamedTuple):
    """Per-RadioParams constants reused for every uplink."""

    airtime: float
    energy: float
    sensitivity: float
    group: int
    rx1: RadioParams
    rx2: RadioParams
    rx2_close: float


@dataclass
class RunResult:
    config: ScenarioConfig
    ledger: MetricsLedger
    log: TransmissionLog
    topology: Topology


class NetworkSim:
    """Event handlers for one run. Build, then call :meth:`run`."""

    def __init__(self, config: ScenarioConfig, topology: Topology | None = None):
        self.config = config
        self.link = config.link_model()
        self.mac = config.mac_params()
        seed = config.seed
        self.topology = topology or generate_topology(
            config, rng_stream(seed, "placement"), self.link)
        self.devices = self.topology.devices
        self.gateway = GatewayState(rx2_params=RadioParams(
            sf=self.mac.rx2_sf, bw=self.mac.rx2_bw, freq=self.mac.rx2_freq,
            tx_power=self.mac.gateway_tx_power))
        self.sim = Simulator()
        self.ledger = MetricsLedger(len(self.devices), self.mac.max_attempts)
        self.log = TransmissionLog()
        self.tracker = UplinkTracker(self.link.capture_threshold)

        self.shadow_rng = rng_stream(seed, "shadowing")
        self.backoff_rng = rng_stream(seed, "backoff")
        self.downlink_rng = rng_stream(seed, "downlink")
        self.traffic_rng = [rng_stream(seed, f"traffic/{d.id}") for d in self.devices]
        self.confirm_rng = [rng_stream(seed, f"confirm/{d.id}") for d in self.devices]

        self._channel_index = {f: i for i, f in enumerate(sorted({d.radio.freq for d in self.devices}))}
        self._loss_base = [self.link.path_loss(max(d.distance, 1e-9)) for d in self.devices]
        self._pending_frame: list[Frame | None] = [None] * len(self.devices)
        # Frames generated while the device is busy wait here (FIFO, count only).
        self._backlog = [0] * len(self.devices)
        self._busy = [False] * len(self.devices)
        self._plans: dict[RadioParams, _Plan] = {}

        sim = self.sim
        sim.on(EventKind.UPLINK_DUE, self.on_uplink_due)
        sim.on(EventKind.TX_END, self.on_tx_end)
        sim.on(EventKind.RX1_OPEN, self.on_downlink_received)
        sim.on(EventKind.RX2_OPEN, self.on_downlink_received)
        sim.on(EventKind.ACK_TIMEOUT, self.on_ack_timeout)
        sim.on(EventKind.DOWNLINK_DUE, self.on_downlink_due)

    # -- helpers -----------------------------------------------------------

    def _plan(self, params: RadioParams) -> _Plan:
        plan = self._plans.get(params)
        if plan is None:
            probe = DeviceState(-1, 0.0, 0.0, params, None)
            rx1, rx2 = open_rx_windows(probe, 0.0, self.mac)
            dur = airtime(params, self.config.payload_len)
            plan = self._plans[params] = _Plan(
                dur, tx_energy(params, dur, self.mac),
                self.link.sensitivity_of(params.sf, params.bw),
                self._channel_index[params.freq] * 16 + params.sf,
                rx1.params, rx2.params, rx2_window_close(probe, 0.0, self.mac))
        return plan

    def _shadow(self) -> float:
        sigma = self.link.shadow_sigma
        return self.shadow_rng.gauss(0.0, sigma) if sigma > 0 else 0.0

    def _schedule_arrival(self, device: DeviceState, now: float) -> None:
        due = next_uplink_time(now, self.config, self.traffic_rng[device.id])
        self.sim.schedule(due, EventKind.UPLINK_DUE, device.id, _ARRIVAL)

    def _finish_frame(self, device: DeviceState, outcome: FrameOutcome) -> None:
        frame = self._pending_frame[device.id]
        self.ledger.frame_outcome[frame.frame_id] = outcome
        self._pending_frame[device.id] = None
        device.pending = None
        device.params = device.radio
        if self._backlog[device.id]:
            self._backlog[device.id] -= 1
            self.sim.schedule(self.sim.now, EventKind.UPLINK_DUE, device.id, _FRESH)
        else:
            self._busy[device.id] = False

    # -- handlers ----------------------------------------------------------

    def on_uplink_due(self, ev: EventHandle) -> None:
        now = self.sim.now
        device = self.devices[ev.subject]
        if ev.payload == _ARRIVAL:
            # Arrivals are independent of MAC state, so every configuration
            # sharing a seed offers the same traffic.
            self._schedule_arrival(device, now)
            if self._busy[device.id]:
                self._backlog[device.id] += 1
                return
            self._busy[device.id] = True
            ev.payload = _FRESH
        start = uplink_start_time(device, now)
        if start > now:
            self.sim.schedule(start, EventKind.UPLINK_DUE, device.id, ev.payload)
            return
        if ev.payload == _FRESH:
            confirmed = mark_confirmed(self.config, self.confirm_rng[device.id])
            frame_id = self.ledger.new_fresh_frame(confirmed)
            frame = Frame(Direction.UPLINK, FrameKind.DATA, self.config.payload_len,
                          GATEWAY, confirmed=confirmed, frame_id=frame_id)
            self._pending_frame[device.id] = frame
            device.pending = frame
            device.attempt = 1
            device.received = False
            device.params = device.radio
        frame = self._pending_frame[device.id]
        frame.attempt = device.attempt
        params = device.params
        plan = self._plan(params)
        dur = plan.airtime
        end = now + dur
        device.gate.advance(end, dur)
        energy = plan.energy
        device.energy_mj += energy
        self.ledger.energy_mj_per_node[device.id] += energy
        self.ledger.sent_total += 1
        rssi = params.tx_power - self._loss_base[device.id] - self._shadow()
        audible = rssi >= plan.sensitivity
        token = self.tracker.begin(plan.group, now, end, rssi, audible)
        record = self.log.append(now, dur, device.id, Direction.UPLINK, params.freq,
                                 params.sf, params.bw, params.tx_power, frame.frame_id,
                                 device.attempt, frame.kind, energy)
        device.last_tx_end = end
        self.sim.schedule(end, EventKind.TX_END, device.id, (token, record, audible))

    def on_tx_end(self, ev: EventHandle) -> None:
        now = self.sim.now
        device = self.devices[ev.subject]
        token, record, audible = ev.payload
        frame = self._pending_frame[device.id]
        decoded = self.tracker.finish(token)
        if decoded:
            self.log.outcome[record] = TxOutcome.DECODED
            if not device.received:
                device.received = True
                self.ledger.received_unique += 1
        else:
            self.log.outcome[record] = (TxOutcome.COLLIDED if audible
                                        else TxOutcome.BELOW_SENSITIVITY)

        ack_scheduled = False
        if decoded:
            downlink = build_downlink(self.gateway, device.id, frame.confirmed, self.mac)
            if downlink is not None:
                ack_scheduled = self._send_downlink(device, downlink, now)

        if not frame.confirmed:
            self._finish_frame(device, FrameOutcome.UNCONFIRMED_RECEIVED if device.received
                               else FrameOutcome.UNCONFIRMED_LOST)
        elif not ack_scheduled:
            device.timeout = self.sim.schedule(
                now + self._plan(device.params).rx2_close, EventKind.ACK_TIMEOUT, device.id)

    def _send_downlink(self, device: DeviceState, frame: Frame, now: float) -> bool:
        """Schedule a downlink into the device's windows; True if an ACK is on its way."""
        plan = self._plan(device.params)
        windows = (RxWindow(1, now + self.mac.rx1_delay, plan.rx1),
                   RxWindow(2, now + self.mac.rx2_delay, plan.rx2))
        result = gateway_schedule_downlink(self.gateway, frame, windows, self.mac, now)
        ledger = self.ledger
        if not result.delivered:
            if frame.kind is FrameKind.DATA:
                frame.cycles += 1
                if frame.cycles < self.mac.downlink_max_cycles:
                    self.gateway.downlink_queue[device.id].appendleft(frame)
                    return False
            ledger.downlink_attempted += 1
            ledger.downlink_failures[result.reason] += 1
            if frame.carries_ack:
                ledger.acks_attempted += 1
            return False
        window = result.window
        p = window.params
        rssi = p.tx_power - self._loss_base[device.id] - self._shadow()
        link_ok = rssi >= self.link.sensitivity_of(p.sf, p.bw)
        record = self.log.append(window.opens_at, result.airtime, GATEWAY, Direction.DOWNLINK,
                                 p.freq, p.sf, p.bw, p.tx_power, frame.frame_id,
                                 frame.cycles + 1, frame.kind, 0.0, peer=device.id,
                                 acks=self._pending_frame[device.id].frame_id
                                 if frame.carries_ack else -1)
        kind = EventKind.RX1_OPEN if window.index == 1 else EventKind.RX2_OPEN
        self.sim.schedule(window.opens_at + result.airtime, kind, device.id,
                          (frame, link_ok, record, now))
        return frame.carries_ack

    def on_downlink_received(self, ev: EventHandle) -> None:
        device = self.devices[ev.subject]
        frame, link_ok, record, uplink_end = ev.payload
        ledger = self.ledger
        ledger.downlink_attempted += 1
        if frame.carries_ack:
            ledger.acks_attempted += 1
        if not link_ok:
            self.log.outcome[record] = TxOutcome.LINK_LOST
            ledger.downlink_failures[DownlinkFailure.LINK] += 1
            if frame.carries_ack:
                close = uplink_end + self._plan(device.params).rx2_close
                device.timeout = self.sim.schedule(
                    max(close, self.sim.now), EventKind.ACK_TIMEOUT, device.id)
            return
        self.log.outcome[record] = TxOutcome.DELIVERED
        ledger.downlink_delivered += 1
        if frame.carries_data:
            ledger.downlink_data_delivered += 1
        if frame.carries_ack:
            ledger.acks_delivered += 1
            ledger.acked_by_attempt[device.attempt - 1] += 1
            self._finish_frame(device, FrameOutcome.ACKED)

    def on_ack_timeout(self, ev: EventHandle) -> None:
        device = self.devices[ev.subject]
        device.timeout = None
        params = on_ack_timeout(device, self.mac)
        if params is None:
            self.ledger.gave_up += 1
            log.debug("device %d gave up on frame %d", device.id, device.pending.frame_id)
            self._finish_frame(device, FrameOutcome.GAVE_UP)
            return
        backoff = self.backoff_rng.uniform(self.mac.backoff_min, self.mac.backoff_max)
        due = uplink_start_time(device, self.sim.now) + backoff
        self.sim.schedule(due, EventKind.UPLINK_DUE, device.id, _RETRY)

    def on_downlink_due(self, ev: EventHandle) -> None:
        rng = self.downlink_rng
        target = rng.randrange(len(self.devices))
        frame = Frame(Direction.DOWNLINK, FrameKind.DATA, self.mac.downlink_payload_len,
                      target, frame_id=self.ledger.downlink_data_generated)
        self.ledger.downlink_data_generated += 1
        self.gateway.downlink_queue.setdefault(target, deque()).append(frame)
        self.sim.schedule(self.sim.now + rng.expovariate(1.0 / ev.payload),
                          EventKind.DOWNLINK_DUE, GATEWAY, ev.payload)

    # -- driver ------------------------------------------------------------

    def run(self) -> RunResult:
        end = self.config.duration_ms
        for device in self.devices:
            self._schedule_arrival(device, 0.0)
        spacing = downlink_interarrival_ms(self.config)
        if spacing is not None:
            self.sim.schedule(self.downlink_rng.expovariate(1.0 / spacing),
                              EventKind.DOWNLINK_DUE, GATEWAY, spacing)
        self.sim.schedule(end, EventKind.SIM_END)
        self.sim.run_until(end)
        self.ledger.events_dispatched = self.sim.dispatched
        self.ledger.sim_time_ms = end
        return RunResult(self.config, self.ledger, self.log, self.topology)


def simulate(config: ScenarioConfig) -> RunResult:
    """Build and run one replication of ``config``."""
    return NetworkSim(config).run()
