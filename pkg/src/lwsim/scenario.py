"""Experiment construction: configuration, node placement, traffic generation."""

from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from lwsim.engine import MS_PER_DAY
from lwsim.mac import DeviceState, DutyCycleGate, MacParams
from lwsim.phy import (DEFAULT_SENSITIVITY, SPREADING_FACTORS, LinkModel, RadioParams,
                       min_spreading_factor, sub_band_of)


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ScenarioConfig:
    n_nodes: int = 100
    sim_days: float = 57.0
    replications: int = 15
    channels: tuple[float, ...] = (868.1, 868.3, 868.5)
    bw: int = 125
    cr: int = 1
    tx_power: float = 14.0
    confirmed_fraction: float = 0.0
    downlink_fraction: float = 0.0
    mean_send_interval: float = 1000.0  # seconds
    traffic_mode: str = "exponential"
    jitter: float = 0.1
    payload_len: int = 20
    downlink_payload_len: int = 20
    ack_payload_len: int = 0
    max_attempts: int = 8
    dr_decay: bool = False
    rx1_delay: float = 1.0  # seconds
    rx2_delay: float = 2.0  # seconds
    rx2_mode: str = "default"
    backoff_min: float = 1.0  # seconds
    backoff_max: float = 3.0  # seconds
    g1_limit: float = 0.01
    rx2_band_limit: float = 0.10
    downlink_max_cycles: int = 1
    capture_threshold: float = 6.0
    ref_distance: float = 40.0
    ref_loss: float = 127.47
    path_loss_exponent: float = 2.08
    shadow_sigma: float = 0.0
    sensitivity_125: tuple[float, ...] = tuple(DEFAULT_SENSITIVITY[(sf, 125)] for sf in SPREADING_FACTORS)
    sensitivity_250: tuple[float, ...] = tuple(DEFAULT_SENSITIVITY[(sf, 250)] for sf in SPREADING_FACTORS)
    sensitivity_500: tuple[float, ...] = tuple(DEFAULT_SENSITIVITY[(sf, 500)] for sf in SPREADING_FACTORS)
    seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        need(self.n_nodes >= 1, "n_nodes", "must be at least 1")
        need(self.sim_days > 0, "sim_days", "must be positive")
        need(self.replications >= 1, "replications", "must be at least 1")
        need(len(self.channels) >= 1, "channels", "at least one channel required")
        for ch in self.channels:
            try:
                band = sub_band_of(ch)
            except ValueError as exc:
                raise ConfigError("channels", str(exc)) from None
            need(band == "g1", "channels", f"{ch} MHz is not in sub-band g1")
        need(self.bw in (125, 250, 500), "bw", "must be 125, 250 or 500")
        need(self.cr in (1, 2, 3, 4), "cr", "must be 1..4 (4/5..4/8)")
        for key in ("confirmed_fraction", "downlink_fraction"):
            need(0.0 <= getattr(self, key) <= 1.0, key, "must be within [0, 1]")
        need(self.mean_send_interval > 0, "mean_send_interval", "must be positive")
        need(self.traffic_mode in ("exponential", "periodic"), "traffic_mode",
             "must be 'exponential' or 'periodic'")
        need(0.0 <= self.jitter < 1.0, "jitter", "must be within [0, 1)")
        for key in ("payload_len", "downlink_payload_len", "ack_payload_len"):
            need(0 <= getattr(self, key) <= 255, key, "must be within 0..255 bytes")
        need(self.max_attempts >= 1, "max_attempts", "must be at least 1")
        need(self.rx2_mode in ("default", "same_as_rx1"), "rx2_mode",
             "must be 'default' or 'same_as_rx1'")
        need(0 <= self.backoff_min <= self.backoff_max, "backoff_min",
             "need 0 <= backoff_min <= backoff_max")
        for key in ("g1_limit", "rx2_band_limit"):
            need(0.0 < getattr(self, key) <= 1.0, key, "must be within (0, 1]")
        need(self.downlink_max_cycles >= 1, "downlink_max_cycles", "must be at least 1")
        need(self.capture_threshold > 0, "capture_threshold", "must be positive")
        need(self.ref_distance > 0, "ref_distance", "must be positive")
        need(self.path_loss_exponent > 0, "path_loss_exponent", "must be positive")
        need(self.shadow_sigma >= 0, "shadow_sigma", "must be non-negative")
        for bw in (125, 250, 500):
            key = f"sensitivity_{bw}"
            row = getattr(self, key)
            need(len(row) == len(SPREADING_FACTORS), key, "needs one value per SF 7..12")
            need(all(b < a for a, b in zip(row, row[1:])), key,
                 "must strictly decrease with SF")

    @property
    def duration_ms(self) -> float:
        return self.sim_days * MS_PER_DAY

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)

    def link_model(self) -> LinkModel:
        table = {}
        for bw in (125, 250, 500):
            for sf, value in zip(SPREADING_FACTORS, getattr(self, f"sensitivity_{bw}")):
                table[(sf, bw)] = float(value)
        return LinkModel(ref_distance=self.ref_distance, ref_loss=self.ref_loss,
                         exponent=self.path_loss_exponent, shadow_sigma=self.shadow_sigma,
                         capture_threshold=self.capture_threshold, sensitivity=table)

    def mac_params(self) -> MacParams:
        return MacParams(
            max_attempts=self.max_attempts, dr_decay=self.dr_decay,
            rx1_delay=self.rx1_delay * 1000.0, rx2_delay=self.rx2_delay * 1000.0,
            rx2_mode=self.rx2_mode, ack_payload_len=self.ack_payload_len,
            downlink_payload_len=self.downlink_payload_len,
            backoff_min=self.backoff_min * 1000.0, backoff_max=self.backoff_max * 1000.0,
            sub_band_limits={"g1": self.g1_limit, "g3": self.rx2_band_limit},
            default_limit=self.g1_limit, downlink_max_cycles=self.downlink_max_cycles,
            gateway_tx_power=self.tx_power)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(ScenarioConfig))
_FIELD_TYPES = {f.name: f.default for f in dataclasses.fields(ScenarioConfig)}


def coerce_value(key: str, text: str):
    """Parse a textual value into the type of field ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigError(key, "unknown configuration key")
    default = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(" ", "").split(",") if v)
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r}") from None


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Returns the raw overrides."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = coerce_value(key, value)
    return values


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    values = parse_config_text(Path(path).read_text())
    values.update(overrides)
    return ScenarioConfig(**values)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(config: ScenarioConfig) -> str:
    return "".join(f"{key} = {format_value(getattr(config, key))}\n" for key in CONFIG_KEYS)


@dataclass
class Topology:
    devices: list[DeviceState]
    radius: float
    gateway: tuple[float, float] = (0.0, 0.0)
    sf_counts: dict[int, int] = field(default_factory=dict)


def generate_topology(config: ScenarioConfig, rng: random.Random,
                      link: LinkModel | None = None) -> Topology:
    """Place nodes uniformly on the disc the gateway can hear at SF12.

    Each node gets the smallest feasible SF for its zero-shadowing path loss
    and a uniformly chosen channel.
    """
    link = link or config.link_model()
    radius = link.max_range(config.tx_power, config.bw)
    devices = []
    counts: dict[int, int] = {}
    limit = config.g1_limit
    for node_id in range(config.n_nodes):
        while True:
            r = radius * math.sqrt(rng.random())
            theta = 2.0 * math.pi * rng.random()
            x, y = r * math.cos(theta), r * math.sin(theta)
            dist = math.hypot(x, y)
            sf = min_spreading_factor(dist, config.tx_power, config.bw, link) if dist > 0 else 7
            if sf is not None:
                break
        channel = config.channels[rng.randrange(len(config.channels))]
        radio = RadioParams(sf=sf, bw=config.bw, cr=config.cr, freq=channel,
                            tx_power=config.tx_power)
        devices.append(DeviceState(node_id, x, y, radio, DutyCycleGate("g1", limit)))
        counts[sf] = counts.get(sf, 0) + 1
    return Topology(devices, radius, sf_counts=counts)


def next_uplink_time(now: float, config: ScenarioConfig, rng: random.Random) -> float:
    """Next fresh-frame generation instant (ms)."""
    mean_ms = config.mean_send_interval * 1000.0
    if config.traffic_mode == "periodic":
        if config.jitter == 0:
            return now + mean_ms
        return now + mean_ms * (1.0 + rng.uniform(-config.jitter, config.jitter))
    return now + rng.expovariate(1.0 / mean_ms)


def mark_confirmed(config: ScenarioConfig, rng: random.Random) -> bool:
    """Independent Bernoulli draw per fresh uplink."""
    return config.confirmed_fraction > 0 and rng.random() < config.confirmed_fraction


def downlink_interarrival_ms(config: ScenarioConfig) -> float | None:
    """Mean spacing of gateway-generated downlink data, or None when disabled.

    The gateway emits ``downlink_fraction`` times the aggregate nominal
    fresh-uplink rate (``n_nodes / mean_send_interval``).
    """
    if config.downlink_fraction <= 0:
        return None
    rate_per_ms = config.downlink_fraction * config.n_nodes / (config.mean_send_interval * 1000.0)
    return 1.0 / rate_per_ms
