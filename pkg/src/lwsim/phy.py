"""LoRa physical layer: time on air, link budget and reception resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Iterable

from lwsim._kernels import airtime_ms as _airtime_kernel

SPREADING_FACTORS = (7, 8, 9, 10, 11, 12)
BANDWIDTHS = (125, 250, 500)

# SX1276 datasheet receiver sensitivity (dBm), 868 MHz band.
DEFAULT_SENSITIVITY: dict[tuple[int, int], float] = {
    (7, 125): -123.0, (8, 125): -126.0, (9, 125): -129.0,
    (10, 125): -132.0, (11, 125): -133.0, (12, 125): -136.0,
    (7, 250): -120.0, (8, 250): -123.0, (9, 250): -125.0,
    (10, 250): -128.0, (11, 250): -130.0, (12, 250): -133.0,
    (7, 500): -116.0, (8, 500): -119.0, (9, 500): -122.0,
    (10, 500): -125.0, (11, 500): -128.0, (12, 500): -130.0,
}


class Direction(IntEnum):
    UPLINK = 0
    DOWNLINK = 1


@dataclass(frozen=True)
class RadioParams:
    sf: int = 7
    bw: int = 125
    cr: int = 1
    freq: float = 868.1
    tx_power: float = 14.0

    def __post_init__(self):
        if self.sf not in SPREADING_FACTORS:
            raise ValueError(f"unsupported spreading factor {self.sf}")
        if self.bw not in BANDWIDTHS:
            raise ValueError(f"unsupported bandwidth {self.bw} kHz")
        if self.cr not in (1, 2, 3, 4):
            raise ValueError(f"coding rate offset must be 1..4, got {self.cr}")

    def with_sf(self, sf: int) -> RadioParams:
        return RadioParams(sf, self.bw, self.cr, self.freq, self.tx_power)


@dataclass
class LinkModel:
    """Log-distance path loss with log-normal shadowing.

    ``shadow_sigma`` is the standard deviation (dB) of the per-transmission
    shadowing term.
    """

    ref_distance: float = 40.0
    ref_loss: float = 127.47
    exponent: float = 2.08
    shadow_sigma: float = 3.57
    capture_threshold: float = 6.0
    sensitivity: dict[tuple[int, int], float] = field(
        default_factory=lambda: dict(DEFAULT_SENSITIVITY))

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError("path loss exponent must be positive")
        if self.ref_distance <= 0:
            raise ValueError("reference distance must be positive")
        if self.capture_threshold <= 0:
            # at 0 dB two equal frames would both "win"
            raise ValueError("capture threshold must be positive")
        for bw in {b for _, b in self.sensitivity}:
            row = [self.sensitivity[(sf, bw)] for sf in SPREADING_FACTORS
                   if (sf, bw) in self.sensitivity]
            if any(b >= a for a, b in zip(row, row[1:])):
                raise ValueError(
                    f"sensitivity must strictly decrease with SF at {bw} kHz: {row}")

    def sensitivity_of(self, sf: int, bw: int) -> float:
        try:
            return self.sensitivity[(sf, bw)]
        except KeyError:
            raise ValueError(f"no sensitivity entry for SF{sf}/{bw} kHz") from None

    def path_loss(self, distance: float, shadow_draw: float = 0.0) -> float:
        return path_loss(distance, shadow_draw, self)

    def max_range(self, tx_power: float, bw: int = 125) -> float:
        """Distance at which the most robust SF just closes the link (zero shadowing)."""
        budget = tx_power - self.sensitivity_of(max(SPREADING_FACTORS), bw)
        return self.ref_distance * 10 ** ((budget - self.ref_loss) / (10 * self.exponent))


@dataclass
class Transmission:
    source: int
    destination: int
    direction: Direction
    params: RadioParams
    start: float
    airtime: float
    payload_len: int
    attempt: int = 1
    frame_id: int = -1

    @property
    def end(self) -> float:
        return self.start + self.airtime


@dataclass
class Reception:
    transmission: Transmission
    rssi: float
    decodable: bool = False


def airtime(params: RadioParams, payload_len: int, preamble_syms: int = 8,
            explicit_header: bool = True, low_dr_optimize: bool | None = None) -> float:
    """Time on air in milliseconds (CRC on).

    Low data rate optimisation is forced on for SF11/SF12 at 125 kHz; for
    other settings it follows ``low_dr_optimize`` (default off).
    """
    if preamble_syms == 8 and explicit_header and low_dr_optimize is None:
        cached = _FAST_AIRTIME.get((params, payload_len))
        if cached is not None:
            return cached
    if not 0 <= payload_len <= 255:
        raise ValueError(f"payload length must be within 0..255, got {payload_len}")
    if preamble_syms < 6:
        raise ValueError("preamble must be at least 6 symbols")
    if (params.sf, params.bw) not in DEFAULT_SENSITIVITY:
        raise ValueError(f"unsupported SF{params.sf}/{params.bw} kHz")
    ldro = bool(low_dr_optimize) or (params.bw == 125 and params.sf >= 11)
    value = _cached_airtime(params.sf, params.bw, params.cr, payload_len,
                            preamble_syms, explicit_header, ldro)
    if preamble_syms == 8 and explicit_header and low_dr_optimize is None:
        _FAST_AIRTIME[(params, payload_len)] = value
    return value


_FAST_AIRTIME: dict[tuple[RadioParams, int], float] = {}


@lru_cache(maxsize=4096)
def _cached_airtime(sf, bw, cr, payload_len, preamble, explicit, ldro) -> float:
    return _airtime_kernel(sf, bw, cr, payload_len, preamble, explicit, ldro)


def path_loss(distance: float, shadow_draw: float = 0.0,
              link: LinkModel | None = None) -> float:
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    link = link or LinkModel()
    return (link.ref_loss
            + 10 * link.exponent * math.log10(distance / link.ref_distance)
            + shadow_draw)


def min_spreading_factor(distance: float, tx_power: float = 14.0, bw: int = 125,
                         link: LinkModel | None = None) -> int | None:
    """Smallest SF that closes the zero-shadowing link, or ``None`` if unreachable."""
    link = link or LinkModel()
    rssi = tx_power - path_loss(distance, 0.0, link)
    for sf in SPREADING_FACTORS:
        if rssi >= link.sensitivity_of(sf, bw):
            return sf
    return None


def resolve_receptions(concurrent: Iterable[Reception],
                       link: LinkModel | None = None) -> list[Reception]:
    """Decide which of a set of time-overlapping receptions can be decoded.

    Frames below sensitivity are dropped and do not interfere. The rest are
    grouped by (frequency, SF, direction); groups never interfere with each
    other. Within a group the strongest frame survives only if it beats every
    other member by at least the capture threshold; otherwise the whole group
    is lost. Sets ``decodable`` on every input and returns the survivors in
    input order.
    """
    link = link or LinkModel()
    receptions = list(concurrent)
    groups: dict[tuple, list[Reception]] = {}
    for rec in receptions:
        rec.decodable = False
        p = rec.transmission.params
        if rec.rssi < link.sensitivity_of(p.sf, p.bw):
            continue
        key = (p.freq, p.sf, rec.transmission.direction)
        groups.setdefault(key, []).append(rec)
    for members in groups.values():
        if len(members) == 1:
            members[0].decodable = True
            continue
        ranked = sorted(members, key=lambda r: r.rssi, reverse=True)
        if ranked[0].rssi - ranked[1].rssi >= link.capture_threshold:
            ranked[0].decodable = True
    return [r for r in receptions if r.decodable]


def sub_band_of(freq: float) -> str:
    """EU868 sub-band label for a carrier frequency in MHz."""
    if 868.0 <= freq <= 868.6:
        return "g1"
    if 868.7 <= freq <= 869.2:
        return "g2"
    if 869.4 <= freq <= 869.65:
        return "g3"
    if 869.7 <= freq <= 870.0:
        return "g4"
    if 863.0 <= freq < 868.0:
        return "g"
    raise ValueError(f"{freq} MHz is outside the EU868 band plan")

