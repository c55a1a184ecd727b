"""Outcome accounting, derived metrics, log-replay audits and CSV output."""

from __future__ import annotations

import csv
import io
import math
import statistics
from array import array
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from lwsim.mac import MacParams
from lwsim.phy import Direction, sub_band_of

GATEWAY = -1


class TxOutcome(IntEnum):
    PENDING = 0
    DECODED = 1
    COLLIDED = 2
    BELOW_SENSITIVITY = 3
    DELIVERED = 4
    LINK_LOST = 5


class FrameOutcome(IntEnum):
    """Terminal class of a fresh uplink frame."""

    IN_FLIGHT = 0
    UNCONFIRMED_RECEIVED = 1
    UNCONFIRMED_LOST = 2
    ACKED = 3
    GAVE_UP = 4


class TransmissionLog:
    """Append-only, column-oriented record of every frame put on the air."""

    _COLUMNS = (
        ("start", "d"), ("airtime", "d"), ("node", "i"), ("direction", "b"),
        ("freq", "d"), ("sf", "b"), ("bw", "i"), ("tx_power", "d"),
        ("frame_id", "q"), ("attempt", "b"), ("kind", "b"), ("outcome", "b"),
        ("energy", "d"), ("peer", "i"), ("acks", "q"),
    )

    def __init__(self):
        for name, code in self._COLUMNS:
            setattr(self, name, array(code))

    def __len__(self) -> int:
        return len(self.start)

    def append(self, start, airtime, node, direction, freq, sf, bw, tx_power,
               frame_id, attempt, kind, energy, peer=GATEWAY, acks=-1) -> int:
        """``peer`` is the receiving node; ``acks`` the uplink frame id an ACK answers."""
        self.start.append(start)
        self.airtime.append(airtime)
        self.node.append(node)
        self.direction.append(direction)
        self.freq.append(freq)
        self.sf.append(sf)
        self.bw.append(bw)
        self.tx_power.append(tx_power)
        self.frame_id.append(frame_id)
        self.attempt.append(attempt)
        self.kind.append(kind)
        self.outcome.append(TxOutcome.PENDING)
        self.energy.append(energy)
        self.peer.append(peer)
        self.acks.append(acks)
        return len(self.start) - 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: np.frombuffer(getattr(self, name), dtype=getattr(self, name).typecode)
                if len(self) else np.array([], dtype=getattr(self, name).typecode)
                for name, _ in self._COLUMNS}

    def write_text(self, fh) -> None:
        """One transmission per line: time, node, direction, freq, sf, airtime, outcome."""
        fh.write("# time_ms node direction freq_mhz sf airtime_ms outcome\n")
        for i in range(len(self)):
            direction = "up" if self.direction[i] == Direction.UPLINK else "down"
            fh.write(f"{self.start[i]!r} {self.node[i]} {direction} {self.freq[i]!r} "
                     f"{self.sf[i]} {self.airtime[i]!r} {TxOutcome(self.outcome[i]).name.lower()}\n")


@dataclass
class MetricsLedger:
    n_nodes: int
    max_attempts: int
    sent_total: int = 0
    sent_fresh: int = 0
    received_unique: int = 0
    confirmed_fresh: int = 0
    downlink_attempted: int = 0
    downlink_delivered: int = 0
    downlink_data_generated: int = 0
    downlink_data_delivered: int = 0
    acks_attempted: int = 0
    acks_delivered: int = 0
    gave_up: int = 0
    acked_by_attempt: list[int] = field(default_factory=list)
    downlink_failures: dict[str, int] = field(default_factory=dict)
    energy_mj_per_node: list[float] = field(default_factory=list)
    frame_outcome: array = field(default_factory=lambda: array("b"))
    events_dispatched: int = 0
    sim_time_ms: float = 0.0

    def __post_init__(self):
        if not self.acked_by_attempt:
            self.acked_by_attempt = [0] * self.max_attempts
        if not self.energy_mj_per_node:
            self.energy_mj_per_node = [0.0] * self.n_nodes
        for cause in ("duty_cycle", "busy", "collision", "link"):
            self.downlink_failures.setdefault(cause, 0)

    def new_fresh_frame(self, confirmed: bool) -> int:
        self.sent_fresh += 1
        if confirmed:
            self.confirmed_fresh += 1
        self.frame_outcome.append(FrameOutcome.IN_FLIGHT)
        return len(self.frame_outcome) - 1

    def outcome_counts(self) -> dict[str, int]:
        counts = {o.name.lower(): 0 for o in FrameOutcome}
        if len(self.frame_outcome):
            binc = np.bincount(np.frombuffer(self.frame_outcome, dtype=np.int8),
                               minlength=len(FrameOutcome))
            for o in FrameOutcome:
                counts[o.name.lower()] = int(binc[o])
        return counts

    @property
    def acked(self) -> int:
        return sum(self.acked_by_attempt)

    @property
    def energy_mj_total(self) -> float:
        return math.fsum(self.energy_mj_per_node)

    @property
    def energy_mj_mean(self) -> float:
        return self.energy_mj_total / self.n_nodes


class MetricError(ValueError):
    """A metric is undefined for this ledger (e.g. zero denominator)."""


def goodput(ledger: MetricsLedger) -> float:
    """Fresh frames decoded at least once over all uplink transmissions."""
    if ledger.sent_total == 0:
        raise MetricError("goodput undefined: nothing was sent")
    return ledger.received_unique / ledger.sent_total


def downlink_delivery_ratio(ledger: MetricsLedger) -> float:
    if ledger.downlink_attempted == 0:
        raise MetricError("downlink delivery undefined: no downlink attempts")
    return ledger.downlink_delivered / ledger.downlink_attempted


def downlink_failure_breakdown(ledger: MetricsLedger) -> dict[str, float]:
    failed = sum(ledger.downlink_failures.values())
    if failed == 0:
        return {k: 0.0 for k in ledger.downlink_failures}
    return {k: v / failed for k, v in ledger.downlink_failures.items()}


def ack_cdf_by_attempt(ledger: MetricsLedger) -> list[float]:
    """Entry k: share of completed confirmed frames acknowledged within k+1 attempts."""
    completed = ledger.acked + ledger.gave_up
    if completed == 0:
        raise MetricError("no confirmed frame completed its retry cycle")
    out, running = [], 0
    for count in ledger.acked_by_attempt:
        running += count
        out.append(running / completed)
    return out


# ---------------------------------------------------------------------------
# log replay

def duty_cycle_violations(log: TransmissionLog, limits: dict[str, float],
                          default_limit: float = 0.01, rel_tol: float = 1e-9) -> list[dict]:
    """Consecutive same-transmitter, same-sub-band transmissions that start too early.

    The next start must not precede ``end + airtime * (1/limit - 1)`` of the
    previous frame.
    """
    cols = log.arrays()
    if len(log) == 0:
        return []
    freqs = np.unique(cols["freq"])
    names = sorted({sub_band_of(f) for f in freqs})
    code_of_freq = np.array([names.index(sub_band_of(f)) for f in freqs])
    band_code = code_of_freq[np.searchsorted(freqs, cols["freq"])]
    limit_of = np.array([limits.get(b, default_limit) for b in names])
    order = np.lexsort((cols["start"], band_code, cols["node"]))
    node = cols["node"][order]
    band = band_code[order]
    start = cols["start"][order]
    air = cols["airtime"][order]
    lim = limit_of[band]
    bands = np.array(names)
    same = (node[1:] == node[:-1]) & (band[1:] == band[:-1])
    earliest = start[:-1] + air[:-1] / lim[:-1]
    tol = rel_tol * np.maximum(np.abs(earliest), 1.0)
    bad = np.nonzero(same & (start[1:] < earliest - tol))[0]
    return [
        {"node": int(node[i]), "sub_band": str(bands[band[i]]), "prev_start": float(start[i]),
         "prev_airtime": float(air[i]), "next_start": float(start[i + 1]),
         "required": float(earliest[i])}
        for i in bad
    ]


def min_gap_ratio(log: TransmissionLog, node: int | None = None) -> float:
    """Smallest (idle gap / preceding airtime) between a device's consecutive uplinks."""
    cols = log.arrays()
    mask = cols["direction"] == Direction.UPLINK
    if node is not None:
        mask &= cols["node"] == node
    order = np.lexsort((cols["start"][mask], cols["node"][mask]))
    n = cols["node"][mask][order]
    s = cols["start"][mask][order]
    a = cols["airtime"][mask][order]
    same = n[1:] == n[:-1]
    if not same.any():
        return math.inf
    gap = s[1:] - (s[:-1] + a[:-1])
    return float(np.min(gap[same] / a[:-1][same]))


def gateway_overlaps(log: TransmissionLog) -> int:
    cols = log.arrays()
    mask = cols["node"] == GATEWAY
    s = np.sort(cols["start"][mask])
    idx = np.argsort(cols["start"][mask])
    e = (cols["start"][mask] + cols["airtime"][mask])[idx]
    return int(np.sum(s[1:] < e[:-1])) if len(s) > 1 else 0


def reconcile(ledger: MetricsLedger, log: TransmissionLog,
              mac: MacParams | None = None) -> dict[str, tuple]:
    """Recompute ledger totals from the log; returns ``{name: (ledger, log)}`` mismatches.

    Every fresh frame's terminal class is re-derived from its logged
    transmissions (attempt count, decodes, delivered ACKs) and compared with
    the ledger, and energy is recomputed from airtime and TX power.
    """
    mac = mac or MacParams()
    cols = log.arrays()
    up = cols["direction"] == Direction.UPLINK
    down = ~up
    decoded = up & (cols["outcome"] == TxOutcome.DECODED)
    delivered = down & (cols["outcome"] == TxOutcome.DELIVERED)
    n_frames = len(ledger.frame_outcome)
    checks = {
        "sent_total": (ledger.sent_total, int(up.sum())),
        "sent_fresh": (ledger.sent_fresh, int((up & (cols["attempt"] == 1)).sum())),
        "received_unique": (ledger.received_unique,
                            int(len(np.unique(cols["frame_id"][decoded])))),
        "downlink_delivered": (ledger.downlink_delivered, int(delivered.sum())),
        "downlink_link_failures": (ledger.downlink_failures["link"],
                                   int((down & (cols["outcome"] == TxOutcome.LINK_LOST)).sum())),
    }

    # energy: V * I(tx_power) * airtime per uplink, summed per node
    powers = np.unique(cols["tx_power"][up])
    missing = [p for p in powers if float(p) not in mac.tx_current_ma]
    if missing:
        raise ValueError(f"no supply current entry for {missing} dBm")
    current = np.zeros(len(cols["tx_power"]))
    for p in powers:
        current[cols["tx_power"] == p] = mac.tx_current_ma[float(p)]
    energy = mac.supply_voltage * current * cols["airtime"] / 1000.0
    per_node = np.zeros(ledger.n_nodes)
    np.add.at(per_node, cols["node"][up], energy[up])
    energy_err = float(np.max(np.abs(per_node - np.asarray(ledger.energy_mj_per_node)))) \
        if ledger.n_nodes else 0.0
    checks["energy_mj_per_node"] = (0, 0 if energy_err < 1e-6 else energy_err)

    # per-frame terminal classes
    outcome = np.frombuffer(ledger.frame_outcome, dtype=np.int8) if n_frames \
        else np.zeros(0, dtype=np.int8)
    fid = cols["frame_id"][up]
    attempts = np.bincount(fid, minlength=n_frames)[:n_frames] if n_frames else np.zeros(0)
    got = np.zeros(n_frames, dtype=bool)
    got[cols["frame_id"][decoded]] = True
    acked = np.zeros(n_frames, dtype=bool)
    ack_ids = cols["acks"][delivered]
    acked[ack_ids[ack_ids >= 0]] = True
    expect = {
        FrameOutcome.ACKED: acked,
        FrameOutcome.UNCONFIRMED_RECEIVED: got & ~acked & (attempts == 1),
        FrameOutcome.UNCONFIRMED_LOST: ~got & (attempts == 1),
        FrameOutcome.GAVE_UP: ~acked & (attempts == ledger.max_attempts),
    }
    for cls, possible in expect.items():
        is_cls = outcome == cls
        checks[f"class_{cls.name.lower()}"] = (int(is_cls.sum()), int((is_cls & possible).sum()))
    in_flight = int((outcome == FrameOutcome.IN_FLIGHT).sum())
    checks["in_flight_at_most_one_per_node"] = (in_flight, min(in_flight, ledger.n_nodes))
    counts = ledger.outcome_counts()
    checks["outcome_partition"] = (ledger.sent_fresh, sum(counts.values()))
    checks["acked"] = (ledger.acked, int(acked.sum()))
    checks["gave_up"] = (ledger.gave_up, counts["gave_up"])
    checks["acked_by_attempt"] = (
        list(ledger.acked_by_attempt),
        [int(((outcome == FrameOutcome.ACKED) & (attempts == k)).sum())
         for k in range(1, ledger.max_attempts + 1)])
    failures = sum(ledger.downlink_failures.values())
    checks["downlink_attempted"] = (ledger.downlink_attempted,
                                    ledger.downlink_delivered + failures)
    return {k: v for k, v in checks.items() if v[0] != v[1]}


# ---------------------------------------------------------------------------
# CSV output

METRIC_COLUMNS = (
    "goodput", "sent_total", "sent_fresh", "received_unique", "confirmed_fresh",
    "acked", "gave_up", "downlink_attempted", "downlink_delivered",
    "downlink_delivery_ratio", "downlink_data_generated", "downlink_data_delivered",
    "dl_fail_duty_cycle", "dl_fail_busy", "dl_fail_collision", "dl_fail_link",
) + tuple(f"ack_cdf_{k}" for k in range(1, 9)) + (
    "energy_mj_mean", "energy_mj_total", "events_dispatched",
)


def ledger_row(ledger: MetricsLedger) -> dict[str, float | int | None]:
    def safe(fn):
        try:
            return fn(ledger)
        except MetricError:
            return None

    row: dict[str, float | int | None] = {
        "goodput": safe(goodput),
        "sent_total": ledger.sent_total,
        "sent_fresh": ledger.sent_fresh,
        "received_unique": ledger.received_unique,
        "confirmed_fresh": ledger.confirmed_fresh,
        "acked": ledger.acked,
        "gave_up": ledger.gave_up,
        "downlink_attempted": ledger.downlink_attempted,
        "downlink_delivered": ledger.downlink_delivered,
        "downlink_delivery_ratio": safe(downlink_delivery_ratio),
        "downlink_data_generated": ledger.downlink_data_generated,
        "downlink_data_delivered": ledger.downlink_data_delivered,
        "energy_mj_mean": ledger.energy_mj_mean,
        "energy_mj_total": ledger.energy_mj_total,
        "events_dispatched": ledger.events_dispatched,
    }
    for cause, count in ledger.downlink_failures.items():
        row[f"dl_fail_{cause}"] = count
    cdf = safe(ack_cdf_by_attempt) or []
    for k in range(1, 9):
        row[f"ack_cdf_{k}"] = cdf[k - 1] if k <= len(cdf) else None
    return row


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def aggregate(rows: Sequence[dict]) -> dict[str, tuple[float | None, float | None]]:
    """Mean and population standard deviation per metric, skipping undefined cells."""
    out = {}
    for col in METRIC_COLUMNS:
        values = [float(r[col]) for r in rows if r.get(col) is not None]
        if not values:
            out[col] = (None, None)
        else:
            out[col] = (math.fsum(values) / len(values),
                        statistics.pstdev(values) if len(values) > 1 else 0.0)
    return out


@dataclass
class PointResult:
    """All replications of one sweep point."""

    params: dict
    rows: list[dict]  # one ledger_row per replication, with "seed"


def results_csv(points: Iterable[PointResult], param_columns: Sequence[str]) -> str:
    """Render per-replication rows plus one aggregate row per point.

    Columns: the point parameters, ``row_type`` (``run`` or ``aggregate``),
    ``replication``, ``seed``, then each metric followed by ``<metric>_std``
    (filled on aggregate rows only).
    """
    header = list(param_columns) + ["row_type", "replication", "seed"]
    for col in METRIC_COLUMNS:
        header += [col, f"{col}_std"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for point in points:
        prefix = [_fmt(point.params[c]) for c in param_columns]
        for rep, row in enumerate(point.rows):
            cells = prefix + ["run", str(rep), str(row["seed"])]
            for col in METRIC_COLUMNS:
                cells += [_fmt(row.get(col)), ""]
            writer.writerow(cells)
        cells = prefix + ["aggregate", "", ""]
        for col, (mean, std) in aggregate(point.rows).items():
            cells += [_fmt(mean), _fmt(std)]
        writer.writerow(cells)
    return buf.getvalue()


def write_results(points: Sequence[PointResult], path: str | Path,
                  param_columns: Sequence[str]) -> Path:
    if not points or any(not p.rows for p in points):
        raise ValueError("at least one completed replication per point is required")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(results_csv(points, param_columns))
    return path
