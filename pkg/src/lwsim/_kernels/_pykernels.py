"""Pure-Python kernels. Reference behaviour for the compiled module."""

from __future__ import annotations

import heapq
import math


def airtime_ms(sf, bw, cr, payload_len, preamble, explicit_header, ldro):
    t_sym = (1 << sf) / bw
    h = 0 if explicit_header else 1
    de = 1 if ldro else 0
    num = 8 * payload_len - 4 * sf + 28 + 16 - 20 * h
    n_payload = 8 + max(math.ceil(num / (4 * (sf - 2 * de))) * (cr + 4), 0)
    return (preamble + 4.25 + n_payload) * t_sym


class UplinkTracker:
    """Receptions in the air at one receiver, grouped by interference class.

    ``begin`` registers a frame when it starts; ``finish`` is called at its
    end and returns whether it survived every overlapping frame of the same
    group. Frames flagged inaudible (below sensitivity) neither survive nor
    interfere. Finished frames are kept only while something still in the air
    overlaps them.
    """

    def __init__(self, capture_threshold):
        self.capture_threshold = capture_threshold
        self._groups = {}
        self._entries = {}
        self._next = 0

    def begin(self, group, start, end, rssi, audible):
        token = self._next
        self._next += 1
        entry = [start, end, rssi, audible, False]
        self._groups.setdefault(group, []).append(entry)
        self._entries[token] = (group, entry)
        return token

    def finish(self, token):
        group, entry = self._entries.pop(token)
        entry[4] = True
        start, end, rssi, audible, _ = entry
        members = self._groups[group]
        ok = audible
        if ok:
            thr = self.capture_threshold
            for other in members:
                if other is entry or not other[3]:
                    continue
                if other[0] < end and other[1] > start and rssi - other[2] < thr:
                    ok = False
                    break
        earliest = math.inf
        for other in members:
            if not other[4] and other[0] < earliest:
                earliest = other[0]
        if earliest == math.inf:
            members.clear()
        else:
            members[:] = [m for m in members if not m[4] or m[1] > earliest]
        return ok

    def in_air(self):
        return len(self._entries)

    def tracked(self):
        return sum(len(m) for m in self._groups.values())


class EventQueue:
    """Min-heap keyed on (time, insertion order)."""

    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, time, item):
        heapq.heappush(self._heap, (time, self._seq, item))
        self._seq += 1

    def pop(self):
        time, _, item = heapq.heappop(self._heap)
        return time, item

    def peek_time(self):
        return self._heap[0][0] if self._heap else math.inf

    def __len__(self):
        return len(self._heap)
