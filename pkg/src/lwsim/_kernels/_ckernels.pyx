# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same API and results as ``_pykernels``."""

from libc.math cimport ceil, INFINITY
from libc.stdlib cimport malloc, realloc, free


cpdef double airtime_ms(int sf, int bw, int cr, int payload_len, int preamble,
                        bint explicit_header, bint ldro):
    cdef double t_sym = (1 << sf) / <double>bw
    cdef int h = 0 if explicit_header else 1
    cdef int de = 1 if ldro else 0
    cdef double num = 8 * payload_len - 4 * sf + 28 + 16 - 20 * h
    cdef double n = ceil(num / (4 * (sf - 2 * de))) * (cr + 4)
    if n < 0:
        n = 0
    return (preamble + 4.25 + 8 + n) * t_sym


cdef struct Entry:
    double start
    double end
    double rssi
    bint audible
    bint finished
    long long token


cdef class _Group:
    cdef Entry* items
    cdef Py_ssize_t n
    cdef Py_ssize_t cap

    def __cinit__(self):
        self.cap = 8
        self.n = 0
        self.items = <Entry*>malloc(self.cap * sizeof(Entry))
        if self.items == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.items)

    cdef void append(self, Entry e) except *:
        cdef Entry* grown
        if self.n == self.cap:
            grown = <Entry*>realloc(self.items, 2 * self.cap * sizeof(Entry))
            if grown == NULL:
                raise MemoryError()
            self.items = grown
            self.cap *= 2
        self.items[self.n] = e
        self.n += 1


cdef class UplinkTracker:
    """See ``_pykernels.UplinkTracker``."""

    cdef public double capture_threshold
    cdef dict _groups
    cdef dict _token_group
    cdef long long _next
    cdef Py_ssize_t _in_air

    def __init__(self, double capture_threshold):
        self.capture_threshold = capture_threshold
        self._groups = {}
        self._token_group = {}
        self._next = 0
        self._in_air = 0

    cpdef long long begin(self, int group, double start, double end, double rssi, bint audible) except -1:
        cdef _Group g = self._groups.get(group)
        cdef Entry e
        if g is None:
            g = _Group()
            self._groups[group] = g
        e.start = start
        e.end = end
        e.rssi = rssi
        e.audible = audible
        e.finished = False
        e.token = self._next
        g.append(e)
        self._token_group[self._next] = g
        self._next += 1
        self._in_air += 1
        return e.token

    cpdef bint finish(self, long long token) except -1:
        cdef _Group g = self._token_group.pop(token)
        cdef Py_ssize_t i, k = -1, w
        cdef Entry* it = g.items
        cdef double start, end, rssi, earliest = INFINITY
        cdef bint ok
        for i in range(g.n):
            if it[i].token == token:
                k = i
                break
        if k < 0:
            raise KeyError(token)
        it[k].finished = True
        self._in_air -= 1
        start = it[k].start
        end = it[k].end
        rssi = it[k].rssi
        ok = it[k].audible
        if ok:
            for i in range(g.n):
                if i == k or not it[i].audible:
                    continue
                if it[i].start < end and it[i].end > start and rssi - it[i].rssi < self.capture_threshold:
                    ok = False
                    break
        for i in range(g.n):
            if not it[i].finished and it[i].start < earliest:
                earliest = it[i].start
        w = 0
        for i in range(g.n):
            if not it[i].finished or it[i].end > earliest:
                it[w] = it[i]
                w += 1
        g.n = w
        return ok

    def in_air(self):
        return self._in_air

    def tracked(self):
        cdef _Group g
        cdef Py_ssize_t total = 0
        for g in self._groups.values():
            total += g.n
        return total


cdef class EventQueue:
    """Binary min-heap on (time, insertion order) with C-level keys."""

    cdef double* _time
    cdef long long* _seq
    cdef list _items
    cdef Py_ssize_t _n
    cdef Py_ssize_t _cap
    cdef long long _next

    def __cinit__(self):
        self._cap = 1024
        self._n = 0
        self._next = 0
        self._time = <double*>malloc(self._cap * sizeof(double))
        self._seq = <long long*>malloc(self._cap * sizeof(long long))
        if self._time == NULL or self._seq == NULL:
            raise MemoryError()
        self._items = []

    def __dealloc__(self):
        free(self._time)
        free(self._seq)

    cdef inline bint _less(self, Py_ssize_t a, Py_ssize_t b):
        return self._time[a] < self._time[b] or (
            self._time[a] == self._time[b] and self._seq[a] < self._seq[b])

    cdef inline void _swap(self, Py_ssize_t a, Py_ssize_t b):
        cdef double t = self._time[a]
        cdef long long s = self._seq[a]
        self._time[a] = self._time[b]
        self._seq[a] = self._seq[b]
        self._time[b] = t
        self._seq[b] = s
        items = self._items
        items[a], items[b] = items[b], items[a]

    cpdef void push(self, double time, object item) except *:
        cdef Py_ssize_t i, parent
        cdef double* t
        cdef long long* s
        if self._n == self._cap:
            t = <double*>realloc(self._time, 2 * self._cap * sizeof(double))
            if t == NULL:
                raise MemoryError()
            self._time = t
            s = <long long*>realloc(self._seq, 2 * self._cap * sizeof(long long))
            if s == NULL:
                raise MemoryError()
            self._seq = s
            self._cap *= 2
        i = self._n
        self._time[i] = time
        self._seq[i] = self._next
        self._next += 1
        if i < len(self._items):
            self._items[i] = item
        else:
            self._items.append(item)
        self._n += 1
        while i > 0:
            parent = (i - 1) >> 1
            if self._less(i, parent):
                self._swap(i, parent)
                i = parent
            else:
                break

    cpdef tuple pop(self):
        cdef Py_ssize_t i = 0, child, last
        if self._n == 0:
            raise IndexError("pop from empty queue")
        cdef double time = self._time[0]
        item = self._items[0]
        last = self._n - 1
        self._n = last
        if last > 0:
            self._time[0] = self._time[last]
            self._seq[0] = self._seq[last]
            self._items[0] = self._items[last]
        self._items[last] = None
        while True:
            child = 2 * i + 1
            if child >= last:
                break
            if child + 1 < last and self._less(child + 1, child):
                child += 1
            if self._less(child, i):
                self._swap(i, child)
                i = child
            else:
                break
        return (time, item)

    cpdef double peek_time(self):
        return self._time[0] if self._n > 0 else INFINITY

    def __len__(self):
        return self._n
