"""Photon time-tag streams: file I/O, coincidence histograms and time gating.

Raw timestamps are integer picoseconds; every lag, bin and gate parameter
in the public API is in ns.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError, InputError, OrderError

PS_PER_NS = 1000
RECORD = np.dtype([("timestamp", "<u8"), ("channel", "u1")])
CSV_HEADER = ("timestamp_ps", "channel")


@dataclass(frozen=True)
class TagRecord:
    timestamp: int
    channel: int


@dataclass
class TagStream:
    """Time-ordered records held as parallel arrays."""

    timestamps: np.ndarray
    channels: np.ndarray

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.uint64)
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if self.timestamps.shape != self.channels.shape or self.timestamps.ndim != 1:
            raise InputError("timestamps and channels must be 1-D arrays of equal length")
        bad = np.flatnonzero(np.diff(self.timestamps.astype(np.int64)) < 0)
        if bad.size:
            raise OrderError(f"timestamp at record {bad[0] + 1} precedes its predecessor",
                             int(bad[0] + 1))

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.uint64), np.zeros(0, np.uint8))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        return cls(np.array([r.timestamp for r in records], dtype=np.uint64),
                   np.array([r.channel for r in records], dtype=np.uint8))

    @classmethod
    def merge(cls, *streams):
        """Time-ordered union; ties keep the argument order."""
        t = np.concatenate([s.timestamps for s in streams]) if streams else np.zeros(0, np.uint64)
        c = np.concatenate([s.channels for s in streams]) if streams else np.zeros(0, np.uint8)
        order = np.argsort(t, kind="stable")
        return cls(t[order], c[order])

    def __len__(self):
        return self.timestamps.size

    def __iter__(self):
        for t, c in zip(self.timestamps.tolist(), self.channels.tolist()):
            yield TagRecord(t, c)

    def __getitem__(self, i):
        return TagRecord(int(self.timestamps[i]), int(self.channels[i]))

    def __eq__(self, other):
        return (isinstance(other, TagStream) and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.channels, other.channels))

    def channel(self, ch) -> np.ndarray:
        """Timestamps (int64 ps) of one channel."""
        return self.timestamps[self.channels == ch].astype(np.int64)

    @property
    def span_ps(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.timestamps[-1]) - int(self.timestamps[0])


# ---------------------------------------------------------------- file formats


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise InputError(f"unknown tag format {fmt!r}; use 'csv' or 'bin'")
        return fmt
    return "bin" if str(path).endswith(".tags9") else "csv"


def _read_csv(path):
    times, chans = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return TagStream.empty()
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise FormatError(f"expected header {','.join(CSV_HEADER)!r}", 1)
        prev = -1
        for row in reader:
            line = reader.line_num
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != 2:
                raise FormatError(f"line {line}: expected 2 fields, got {len(row)}", line)
            try:
                t = int(row[0])
                c = int(row[1])
            except ValueError:
                raise FormatError(f"line {line}: non-integer field", line) from None
            if not 0 <= t < 2**64:
                raise FormatError(f"line {line}: timestamp out of range", line)
            if not 0 <= c < 256:
                raise FormatError(f"line {line}: channel out of range", line)
            if t < prev:
                raise OrderError(f"line {line}: record {len(times)} is out of order", len(times))
            prev = t
            times.append(t)
            chans.append(c)
    return TagStream(np.array(times, dtype=np.uint64), np.array(chans, dtype=np.uint8))


def _read_bin(path):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD.itemsize:
        off = raw.size - raw.size % RECORD.itemsize
        raise FormatError(f"truncated record at byte offset {off}", off)
    rec = raw.view(RECORD)
    return TagStream(rec["timestamp"].copy(), rec["channel"].copy())


def read_tags(path, fmt: str | None = None) -> TagStream:
    """Read a ``.tags9`` binary file or a ``timestamp_ps,channel`` CSV.

    The format follows the extension unless ``fmt`` is given. Unsorted
    input raises OrderError whose ``location`` is the offending record index.
    """
    fmt = _infer_format(path, fmt)
    return _read_bin(path) if fmt == "bin" else _read_csv(path)


def write_tags(path, stream: TagStream, fmt: str | None = None):
    fmt = _infer_format(path, fmt)
    if fmt == "bin":
        rec = np.empty(len(stream), dtype=RECORD)
        rec["timestamp"] = stream.timestamps
        rec["channel"] = stream.channels
        rec.tofile(path)
        return
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for t, c in zip(stream.timestamps.tolist(), stream.channels.tolist()):
        buf.write(f"{t},{c}\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------- correlation


@dataclass
class Histogram:
    """Coincidence counts in bins centred on k * bin_width (ns)."""

    bin_edges: np.ndarray
    counts: np.ndarray
    norm: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_edges.size != self.counts.size + 1:
            raise InputError("need one more edge than bins")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise InputError("bin edges must be strictly increasing")
        if np.any(self.counts < 0):
            raise InputError("counts must be >= 0")

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def normalized(self):
        """counts / norm; NaN everywhere when the normalisation is zero."""
        if self.norm > 0:
            return self.counts / self.norm
        return np.full(self.counts.size, np.nan)

    @property
    def errors(self):
        """Poisson standard errors of :attr:`normalized`."""
        if self.norm > 0:
            return np.sqrt(self.counts) / self.norm
        return np.full(self.counts.size, np.nan)

    def window_sum(self, lo, hi):
        """Counts in bins whose centres lie in [lo, hi]."""
        c = self.centers
        return int(self.counts[(c >= lo - 1e-9) & (c <= hi + 1e-9)].sum())


def _to_ps(x, name):
    v = float(x) * PS_PER_NS
    r = round(v)
    if abs(v - r) > 1e-6 * max(1.0, abs(v)):
        raise InputError(f"{name} must be a whole number of ps")
    return int(r)


def correlate(stream: TagStream, ch_a: int, ch_b: int, bin_width: float, max_lag: float,
              duration: float | None = None, threads: int | None = None) -> Histogram:
    """Histogram of t_b - t_a over [-max_lag, max_lag] (ns).

    Bins are centred on multiples of ``bin_width``; a lag exactly half-way
    between two centres goes to the one farther from zero, so swapping the
    channels mirrors the histogram exactly. ``norm`` = N_a N_b bin_width /
    duration, the expected count per bin for uncorrelated streams;
    ``duration`` defaults to the stream span. With ``ch_a == ch_b`` a
    record is never paired with itself.
    """
    if not bin_width > 0:
        raise InputError("bin_width must be > 0")
    if not max_lag >= 0:
        raise InputError("max_lag must be >= 0")
    bw = _to_ps(bin_width, "bin_width")
    if bw < 1:
        raise InputError("bin_width must be at least 1 ps")
    nb = int(round(max_lag * PS_PER_NS / bw))
    present = set(np.unique(stream.channels).tolist())
    if len(stream) and (ch_a not in present or ch_b not in present):
        missing = sorted({ch_a, ch_b} - present)
        raise InputError(f"channel(s) {missing} not present in the stream")
    ta = stream.channel(ch_a)
    tb = ta if ch_a == ch_b else stream.channel(ch_b)
    same = ch_a == ch_b
    if ta.size == 0 or tb.size == 0:
        counts = np.zeros(2 * nb + 1, dtype=np.int64)
    elif threads and threads > 1 and not same and ta.size > 4 * threads:
        counts = _correlate_chunked(ta, tb, bw, nb, threads)
    else:
        counts = kernels.pair_histogram(ta, tb, bw, nb, same)
    k = np.arange(-nb, nb + 2)
    edges = (k - 0.5) * bw / PS_PER_NS
    dur_ps = stream.span_ps if duration is None else float(duration) * PS_PER_NS
    na, nbc = int(ta.size), int(tb.size)
    norm = na * nbc * bw / dur_ps if dur_ps > 0 else 0.0
    total_pairs = na * (nbc - 1) if same else na * nbc
    meta = {"channels": [int(ch_a), int(ch_b)], "duration_ns": dur_ps / PS_PER_NS,
            "n_a": na, "n_b": nbc, "bin_width_ns": bw / PS_PER_NS, "max_lag_ns": nb * bw / PS_PER_NS,
            "total_pairs": total_pairs, "in_window": int(counts.sum()),
            "out_of_window": total_pairs - int(counts.sum()),
            "gate": stream_gate_spec(stream)}
    return Histogram(edges, counts, norm, meta)


def _correlate_chunked(ta, tb, bw, nb, threads):
    """Split the a-stream into chunks; each sees the b-records within reach."""
    reach = (nb + 1) * bw
    bounds = np.linspace(0, ta.size, threads + 1).astype(int)

    def work(k):
        a = ta[bounds[k]:bounds[k + 1]]
        if a.size == 0:
            return np.zeros(2 * nb + 1, dtype=np.int64)
        lo = np.searchsorted(tb, a[0] - reach, side="left")
        hi = np.searchsorted(tb, a[-1] + reach, side="right")
        return kernels.pair_histogram(np.ascontiguousarray(a), np.ascontiguousarray(tb[lo:hi]),
                                      bw, nb, False)

    with ThreadPoolExecutor(threads) as ex:
        parts = list(ex.map(work, range(threads)))
    return np.sum(parts, axis=0)


# ---------------------------------------------------------------- gating


@dataclass(eq=False)
class GatedStream(TagStream):
    gate_spec: dict | None = None


def stream_gate_spec(stream):
    return getattr(stream, "gate_spec", None)


def gate(stream: TagStream, period: float, phase: float, gate_start: float,
         gate_len: float) -> TagStream:
    """Keep records with ((t - phase) mod period) in [gate_start, gate_start + gate_len).

    All arguments in ns and rounded to whole ps. Order is preserved and
    gating twice with the same spec changes nothing.
    """
    if not period > 0:
        raise InputError("period must be > 0")
    if gate_len < 0 or gate_start < 0:
        raise InputError("gate_start and gate_len must be >= 0")
    if gate_start + gate_len > period * (1 + 1e-12):
        raise InputError("gate extends beyond one period")
    p = _to_ps(period, "period")
    ph = int(round(phase * PS_PER_NS))
    g0 = int(round(gate_start * PS_PER_NS))
    g1 = g0 + int(round(gate_len * PS_PER_NS))
    t = stream.timestamps.astype(np.int64)
    local = np.mod(t - ph, p)
    keep = (local >= g0) & (local < g1)
    spec = {"period_ns": period, "phase_ns": phase, "gate_start_ns": gate_start,
            "gate_len_ns": gate_len}
    prev = stream_gate_spec(stream)
    if prev is not None and prev != spec:
        spec = {"chain": [prev, spec]} if "chain" not in prev else {"chain": prev["chain"] + [spec]}
    return GatedStream(stream.timestamps[keep], stream.channels[keep], spec)


def peak_sums(hist: Histogram, period: float, halfwidth: float, n_side: int | None = None):
    """Counts in windows of +-halfwidth around k * period.

    Returns ``(central, side)`` where ``side`` lists the non-zero k peaks
    fully inside the histogram range (at most ``n_side`` on each side).
    """
    if not 0 < halfwidth <= period / 2:
        raise InputError("halfwidth must lie in (0, period / 2]")
    lim = hist.bin_edges[-1]
    kmax = int(np.floor((lim - halfwidth) / period))
    if n_side is not None:
        kmax = min(kmax, n_side)
    central = hist.window_sum(-halfwidth, halfwidth)
    side = [hist.window_sum(k * period - halfwidth, k * period + halfwidth)
            for k in range(-kmax, kmax + 1) if k != 0]
    return central, side


def pulsed_g2_zero(hist: Histogram, period: float, halfwidth: float | None = None,
                   n_side: int | None = None):
    """Central-peak counts over the mean side-peak counts, with a Poisson error."""
    hw = halfwidth if halfwidth is not None else period / 2
    central, side = peak_sums(hist, period, hw, n_side)
    if not side:
        raise InputError("histogram range holds no side peaks")
    mean_side = float(np.mean(side))
    if mean_side == 0:
        raise InputError("side peaks are empty")
    g = central / mean_side
    err = g * np.sqrt(1 / max(central, 1) + 1 / (mean_side * len(side)))
    return g, float(err)


def default_threads():
    return os.cpu_count() or 1
