import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resfluor.errors import FormatError, InputError, OrderError
from resfluor.synthetic import poisson_stream
from resfluor.tagstream import (
    TagRecord,
    TagStream,
    correlate,
    gate,
    pulsed_g2_zero,
    read_tags,
    write_tags,
)


def brute_histogram(ta, tb, bw_ps, nb, same):
    counts = np.zeros(2 * nb + 1, dtype=np.int64)
    for i, a in enumerate(ta.tolist()):
        for j, b in enumerate(tb.tolist()):
            if same and i == j:
                continue
            d = b - a
            k = int(np.sign(d)) * ((abs(d) * 2 + bw_ps) // (2 * bw_ps))
            if abs(k) <= nb:
                counts[k + nb] += 1
    return counts


def random_stream(rng, n, span_ps=200_000, nch=2):
    t = np.sort(rng.integers(0, span_ps, n)).astype(np.uint64)
    return TagStream(t, rng.integers(0, nch, n).astype(np.uint8))


def test_empty_csv(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    assert len(read_tags(p)) == 0
    p.write_text("timestamp_ps,channel\n")
    assert len(read_tags(p)) == 0


def test_three_record_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp_ps,channel\n100,0\n250,1\n400,0\n")
    s = read_tags(p)
    assert list(s) == [TagRecord(100, 0), TagRecord(250, 1), TagRecord(400, 0)]


def test_binary_round_trip(tmp_path):
    s = random_stream(np.random.default_rng(0), 100_000, span_ps=2**62, nch=8)
    p = tmp_path / "r.tags9"
    write_tags(p, s)
    assert p.stat().st_size == 9 * 100_000
    assert read_tags(p) == s
    q = tmp_path / "r.csv"
    write_tags(q, s)
    assert read_tags(q) == s


def test_binary_layout(tmp_path):
    p = tmp_path / "one.tags9"
    write_tags(p, TagStream(np.array([0x0102030405060708], np.uint64), np.array([7], np.uint8)))
    assert p.read_bytes() == bytes([8, 7, 6, 5, 4, 3, 2, 1, 7])


def test_format_errors_carry_location(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp_ps,channel\n100,0\n2x0,1\n")
    with pytest.raises(FormatError) as e:
        read_tags(p)
    assert e.value.location == 3
    p.write_text("time,ch\n1,0\n")
    with pytest.raises(FormatError):
        read_tags(p)
    b = tmp_path / "bad.tags9"
    b.write_bytes(bytes(9 * 3 + 4))
    with pytest.raises(FormatError) as e:
        read_tags(b)
    assert e.value.location == 27


def test_order_errors(tmp_path):
    p = tmp_path / "o.csv"
    p.write_text("timestamp_ps,channel\n100,0\n250,1\n200,0\n")
    with pytest.raises(OrderError) as e:
        read_tags(p)
    assert e.value.location == 2
    b = tmp_path / "o.tags9"
    rec = np.zeros(3, dtype=[("timestamp", "<u8"), ("channel", "u1")])
    rec["timestamp"] = [5, 9, 1]
    rec.tofile(b)
    with pytest.raises(OrderError) as e:
        read_tags(b)
    assert e.value.location == 2


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 60), bw=st.integers(1, 3000),
       nb=st.integers(0, 40), same=st.booleans())
def test_correlate_matches_brute_force(seed, n, bw, nb, same):
    s = random_stream(np.random.default_rng(seed), n, span_ps=50_000)
    if n:
        s = TagStream.merge(s, TagStream(np.array([0, 1], np.uint64), np.array([0, 1], np.uint8)))
    b = 0 if same else 1
    h = correlate(s, 0, b, bw / 1000, nb * bw / 1000)
    expect = brute_histogram(s.channel(0), s.channel(b), bw, nb, same)
    np.testing.assert_array_equal(h.counts, expect)
    assert h.metadata["in_window"] + h.metadata["out_of_window"] == h.metadata["total_pairs"]


def test_half_bin_lags_round_away_from_zero():
    s = TagStream(np.array([0, 500, 1500], np.uint64), np.array([0, 1, 1], np.uint8))
    h = correlate(s, 0, 1, 1.0, 3.0)
    assert h.counts.tolist() == [0, 0, 0, 0, 1, 1, 0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 300))
def test_channel_swap_mirrors(seed, n):
    s = random_stream(np.random.default_rng(seed), n, span_ps=100_000)
    if len(np.unique(s.channels)) < 2:
        return
    ab = correlate(s, 0, 1, 0.25, 20.0)
    ba = correlate(s, 1, 0, 0.25, 20.0)
    np.testing.assert_array_equal(ab.counts, ba.counts[::-1])


def test_missing_channel_and_bad_args():
    s = TagStream(np.array([1, 2], np.uint64), np.array([0, 0], np.uint8))
    with pytest.raises(InputError):
        correlate(s, 0, 1, 1.0, 10.0)
    with pytest.raises(InputError):
        correlate(s, 0, 0, 0.0, 10.0)


def test_empty_stream_gives_empty_histogram():
    h = correlate(TagStream.empty(), 0, 1, 1.0, 5.0)
    assert h.counts.sum() == 0 and h.counts.size == 11
    assert np.all(np.isnan(h.normalized))


def test_poisson_streams_normalise_to_one():
    a = poisson_stream(0.02, 2e7, 0, seed=1)
    b = poisson_stream(0.02, 2e7, 1, seed=2)
    s = TagStream.merge(a, b)
    h = correlate(s, 0, 1, 1.0, 100.0, duration=2e7)
    z = (h.normalized - 1) / (np.sqrt(h.norm) / h.norm)
    assert np.all(np.abs(z) < 5)
    assert abs(h.normalized.mean() - 1) < 5 / np.sqrt(h.counts.sum())


def test_threads_give_identical_counts():
    a = poisson_stream(0.05, 5e6, 0, seed=3)
    b = poisson_stream(0.05, 5e6, 1, seed=4)
    s = TagStream.merge(a, b)
    ref = correlate(s, 0, 1, 0.5, 50.0, threads=1)
    for k in (2, 3, 8):
        np.testing.assert_array_equal(correlate(s, 0, 1, 0.5, 50.0, threads=k).counts, ref.counts)


def test_shifted_copy_moves_dip():
    from resfluor.emitter import EmitterParams
    from resfluor.synthetic import cw_stream

    s = cw_stream(EmitterParams(5.5, 9.68), 0.3, 200_000, efficiency=1.0, seed=5, channels=(0, 0))
    t = s.timestamps
    shift = 40_000
    shifted = TagStream.merge(TagStream(t, np.zeros(t.size, np.uint8)),
                              TagStream(t + np.uint64(shift), np.ones(t.size, np.uint8)))
    h = correlate(shifted, 0, 1, 1.0, 100.0)
    c = h.centers
    # the auto-pair at exactly the shift survives once per photon; the antibunching
    # dip sits on either side of it
    spike = h.counts[np.argmin(np.abs(c - 40.0))]
    assert spike >= t.size
    near = h.counts[(np.abs(c - 40.0) >= 1) & (np.abs(c - 40.0) <= 2)].mean()
    far = h.counts[np.abs(c + 60.0) <= 5].mean()
    assert near < 0.3 * far


def test_gate_examples():
    s = random_stream(np.random.default_rng(6), 5000, span_ps=10**7)
    assert gate(s, 100.0, 0.0, 0.0, 100.0) == s
    assert len(gate(s, 100.0, 0.0, 10.0, 0.0)) == 0
    with pytest.raises(InputError):
        gate(s, 100.0, 0.0, 50.0, 60.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), period=st.integers(1, 500), phase=st.integers(-1000, 1000),
       start=st.floats(0, 1), frac=st.floats(0, 1))
def test_gate_idempotent_and_ordered(seed, period, phase, start, frac):
    s = random_stream(np.random.default_rng(seed), 500, span_ps=10**6)
    g0 = round(start * period)
    gl = round(frac * (period - g0))
    once = gate(s, period / 1000, phase / 1000, g0 / 1000, gl / 1000)
    twice = gate(once, period / 1000, phase / 1000, g0 / 1000, gl / 1000)
    assert twice == once
    assert np.all(np.diff(once.timestamps.astype(np.int64)) >= 0)
    local = np.mod(once.timestamps.astype(np.int64) - phase, period)
    assert np.all((local >= g0) & (local < g0 + gl))
    assert len(once) == int(np.sum((np.mod(s.timestamps.astype(np.int64) - phase, period) >= g0)
                                   & (np.mod(s.timestamps.astype(np.int64) - phase, period) < g0 + gl)))


def test_pulsed_g2_zero_on_perfect_source():
    t = np.arange(1, 2001, dtype=np.uint64) * np.uint64(25_000)
    s = TagStream(t, (np.arange(t.size) % 2).astype(np.uint8))
    h = correlate(s, 0, 1, 0.5, 100.0)
    g, err = pulsed_g2_zero(h, 25.0)
    assert g == 0.0
