import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilmcast.core import PowerSeries
from nilmcast.errors import DataError
from nilmcast.ingestion import CsvSchema, derivative, ingest, load_series, write_series

HEADER = "timestamp,P0,P1,P2,P3,P4,P5\n"


def write(tmp_path, body, header=HEADER):
    p = tmp_path / "m.csv"
    p.write_text(header + body)
    return p


def reference_fill(rows, t0, t1):
    """Scan every second and channel, carrying the last seen value forward."""
    table = {t: vals for t, vals in rows}
    first = []
    for ch in range(6):
        first.append(next(v[ch] for _, v in sorted(rows) if v[ch] is not None))
    out, last = [], list(first)
    for t in range(t0, t1 + 1):
        vals = table.get(t)
        for ch in range(6):
            if vals is not None and vals[ch] is not None:
                last[ch] = vals[ch]
        out.append(list(last))
    return np.array(out, dtype=float)


def test_complete_rows_verbatim(tmp_path):
    p = write(tmp_path, "0,1,2,3,4,5,6\n1,2,3,4,5,6,7\n2,3,4,5,6,7,8\n")
    s = load_series(p)
    assert s.T == 3 and s.start_timestamp == 0
    np.testing.assert_array_equal(s.values[2], [3, 4, 5, 6, 7, 8])


def test_missing_second_takes_last_value(tmp_path):
    p = write(tmp_path, "0,1,2,3,4,5,6\n2,3,4,5,6,7,8\n")
    s, rep = ingest(p)
    assert s.T == 3
    np.testing.assert_array_equal(s.values[1], s.values[0])
    assert rep.filled_samples == 1 and rep.filled_values == 6
    assert rep.missing_percent == pytest.approx(100 * 6 / 18)


def test_leading_missing_channel_back_filled(tmp_path):
    body = "10,,2,3,4,5,6\n11,7,,3,4,5,6\n13,8,9,,4,5,6\n"
    p = write(tmp_path, body)
    rows = [
        (10, [None, 2, 3, 4, 5, 6]),
        (11, [7, None, 3, 4, 5, 6]),
        (13, [8, 9, None, 4, 5, 6]),
    ]
    s = load_series(p)
    assert s.start_timestamp == 10
    np.testing.assert_array_equal(s.values, reference_fill(rows, 10, 13))


def test_duplicate_timestamp_last_wins(tmp_path):
    p = write(tmp_path, "0,1,1,1,1,1,1\n1,2,2,2,2,2,2\n1,3,3,3,3,3,3\n")
    s, rep = ingest(p)
    assert rep.duplicate_timestamps == 1
    np.testing.assert_array_equal(s.values[1], [3] * 6)


def test_custom_schema(tmp_path):
    header = "time,a1,a2,a3,q1,q2,q3\n"
    p = write(tmp_path, "5,1,2,3,4,5,6\n6,1,2,3,4,5,6\n", header)
    s = load_series(p, CsvSchema("time", ("a1", "a2", "a3", "q1", "q2", "q3")))
    assert s.start_timestamp == 5


def test_unparsable_row_reports_line(tmp_path):
    p = write(tmp_path, "0,1,2,3,4,5,6\n1,1,x,3,4,5,6\n")
    with pytest.raises(DataError, match="line 3"):
        load_series(p)


def test_empty_file_and_backwards_time(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_series(p)
    with pytest.raises(DataError):
        load_series(write(tmp_path, ""))
    with pytest.raises(DataError, match="line 3"):
        load_series(write(tmp_path, "5,1,1,1,1,1,1\n4,1,1,1,1,1,1\n"))


def test_write_then_read(tmp_path):
    rng = np.random.default_rng(0)
    s = PowerSeries(np.round(rng.uniform(0, 100, (20, 6)), 3), 1000)
    write_series(s, tmp_path / "s.csv")
    back = load_series(tmp_path / "s.csv")
    np.testing.assert_allclose(back.values, s.values, atol=1e-9)
    assert back.start_timestamp == 1000


def test_derivative_examples():
    d = derivative(PowerSeries(np.full((4, 6), 7.0)))
    assert len(d) == 3 and not d.values.any()
    v = np.zeros((3, 6))
    v[1:, 0] = 5
    np.testing.assert_array_equal(derivative(PowerSeries(v)).total, [5, 0])
    with pytest.raises(ValueError):
        derivative(np.zeros((1, 6)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(2, 200))
def test_cumsum_inverts_derivative(seed, T):
    rng = np.random.default_rng(seed)
    x = rng.integers(-10_000, 10_000, size=(T, 6)).astype(float)
    d = derivative(PowerSeries(x))
    rebuilt = np.vstack([x[:1], x[0] + np.cumsum(d.values, axis=0)])
    np.testing.assert_array_equal(rebuilt, x)
    np.testing.assert_array_equal(d.total, np.diff(x[:, :3].sum(axis=1)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_gaps_match_reference_scan(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    ts = np.sort(rng.choice(np.arange(60), size=n, replace=False))
    rows, lines = [], []
    for t in ts:
        vals = [None if rng.random() < 0.2 else float(rng.integers(0, 100)) for _ in range(6)]
        rows.append((int(t), vals))
        lines.append(",".join([str(t)] + ["" if v is None else str(v) for v in vals]))
    for ch in range(6):
        if all(r[1][ch] is None for r in rows):
            rows[0][1][ch] = 1.0
            parts = lines[0].split(",")
            parts[ch + 1] = "1.0"
            lines[0] = ",".join(parts)
    p = tmp_path_factory.mktemp("gaps") / "g.csv"
    p.write_text(HEADER + "\n".join(lines) + "\n")
    s = load_series(p)
    assert np.all(np.isfinite(s.values))
    np.testing.assert_array_equal(s.values, reference_fill(rows, int(ts[0]), int(ts[-1])))
