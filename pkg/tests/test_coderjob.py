"""Serialized coder-job batches: the boundary for swappable range coders."""

import numpy as np
import pytest

from fcnr.coderjob import (
    DECODE,
    ENCODE,
    JobFormatError,
    parse_jobs,
    parse_results,
    run_reference_jobs,
    serialize_jobs,
)
from fcnr.entropy import EntropyParams, SymbolPlane, build_cdf, quantize_symbols
from fcnr.rangecoder import encode_plane


def _plane(seed, n=200, spread=2.0):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0, 0.3, n)
    b = rng.uniform(0.3, spread, n)
    values = rng.laplace(mu, b)
    symbols = quantize_symbols(values, mu)
    v_min, v_max = int(symbols.min()) - 1, int(symbols.max()) + 1
    table = build_cdf(EntropyParams(mu=mu, b=b), (v_min, v_max))
    plane = SymbolPlane(symbols=symbols, v_min=v_min, v_max=v_max)
    return plane, table


def _encode_job(plane, table):
    return {
        "v_min": plane.v_min,
        "v_max": plane.v_max,
        "cum": table.cum,
        "symbols": plane.symbols,
    }


def test_encode_job_roundtrip():
    planes = [_plane(s, n=50 + s) for s in range(3)]
    blob = serialize_jobs(ENCODE, [_encode_job(p, t) for p, t in planes])
    direction, parsed = parse_jobs(blob)
    assert direction == ENCODE and len(parsed) == 3
    for (plane, table), got in zip(planes, parsed):
        assert np.array_equal(got["symbols"], plane.symbols)
        assert np.array_equal(got["cum"], table.cum)
        assert (got["v_min"], got["v_max"]) == (plane.v_min, plane.v_max)


def test_reference_execution_matches_direct_coder():
    planes = [_plane(s) for s in (7, 8)]
    blob = serialize_jobs(ENCODE, [_encode_job(p, t) for p, t in planes])
    streams = parse_results(run_reference_jobs(blob), ENCODE)
    assert streams == [encode_plane(p, t) for p, t in planes]

    decode_blob = serialize_jobs(
        DECODE,
        [
            {"v_min": p.v_min, "v_max": p.v_max, "cum": t.cum, "stream": s, "count": p.symbols.size}
            for (p, t), s in zip(planes, streams)
        ],
    )
    decoded = parse_results(run_reference_jobs(decode_blob), DECODE)
    for (plane, _), sym in zip(planes, decoded):
        assert np.array_equal(sym, plane.symbols)


def test_empty_plane_job():
    table_cum = np.zeros((0, 3), dtype=np.uint32)
    blob = serialize_jobs(ENCODE, [{"v_min": 0, "v_max": 1, "cum": table_cum,
                                    "symbols": np.zeros(0, np.int64)}])
    streams = parse_results(run_reference_jobs(blob), ENCODE)
    assert len(streams) == 1 and len(streams[0]) == 5  # coder framing only


def test_serialize_validation():
    plane, table = _plane(1)
    with pytest.raises(ValueError):
        serialize_jobs(2, [])
    bad = _encode_job(plane, table)
    bad["symbols"] = plane.symbols + 100  # outside bounds
    with pytest.raises(ValueError, match="bounds"):
        serialize_jobs(ENCODE, [bad])
    narrow = _encode_job(plane, table)
    narrow["v_max"] = plane.v_max + 1  # K no longer matches table width
    with pytest.raises(ValueError, match="K\\+1"):
        serialize_jobs(ENCODE, [narrow])


def test_parse_rejects_malformed_with_offset():
    plane, table = _plane(2)
    blob = serialize_jobs(ENCODE, [_encode_job(plane, table)])
    with pytest.raises(JobFormatError, match="magic"):
        parse_jobs(b"XXXX" + blob[4:])
    with pytest.raises(JobFormatError, match="offset"):
        parse_jobs(blob[: len(blob) // 2])
    with pytest.raises(JobFormatError, match="trailing"):
        parse_jobs(blob + b"\x00")
    corrupt = bytearray(blob)
    corrupt[4] = 9  # direction byte
    with pytest.raises(JobFormatError, match="direction"):
        parse_jobs(bytes(corrupt))


def test_parse_rejects_invalid_table():
    plane, table = _plane(3)
    cum = table.cum.copy()
    cum[0, -1] = 7  # breaks the fixed total
    blob = serialize_jobs(ENCODE, [{**_encode_job(plane, table), "cum": cum}])
    with pytest.raises(JobFormatError, match="table"):
        parse_jobs(blob)


def test_result_roundtrip_and_validation():
    blob = run_reference_jobs(serialize_jobs(ENCODE, [_encode_job(*_plane(4))]))
    with pytest.raises(JobFormatError, match="magic"):
        parse_results(b"YYYY" + blob[4:], ENCODE)
    with pytest.raises(JobFormatError, match="trailing"):
        parse_results(blob + b"\x01", ENCODE)
