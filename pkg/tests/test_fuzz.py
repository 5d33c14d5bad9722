"""Parsers must return a stream or raise FormatError, never anything else."""
import numpy as np
import pytest

from glider_anomaly.data_io import parse_dense, parse_series, parse_sparse
from glider_anomaly.data_io.config import loads_config
from glider_anomaly.data_io.records import format_sparse, parse_events
from glider_anomaly.errors import ConfigurationError, FormatError
from glider_anomaly.simulator import to_sparse_records

N_INPUTS = 10_000

SEEDS = {
    parse_dense: b"#version glider-anomaly/dense 1\n#epoch 2023-03-01T00:00:00Z\nt,x,y,heading\n"
                 b"0.0,1.5,-2.0,0.3\n10.0,3.0,4.0,0.4\n",
    parse_series: b"#version glider-anomaly/series 1\n#meta mode offline\nt,v_l,clle\n0.0,0.2,nan\n10.0,0.21,1.5\n",
    parse_events: b"#version glider-anomaly/events 1\nt,utc,kind,v_l,p_e,detail\n"
                  b"10.0,1970-01-01T00:00:10Z,anomaly,0.1,nan,x\n",
}


def _mutate(rng, data: bytes) -> bytes:
    b = bytearray(data)
    for _ in range(rng.integers(1, 6)):
        op = rng.integers(4)
        pos = int(rng.integers(0, len(b) + 1))
        if op == 0 and b:
            b[min(pos, len(b) - 1)] = int(rng.integers(256))
        elif op == 1:
            b[pos:pos] = bytes(rng.choice(list(b",;#\n.-e9 nan\x00\xff"), rng.integers(1, 4)))
        elif op == 2 and b:
            del b[pos:pos + int(rng.integers(1, 8))]
        else:
            b[pos:pos] = b[: rng.integers(0, 40)]
    return bytes(b)


@pytest.fixture(scope="module")
def corpus(clean_streams):
    sparse = clean_streams[1]
    one = type(sparse)(sparse.records[:3], epoch=sparse.epoch)
    seeds = dict(SEEDS)
    seeds[parse_sparse] = format_sparse(one).encode()
    return seeds


def test_random_bytes_never_crash_parsers(corpus):
    rng = np.random.default_rng(2024)
    parsers = list(corpus)
    outcomes = {"ok": 0, "error": 0}
    for i in range(N_INPUTS):
        parse = parsers[i % len(parsers)]
        if i % 3 == 0:
            data = rng.bytes(int(rng.integers(0, 200)))
        else:
            data = _mutate(rng, corpus[parse])
        try:
            parse(data, path="fuzz")
            outcomes["ok"] += 1
        except FormatError as exc:
            assert str(exc)
            outcomes["error"] += 1
    assert outcomes["ok"] > 0 and outcomes["error"] > 0


def test_random_config_text_never_crashes():
    rng = np.random.default_rng(7)
    base = '{"seed": 2, "detection": {"v_min": 0.1}, "basis": {"n": 4}, "sim": {"duration": 3600}}'
    for _ in range(500):
        text = _mutate(rng, base.encode()).decode("utf-8", errors="replace")
        try:
            loads_config(text)
        except (FormatError, ConfigurationError):
            pass
