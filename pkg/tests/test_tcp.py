"""Loopback-TCP mode: same protocol, real sockets, scaled real time."""

import time
from dataclasses import replace

from continuumsim.domain import TimeMode, TransportKind
from continuumsim.presets import base_config
from continuumsim.tcprun import run_tcp_scenario


def tcp_config(transport, n=5, cloud=True):
    return replace(
        base_config(transport, parallelism=True, cloud_enabled=cloud,
                    dataset_size=n),
        time_mode=TimeMode.WALLCLOCK_TCP,
        time_scale=0.002,
        payload_bytes=8192,
    )


def test_tcp_pubsub_round_trip_exactly_once():
    started = time.monotonic()
    result = run_tcp_scenario(tcp_config(TransportKind.PUBSUB))
    assert time.monotonic() - started < 20.0
    assert result.failure is None
    ids = [rec.image_id for rec in result.records]
    assert len(ids) == len(set(ids)) == 5
    assert all(rec.origin in ("edge", "cloud") for rec in result.records)


def test_tcp_blocking_round_trip_exactly_once():
    result = run_tcp_scenario(tcp_config(TransportKind.BLOCKING_SESSION, cloud=False))
    assert result.failure is None
    assert all(rec.origin == "edge" for rec in result.records)
    assert len(result.records) == 5


def test_tcp_results_match_virtual_mode_outcomes():
    cfg = tcp_config(TransportKind.PUBSUB, n=6)
    tcp = run_tcp_scenario(cfg)
    from continuumsim.nodes import run_scenario
    virtual = run_scenario(replace(cfg, time_mode=TimeMode.VIRTUAL))
    assert tcp.result_multiset == virtual.result_multiset
