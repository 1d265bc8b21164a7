"""Stage-timing records, summary statistics, and CSV emission.

The CSV layout is a stable external interface: header and 6-decimal fixed
formatting are bit-exact so repeated runs of a seeded scenario produce
byte-identical files.

Round-trip definitions: a span starts when the first byte of the transfer
(the metadata frame) hits the far-edge uplink and ends when the result lands
back at the far edge. It is reported as ``edge_rtt`` when the edge resolved
the identity locally and as ``cloud_rtt`` when the cloud did.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

CSV_HEADER = ("image_id,t_read_decode,t_quality,t_infer1,t_infer2,"
              "t_detect_total,t_upload,t_identify,edge_rtt,cloud_rtt,"
              "origin,recognized,label")

# Metrics summarized with mean/std. Each is averaged over the records where
# the stage actually ran (see _metric_values).
SUMMARY_METRICS = ("t_read_decode", "t_quality", "t_infer1", "t_infer2",
                   "t_detect_total", "t_upload", "t_identify",
                   "edge_rtt", "cloud_rtt")


class EmptyRecords(ValueError):
    pass


class MismatchedScenarios(ValueError):
    pass


@dataclass
class MetricsRecord:
    """Per-image stage timings plus the identification outcome.

    ``cloud_rtt`` is present iff the result originated at the cloud;
    ``edge_rtt`` is meaningful only for edge-resolved images and is zero
    otherwise. ``completion_s`` orders the CSV but is not emitted.
    """

    image_id: str
    t_read_decode: float = 0.0
    t_quality: float = 0.0
    t_infer1: float = 0.0
    t_infer2: float = 0.0
    t_upload: float = 0.0
    t_identify: float = 0.0
    edge_rtt: float = 0.0
    cloud_rtt: Optional[float] = None
    origin: str = "none"
    recognized: bool = False
    label: Optional[str] = None
    completion_s: float = 0.0
    is_false_positive: bool = False

    @property
    def t_detect_total(self) -> float:
        return self.t_quality + self.t_infer1 + self.t_infer2


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float
    count: int


@dataclass
class RunSummary:
    n_images: int
    total_runtime: float
    throughput: float
    core0_util: float
    core1_util: float
    total_util: float
    stats: dict[str, MetricStats] = field(default_factory=dict)
    fp_count: int = 0


def _sample_std(values: list[float], mean: float) -> float:
    # Sample standard deviation (n-1); zero for a single observation.
    n = len(values)
    if n < 2:
        return 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return var ** 0.5


def _metric_values(records: list[MetricsRecord], metric: str) -> list[float]:
    if metric == "edge_rtt":
        return [r.edge_rtt for r in records if r.origin == "edge"]
    if metric == "cloud_rtt":
        return [r.cloud_rtt for r in records if r.cloud_rtt is not None]
    if metric in ("t_upload", "t_identify"):
        return [getattr(r, metric) for r in records if r.t_upload > 0.0]
    return [getattr(r, metric) for r in records]


def summarize(records: list[MetricsRecord], core_busy: dict[int, float],
              wall: float) -> RunSummary:
    """Aggregate a finished run: arithmetic means, sample standard deviation,
    and per-core utilization as busy time over wall time. Total utilization
    is the arithmetic mean of the two far-edge cores."""
    if not records:
        raise EmptyRecords("cannot summarize an empty run")
    if wall <= 0:
        raise ValueError("wall time must be positive")
    stats = {}
    for metric in SUMMARY_METRICS:
        values = _metric_values(records, metric)
        if values:
            mean = math.fsum(values) / len(values)
            stats[metric] = MetricStats(mean, _sample_std(values, mean), len(values))
        else:
            stats[metric] = MetricStats(0.0, 0.0, 0)
    core0 = core_busy.get(0, 0.0) / wall
    core1 = core_busy.get(1, 0.0) / wall
    return RunSummary(
        n_images=len(records),
        total_runtime=wall,
        throughput=len(records) / wall,
        core0_util=core0,
        core1_util=core1,
        total_util=(core0 + core1) / 2.0,
        stats=stats,
        fp_count=sum(1 for r in records if r.is_false_positive),
    )


@dataclass(frozen=True)
class ComparisonReport:
    runtime_reduction: float
    throughput_gain: float


def compare(base: RunSummary, variant: RunSummary) -> ComparisonReport:
    """Relative change of the variant against the base run."""
    if base.n_images != variant.n_images:
        raise MismatchedScenarios(
            f"dataset sizes differ: {base.n_images} vs {variant.n_images}")
    return ComparisonReport(
        runtime_reduction=(base.total_runtime - variant.total_runtime) / base.total_runtime,
        throughput_gain=(variant.throughput - base.throughput) / base.throughput,
    )


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def emit_csv(records: Iterable[MetricsRecord], path: str | Path) -> int:
    """Write one row per record ordered by completion time then image id;
    returns the number of data rows."""
    rows = sorted(records, key=lambda r: (r.completion_s, r.image_id))
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            r.image_id,
            _fmt(r.t_read_decode),
            _fmt(r.t_quality),
            _fmt(r.t_infer1),
            _fmt(r.t_infer2),
            _fmt(r.t_detect_total),
            _fmt(r.t_upload),
            _fmt(r.t_identify),
            _fmt(r.edge_rtt),
            _fmt(r.cloud_rtt) if r.cloud_rtt is not None else "",
            r.origin,
            "true" if r.recognized else "false",
            r.label or "",
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(rows)


def summary_to_dict(summary: RunSummary) -> dict:
    return {
        "n_images": summary.n_images,
        "total_runtime": summary.total_runtime,
        "throughput": summary.throughput,
        "core0_util": summary.core0_util,
        "core1_util": summary.core1_util,
        "total_util": summary.total_util,
        "fp_count": summary.fp_count,
        "stats": {
            name: {"mean": s.mean, "std": s.std, "count": s.count}
            for name, s in summary.stats.items()
        },
    }


def emit_summary_json(summary: RunSummary, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(summary_to_dict(summary), indent=2) + "\n", encoding="utf-8")
