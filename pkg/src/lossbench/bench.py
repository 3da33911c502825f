"""Benchmark cells: staged timing with warm-up and repeat protocol.

The four timed stages are CPU stand-ins for a GPU run: ``setup`` (input
validation, buffer allocation), ``kernel`` (transform, quantization and entropy
coding), ``serialize`` (assembling the output object) and ``teardown``
(dropping intermediates). Warm-up runs are executed but never read the clock.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import codec
from .analysis import QualityReport, distortion
from .datamodel import CompressedStream, CompressionConfig, Field

DEFAULT_WARMUP = 10
DEFAULT_RUNS = 10
END_TO_END_RUNS = 5
STAGES = codec.STAGES


class CellError(RuntimeError):
    """A codec failure inside a benchmark cell, tagged with the cell identity."""

    def __init__(self, field_name: str, config: CompressionConfig, cause: BaseException):
        super().__init__(f"cell {field_name} / {config.label}: {type(cause).__name__}: {cause}")
        self.field_name = field_name
        self.config = config


@dataclass(frozen=True)
class TimingRecord:
    stage_times: dict  # stage -> (mean s, std s)
    warmup_runs: int
    measured_runs: int
    throughput: float  # GB/s of original bytes
    total_mean: float
    total_std: float

    def to_dict(self) -> dict:
        return {"stage_times": {k: list(v) for k, v in self.stage_times.items()},
                "warmup_runs": self.warmup_runs, "measured_runs": self.measured_runs,
                "throughput": self.throughput, "total_mean": self.total_mean,
                "total_std": self.total_std}

    @classmethod
    def from_dict(cls, d: dict) -> "TimingRecord":
        return cls({k: tuple(v) for k, v in d["stage_times"].items()}, d["warmup_runs"],
                   d["measured_runs"], d["throughput"], d["total_mean"], d["total_std"])


@dataclass
class BenchRecord:
    field: str
    config: CompressionConfig
    quality: QualityReport
    compress_timing: TimingRecord
    decompress_timing: TimingRecord
    original_bytes: int
    compressed_bytes: int
    stream_sha256: str
    threads: int = 1
    dataset: str = ""
    verdicts: dict = field(default_factory=dict)  # gate name -> GateResult.to_dict()
    stream: Optional[CompressedStream] = field(default=None, repr=False, compare=False)
    recon: Optional[Field] = field(default=None, repr=False, compare=False)

    @property
    def ratio(self) -> float:
        return self.original_bytes / self.compressed_bytes

    @property
    def total_throughput(self) -> float:
        """Original bytes over the mean compress plus decompress time, GB/s."""
        t = self.compress_timing.total_mean + self.decompress_timing.total_mean
        return self.original_bytes / t / 1e9 if t > 0 else math.inf

    @property
    def all_pass(self) -> bool:
        return all(v["verdict"] == "PASS" for v in self.verdicts.values())

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "field": self.field, "config": self.config.to_dict(),
                "quality": self.quality.to_dict(),
                "compress_timing": self.compress_timing.to_dict(),
                "decompress_timing": self.decompress_timing.to_dict(),
                "original_bytes": self.original_bytes, "compressed_bytes": self.compressed_bytes,
                "stream_sha256": self.stream_sha256, "threads": self.threads,
                "verdicts": self.verdicts}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchRecord":
        return cls(d["field"], CompressionConfig.from_dict(d["config"]),
                   QualityReport(**d["quality"]),
                   TimingRecord.from_dict(d["compress_timing"]),
                   TimingRecord.from_dict(d["decompress_timing"]),
                   d["original_bytes"], d["compressed_bytes"], d["stream_sha256"],
                   d.get("threads", 1), d.get("dataset", ""), d.get("verdicts", {}))


def _timed(gen, clock) -> tuple[dict, object]:
    times = {}
    prev = clock()
    while True:
        try:
            stage = next(gen)
        except StopIteration as stop:
            return times, stop.value
        now = clock()
        times[stage] = times.get(stage, 0.0) + (now - prev)
        prev = now


def summarize(runs: list[dict], warmup: int, original_bytes: int) -> TimingRecord:
    """Mean and population std per stage over the measured runs."""
    stages = {s: np.array([r.get(s, 0.0) for r in runs]) for s in STAGES}
    totals = np.array([sum(r.get(s, 0.0) for s in STAGES) for r in runs])
    mean_total = float(totals.mean())
    thr = original_bytes / mean_total / 1e9 if mean_total > 0 else math.inf
    return TimingRecord({s: (float(v.mean()), float(v.std())) for s, v in stages.items()},
                        warmup, len(runs), thr, mean_total, float(totals.std()))


def run_cell(f: Field, config: CompressionConfig, warmup: int = DEFAULT_WARMUP,
             runs: int = DEFAULT_RUNS, clock: Callable[[], float] = time.perf_counter,
             threads: int = 1, dataset: str = "") -> BenchRecord:
    """Warm up, then time ``runs`` compressions and decompressions of ``f``.

    The first timed run's output is canonical; every later timed run must match
    it byte for byte. Quality is measured on the canonical reconstruction.
    """
    if warmup < 0 or runs < 1:
        raise ValueError(f"need warmup >= 0 and runs >= 1, got {warmup}/{runs}")
    try:
        for _ in range(warmup):
            codec.drain(codec.compress_stages(f, config, threads))
        c_runs, stream, blob = [], None, None
        for _ in range(runs):
            t, s = _timed(codec.compress_stages(f, config, threads), clock)
            c_runs.append(t)
            b = s.to_bytes()
            if stream is None:
                stream, blob = s, b
            elif b != blob:
                raise RuntimeError("timed compression output differs between runs")
        for _ in range(warmup):
            codec.drain(codec.decompress_stages(stream, f.name, threads))
        d_runs, recon = [], None
        for _ in range(runs):
            t, r = _timed(codec.decompress_stages(stream, f.name, threads), clock)
            d_runs.append(t)
            if recon is None:
                recon = r
            elif r.values.tobytes() != recon.values.tobytes():
                raise RuntimeError("timed decompression output differs between runs")
        quality = distortion(f, recon, stream)
    except Exception as exc:
        raise CellError(f.name, config, exc) from exc
    return BenchRecord(f.name, config, quality, summarize(c_runs, warmup, f.nbytes),
                       summarize(d_runs, warmup, f.nbytes), f.nbytes, stream.total_bytes,
                       hashlib.sha256(blob).hexdigest(), threads, dataset,
                       stream=stream, recon=recon)


def stage_breakdown(rec: TimingRecord) -> dict:
    """Fraction of the mean total spent in each stage (uniform if nothing was timed)."""
    means = np.array([rec.stage_times.get(s, (0.0, 0.0))[0] for s in STAGES], dtype=np.float64)
    total = means.sum()
    if total <= 0:
        return {s: 1.0 / len(STAGES) for s in STAGES}
    return {s: float(m / total) for s, m in zip(STAGES, means)}


CSV_COLUMNS = ["dataset", "field", "codec", "mode", "param", "original_bytes",
               "compressed_bytes", "ratio", "bitrate", "psnr", "mse", "mre", "max_abs_err",
               "threads", "compress_mean_s", "compress_std_s", "decompress_mean_s",
               "decompress_std_s", "compress_gbps", "decompress_gbps"]


def record_row(rec: BenchRecord) -> dict:
    c = rec.config
    q = rec.quality
    return {"dataset": rec.dataset, "field": rec.field, "codec": c.codec.name, "mode": c.mode.name,
            "param": repr(c.param), "original_bytes": rec.original_bytes,
            "compressed_bytes": rec.compressed_bytes, "ratio": f"{rec.ratio:.6f}",
            "bitrate": f"{q.bitrate:.6f}", "psnr": f"{q.psnr:.6f}", "mse": f"{q.mse:.9g}",
            "mre": f"{q.mre:.9g}", "max_abs_err": f"{q.max_abs_err:.9g}", "threads": rec.threads,
            "compress_mean_s": f"{rec.compress_timing.total_mean:.9g}",
            "compress_std_s": f"{rec.compress_timing.total_std:.9g}",
            "decompress_mean_s": f"{rec.decompress_timing.total_mean:.9g}",
            "decompress_std_s": f"{rec.decompress_timing.total_std:.9g}",
            "compress_gbps": f"{rec.compress_timing.throughput:.6g}",
            "decompress_gbps": f"{rec.decompress_timing.throughput:.6g}"}


def append_csv(path, rec: BenchRecord) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(record_row(rec))
