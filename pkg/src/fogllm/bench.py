"""Inference speed measurement: time to first token and tokens per second.

TTFT runs from the moment the request is handed to the platform to the first
streamed text delta. Throughput is the number of emitted deltas divided by
the interval between the first and last delta, so it excludes TTFT. Each
prompt is run several times (five by default) and reported as mean and
sample standard deviation.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

from .errors import BackendError, BenchFailed
from .messages import Message
from .runtime import Platform
from .wire import ChatRequest

DEFAULT_RUNS = 5


@dataclass(frozen=True)
class RunSample:
    ttft_ms: float
    tokens: int
    tokens_per_second: float


@dataclass(frozen=True)
class BenchReport:
    platform_kind: str
    model_id: str
    runs: int
    prompt: str
    ttft_ms_mean: float
    ttft_ms_stddev: float
    tokens_per_second_mean: float
    tokens_per_second_stddev: float
    samples: tuple[RunSample, ...] = field(default=())

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["samples"] = [asdict(s) for s in self.samples]
        return d


def measure(platform: Platform, request: ChatRequest, clock=time.perf_counter) -> RunSample:
    """Stream one request and time it."""
    sent = clock()
    first = last = None
    tokens = 0
    chunks = platform.stream(request)
    try:
        for chunk in chunks:
            if chunk.delta_content:
                now = clock()
                if first is None:
                    first = now
                last = now
                tokens += 1
    finally:
        close = getattr(chunks, "close", None)
        if close is not None:
            close()
    if tokens < 2 or last <= first:
        raise BackendError(f"need at least two timed deltas to measure throughput, got {tokens}")
    return RunSample((first - sent) * 1000.0, tokens, tokens / (last - first))


def _spread(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    return mean, statistics.stdev(values) if len(values) > 1 else 0.0


def summarize(platform_kind: str, model_id: str, prompt: str, samples: list[RunSample]) -> BenchReport:
    ttft = _spread([s.ttft_ms for s in samples])
    tps = _spread([s.tokens_per_second for s in samples])
    return BenchReport(platform_kind, model_id, len(samples), prompt, *ttft, *tps, tuple(samples))


def run_bench(
    platform: Platform,
    model_id: str,
    prompt: str,
    runs: int = DEFAULT_RUNS,
    *,
    max_tokens: int | None = None,
    temperature: float = 1.0,
) -> BenchReport:
    """Run ``prompt`` ``runs`` times. Any failed run aborts the whole bench."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    platform.prepare()  # discovery and model loading are not part of TTFT
    request = ChatRequest(model_id, [Message.user(prompt)], temperature, True, None, max_tokens)
    samples = []
    for i in range(runs):
        try:
            samples.append(measure(platform, request))
        except Exception as exc:
            raise BenchFailed(i, exc) from exc
    return summarize(platform.descriptor.kind.value, model_id, prompt, samples)


def format_report(report: BenchReport) -> str:
    lines = [
        f"platform          {report.platform_kind}",
        f"model             {report.model_id}",
        f"runs              {report.runs}",
        f"ttft_ms           {report.ttft_ms_mean:.1f} ± {report.ttft_ms_stddev:.1f}",
        f"tokens_per_second {report.tokens_per_second_mean:.2f} ± {report.tokens_per_second_stddev:.2f}",
    ]
    return "\n".join(lines)
