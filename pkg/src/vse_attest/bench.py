"""Load generation against the shim and broker.

Open-loop: each worker owns one connection and a fixed send schedule
(``rate / connections`` per second, staggered). Latency is measured from the
*scheduled* send time, so a server that falls behind shows queueing delay
instead of silently lowering the offered load.
"""

from __future__ import annotations

import gc
import json
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import psutil

from .broker import BrokerClient
from .errors import AttestError
from .shim import ShimClient
from .state import FULL_SELECTION
from .transport import Connection

SATURATION_P99_US = 10_000.0


@dataclass
class BenchStats:
    op: str
    target_rate: float
    achieved_rate: float
    p50_us: float
    p95_us: float
    p99_us: float
    errors: int
    ops: int = 0
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def percentiles_us(latencies_s) -> tuple[float, float, float]:
    if len(latencies_s) == 0:
        return 0.0, 0.0, 0.0
    p50, p95, p99 = np.percentile(np.asarray(latencies_s) * 1e6, [50, 95, 99])
    return float(p50), float(p95), float(p99)


def make_stats(op, target_rate, latencies, errors, elapsed, **extra) -> BenchStats:
    p50, p95, p99 = percentiles_us(latencies)
    n = len(latencies)
    return BenchStats(
        op, float(target_rate), n / elapsed if elapsed > 0 else 0.0, p50, p95, p99, errors,
        ops=n, duration_s=elapsed, extra=extra,
    )


class _Worker(threading.Thread):
    def __init__(self, op, client: ShimClient, blob: bytes, interval: float, offset: float,
                 start_at: float, stop_at: float, rng_bytes):
        super().__init__(daemon=True)
        self.op, self.client, self.blob = op, client, blob
        self.interval, self.offset = interval, offset
        self.start_at, self.stop_at = start_at, stop_at
        self.rng_bytes = rng_bytes
        self.latencies: list[float] = []
        self.errors = 0

    def run(self):
        measurement = self.rng_bytes(32)
        nonce = self.rng_bytes(32)
        k = 0
        while True:
            scheduled = self.start_at + self.offset + k * self.interval
            if scheduled >= self.stop_at:
                return
            k += 1
            delay = scheduled - time.perf_counter()
            sent = scheduled
            if delay > 0:
                # on schedule: oversleeping is harness jitter, not service time
                time.sleep(delay)
                sent = time.perf_counter()
            try:
                if self.op == "extend":
                    self.blob = self.client.extend(self.blob, k % 24, measurement).encode()
                else:
                    self.client.quote(self.blob, FULL_SELECTION, nonce)
            except (AttestError, OSError):
                self.errors += 1
                continue
            self.latencies.append(time.perf_counter() - sent)


def run_open_loop(op: str, endpoint, blobs, target_rate: float, duration: float, rng_bytes=None) -> BenchStats:
    """Offer ``target_rate`` ops/s of ``op`` for ``duration`` seconds.

    ``blobs`` holds one sealed state per connection; extend workers chain
    their own blob so freshness counters stay consistent, and a list passed
    in is updated with the newest blobs afterwards.
    """
    if op not in ("extend", "quote"):
        raise ValueError(f"unknown op {op!r}")
    if target_rate <= 0 or duration <= 0 or not blobs:
        raise ValueError("rate, duration and connections must be positive")
    if rng_bytes is None:
        import os
        rng_bytes = os.urandom
    n = len(blobs)
    interval = n / target_rate
    clients = []
    errors = 0
    for _ in range(n):
        client = ShimClient(Connection(endpoint, attempts=1))
        try:
            client.caps()  # connect before the clock starts
        except AttestError:
            errors += 1
        clients.append(client)
    start = time.perf_counter() + 0.01
    stop = start + duration
    workers = [
        _Worker(op, c, bytes(b), interval, i * interval / n, start, stop, rng_bytes)
        for i, (c, b) in enumerate(zip(clients, blobs))
    ]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    elapsed = max(time.perf_counter(), stop) - start
    for c in clients:
        c.close()
    if isinstance(blobs, list):
        blobs[:] = [w.blob for w in workers]
    latencies = [x for w in workers for x in w.latencies]
    errors += sum(w.errors for w in workers)
    return make_stats(op, target_rate, latencies, errors, elapsed, connections=n)


def bench_extend(endpoint, blobs, target_rate: float, duration: float, **kw) -> BenchStats:
    return run_open_loop("extend", endpoint, blobs, target_rate, duration, **kw)


def bench_quote(endpoint, blobs, target_rate: float, duration: float, **kw) -> BenchStats:
    return run_open_loop("quote", endpoint, blobs, target_rate, duration, **kw)


def bench_sweep(op: str, endpoint, blobs, rates, duration: float,
                p99_limit_us: float = SATURATION_P99_US, confirm: bool = True, **kw) -> list[BenchStats]:
    """Run increasing rates until p99 exceeds ``p99_limit_us`` (that row is kept).

    With ``confirm`` a rate that trips the limit is run once more and the
    repeat replaces it: one scheduler stall can push p99 of a short window
    over the limit, sustained overload trips it again.
    """
    rows = []
    for rate in sorted(rates):
        stats = run_open_loop(op, endpoint, blobs, rate, duration, **kw)
        if confirm and stats.p99_us > p99_limit_us:
            stats = run_open_loop(op, endpoint, blobs, rate, duration, **kw)
            stats.extra["confirmed"] = True
        rows.append(stats)
        if stats.p99_us > p99_limit_us:
            break
    return rows


def saturation_rate(rows: list[BenchStats], p99_limit_us: float = SATURATION_P99_US) -> float:
    """Highest achieved rate among rows that stayed under the latency limit."""
    ok = [r.achieved_rate for r in rows if r.p99_us <= p99_limit_us]
    return max(ok, default=0.0)


def is_monotone(values, rtol: float = 0.0, atol: float = 0.0) -> bool:
    """Nondecreasing, allowing each value to dip ``rtol``/``atol`` below the running max."""
    peak = -np.inf
    for v in values:
        if v < peak * (1 - rtol) - atol:
            return False
        peak = max(peak, v)
    return True


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def rss_bytes(pid: int | None = None) -> int:
    gc.collect()
    return psutil.Process(pid).memory_info().rss


def bench_spawn(endpoint, credential: bytes, count: int, *, checkpoints=(), coprocessor=None,
                pid: int | None = None) -> BenchStats:
    """Create ``count`` VSEs through the broker, discarding every receipt.

    At each checkpoint (a creation count) the cumulative elapsed time and
    process RSS are recorded; with an in-process ``coprocessor`` the
    counter-table size and retained-object count are recorded too.
    """
    marks = sorted({c for c in checkpoints if 0 < c <= count} | ({count} if count else set()))
    samples = []
    latencies: list[float] = []
    errors = 0
    if count <= 0:
        return make_stats("spawn", 0, latencies, 0, 0.0, count=0, checkpoints=[])
    client = BrokerClient(Connection(endpoint))
    start = time.perf_counter()
    try:
        for i in range(1, count + 1):
            t0 = time.perf_counter()
            try:
                client.create_vse(credential)
                latencies.append(time.perf_counter() - t0)
            except AttestError:
                errors += 1
            if marks and i == marks[0]:
                marks.pop(0)
                elapsed = time.perf_counter() - start
                sample = {"count": i, "elapsed_s": elapsed, "rss_bytes": rss_bytes(pid)}
                if coprocessor is not None:
                    sample["counter_table"] = len(coprocessor.counter_table())
                    sample["retained_objects"] = coprocessor.retained_objects()
                samples.append(sample)
    finally:
        client.close()
    elapsed = time.perf_counter() - start
    return make_stats("spawn", 0, latencies, errors, elapsed, count=count, checkpoints=samples)
