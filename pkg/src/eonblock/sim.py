"""Discrete-event simulation of the network with Poisson arrivals and
exponential holding times.

Arrivals of all (OD, class) streams are superposed into one Poisson clock at
the total rate; the stream of each arrival is drawn categorically. Placement
uses :func:`eonblock.spectrum.candidates`, the rule the exact engine uses, so
both engines agree on which placements are admissible. Blocked requests are
lost.

Estimates come from batch means: a warm-up share of requests is discarded
and the rest is split into equal batches by request count.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import Policy, ScenarioConfig
from .spectrum import block_mask, candidates

DEFAULT_BATCHES = 30
DEFAULT_WARMUP = 0.02
MIN_BATCHES = 10
Z95 = 1.959963984540054
_CHUNK = 1 << 16


def ci_halfwidth(batch_values) -> float:
    """95% normal-approximation half-width of the mean of batch values."""
    values = np.asarray(batch_values, dtype=float)
    if values.ndim != 1 or len(values) < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches, got {values.size}")
    if np.ptp(values) == 0:
        return 0.0
    return float(Z95 * values.std(ddof=1) / math.sqrt(len(values)))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator on sub-stream ``stream`` of ``seed``; distinct streams
    are independent, which makes parallel replications safe."""
    child = np.random.SeedSequence(seed).spawn(stream + 1)[stream]
    return np.random.Generator(np.random.Philox(child))


@dataclass
class SimResult:
    bp: list  # per OD, per class
    overall: float
    ci: list  # 95% half-widths, same shape as bp (nan when a stream is too sparse)
    overall_ci: float
    requests: int
    seed: int
    rng: str
    warmup: int = 0
    batches: int = DEFAULT_BATCHES
    runtime_s: float = 0.0
    offered: list = field(default_factory=list)  # post-warm-up, per OD and class
    blocked: list = field(default_factory=list)
    batch_offered: np.ndarray | None = None  # (batches, streams)
    batch_blocked: np.ndarray | None = None

    def meta(self) -> dict:
        return {
            "requests": self.requests, "seed": self.seed, "rng": self.rng,
            "warmup": self.warmup, "batches": self.batches, "overall_ci": self.overall_ci,
            "ci": self.ci,
        }


def _summarise(config: ScenarioConfig, batch_offered: np.ndarray, batch_blocked: np.ndarray,
               **info) -> SimResult:
    K = config.num_classes
    n_od = len(config.od_pairs)
    offered = batch_offered.sum(axis=0)
    blocked = batch_blocked.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        bp = np.where(offered > 0, blocked / np.maximum(offered, 1), 0.0)
        ratios = batch_blocked / np.where(batch_offered > 0, batch_offered, np.nan)
    ci = np.zeros(len(offered))
    for c in range(len(offered)):
        if offered[c] == 0:
            continue
        col = ratios[:, c]
        col = col[np.isfinite(col)]
        ci[c] = ci_halfwidth(col) if len(col) >= MIN_BATCHES else math.nan

    tot_off = batch_offered.sum(axis=1)
    tot_blk = batch_blocked.sum(axis=1)
    overall = float(blocked.sum() / offered.sum()) if offered.sum() > 0 else 0.0
    if tot_off.sum() == 0:
        overall_ci = 0.0
    else:
        per_batch = tot_blk[tot_off > 0] / tot_off[tot_off > 0]
        overall_ci = ci_halfwidth(per_batch) if len(per_batch) >= MIN_BATCHES else math.nan
    shape = (n_od, K)
    return SimResult(
        bp=bp.reshape(shape).tolist(), overall=overall, ci=ci.reshape(shape).tolist(),
        overall_ci=float(overall_ci), offered=offered.reshape(shape).astype(int).tolist(),
        blocked=blocked.reshape(shape).astype(int).tolist(),
        batch_offered=batch_offered, batch_blocked=batch_blocked, **info,
    )


def run_sim(config: ScenarioConfig, *, requests: int | None = None, seed: int | None = None,
            stream: int = 0, batches: int = DEFAULT_BATCHES,
            warmup: float = DEFAULT_WARMUP) -> SimResult:
    """Simulate ``requests`` arrivals and estimate per-(o, k) and overall blocking.

    Deterministic for fixed ``(seed, stream)``. Defaults come from the config.
    """
    t0 = time.perf_counter()
    requests = config.requests if requests is None else int(requests)
    seed = config.seed if seed is None else int(seed)
    if batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches, got {batches}")
    rng = make_rng(seed, stream)
    rng_name = type(rng.bit_generator).__name__

    C = config.capacity
    K = config.num_classes
    mode = config.mode
    first_fit = mode.policy is Policy.FF
    rates = np.array([od.arrival_rates for od in config.od_pairs], dtype=float).ravel()
    n_streams = len(rates)
    total_rate = float(rates.sum())
    warm = int(math.ceil(warmup * requests))
    per_batch = (requests - warm) // batches
    batch_offered = np.zeros((batches, n_streams), dtype=np.int64)
    batch_blocked = np.zeros((batches, n_streams), dtype=np.int64)
    info = dict(requests=requests, seed=seed, rng=rng_name, warmup=warm, batches=batches)
    if total_rate == 0.0 or requests == 0 or per_batch == 0:
        return _summarise(config, batch_offered, batch_blocked,
                          runtime_s=time.perf_counter() - t0, **info)

    # per-stream static data: route, width, holding rate, block template
    streams = []
    for od in config.od_pairs:
        for k, cls in enumerate(config.classes):
            streams.append((od.route, cls.d, cls.mu, block_mask(0, cls.d)))
    cum = np.cumsum(rates / total_rate)
    cum[-1] = 1.0

    masks = [(1 << C) - 1] * len(config.topology.links)
    heap: list = []
    seq = 0
    now = 0.0
    offered = [0] * n_streams
    blocked = [0] * n_streams
    done = 0
    batch = -1
    next_boundary = warm

    while done < requests:
        n = min(_CHUNK, requests - done)
        gaps = (rng.standard_exponential(n) / total_rate).tolist()
        picks = np.searchsorted(cum, rng.random(n), side="right").tolist()
        holds = rng.standard_exponential(n).tolist()
        choice = rng.random(n).tolist()
        for i in range(n):
            if done == next_boundary:
                if batch >= 0:
                    batch_offered[batch] = offered
                    batch_blocked[batch] = blocked
                batch += 1
                offered = [0] * n_streams
                blocked = [0] * n_streams
                next_boundary = requests if batch == batches - 1 else next_boundary + per_batch
            done += 1
            now += gaps[i]
            while heap and heap[0][0] <= now:
                _, _, route, starts, bm = heapq.heappop(heap)
                for j, s in zip(route, starts):
                    masks[j] |= bm << s
            c = picks[i]
            route, width, mu, bm = streams[c]
            offered[c] += 1
            cand = candidates([masks[j] for j in route], width, C, mode)
            if cand is None:
                blocked[c] += 1
                continue
            if cand.aligned:
                opts = cand.starts[0]
                s = opts[0] if first_fit else opts[int(choice[i] * len(opts))]
                starts = (s,) * len(route)
            else:
                # uniform over the product: mixed-radix split of one draw
                idx = int(choice[i] * cand.count())
                picked = []
                for opts in reversed(cand.starts):
                    idx, r = divmod(idx, len(opts))
                    picked.append(opts[r])
                starts = tuple(reversed(picked))
            for j, s in zip(route, starts):
                masks[j] &= ~(bm << s)
            seq += 1
            heapq.heappush(heap, (now + holds[i] / mu, seq, route, starts, bm))
    if batch >= 0:
        batch_offered[batch] = offered
        batch_blocked[batch] = blocked
    return _summarise(config, batch_offered, batch_blocked,
                      runtime_s=time.perf_counter() - t0, **info)


def pool_results(config: ScenarioConfig, results: list[SimResult]) -> SimResult:
    """Merge replications run on distinct streams by pooling their batches."""
    if not results:
        raise ValueError("nothing to pool")
    offered = np.vstack([r.batch_offered for r in results])
    blocked = np.vstack([r.batch_blocked for r in results])
    first = results[0]
    return _summarise(
        config, offered, blocked,
        requests=sum(r.requests for r in results), seed=first.seed, rng=first.rng,
        warmup=sum(r.warmup for r in results), batches=offered.shape[0],
        runtime_s=sum(r.runtime_s for r in results),
    )
