"""Reduced-load blocking approximation on per-link occupancy chains.

Each link is summarised by its number of occupied slices ``x``. Arrivals move
``x -> x + d_k`` at a setup rate thinned by the chance the request fits on the
whole route; departures move ``x -> x - d_k`` at ``mu_k E[n_k | x]``. Links
are treated as independent and the per-link chains are iterated to a fixed
point together with the per-route blocking.

Acceptance of a class-``k`` request on a link in occupancy ``x``:

* ``ees``: non-blocking patterns / all patterns at ``x``.
* ``soc``: ``ees`` plus the fragmentation-blocking share scaled by
  ``exp(-(xbar/C) |ln(x/xbar)|)``, so it depends on the mean occupancy.
* ``uniform``: slices treated as i.i.d. (single-slice patterns); multi-hop
  routes use the hypergeometric overlap of free slices.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, Sequence

import numpy as np
from scipy.stats import hypergeom

from .model import Policy, ScenarioConfig
from .stationary import solve_stationary
from .statecount import (CountTable, _nonblocking_weight, binom, enumerate_macrostates,
                         ff_count_table, rf_count_table)

log = logging.getLogger(__name__)

VARIANTS = ("ees", "soc", "uniform")
FF_ENUMERATION_MAX_C = 20
UNIFORM_NESTED_MAX_HOPS = 2


# -- link acceptance ---------------------------------------------------------

def p_accept_ees(table: CountTable, x: int, k: int) -> float:
    total = table.total[x]
    if total == 0:
        return 0.0
    return table.non_blocking[x][k] / total


def _soc_factor(x: int, xbar: float, C: int) -> float:
    if x == 0:
        return 0.0
    if xbar <= 0:
        return 1.0
    return math.exp(-(xbar / C) * abs(math.log(x / xbar)))


def p_accept_soc(table: CountTable, x: int, k: int, xbar: float) -> float:
    total = table.total[x]
    if total == 0:
        return 0.0
    nb = table.non_blocking[x][k] / total
    fb = table.frag_blocking[x][k] / total
    return nb + fb * _soc_factor(x, xbar, table.capacity)


def ees_array(table: CountTable) -> np.ndarray:
    """``(K, C+1)`` array of EES link acceptance probabilities."""
    C = table.capacity
    out = np.zeros((len(table.widths), C + 1))
    for x in range(C + 1):
        for k in range(len(table.widths)):
            out[k, x] = p_accept_ees(table, x, k)
    return out


def _ratio_arrays(table: CountTable) -> tuple[np.ndarray, np.ndarray]:
    C = table.capacity
    K = len(table.widths)
    nb = np.zeros((K, C + 1))
    fb = np.zeros((K, C + 1))
    for x in range(C + 1):
        tot = table.total[x]
        if tot == 0:
            continue
        for k in range(K):
            nb[k, x] = table.non_blocking[x][k] / tot
            fb[k, x] = table.frag_blocking[x][k] / tot
    return nb, fb


def soc_array(nb: np.ndarray, fb: np.ndarray, xbar: float) -> np.ndarray:
    C = nb.shape[1] - 1
    x = np.arange(C + 1, dtype=float)
    factor = np.zeros(C + 1)
    if xbar <= 0:
        factor[1:] = 1.0
    else:
        # log(x) - log(xbar) avoids overflow when xbar is tiny
        factor[1:] = np.exp(-(xbar / C) * np.abs(np.log(x[1:]) - np.log(xbar)))
    return nb + fb * factor


@lru_cache(maxsize=64)
def uniform_given_free(C: int, widths: tuple) -> np.ndarray:
    """``(K, C+1)`` array: P(some free run >= d_k | n free slices placed uniformly)."""
    out = np.zeros((len(widths), C + 1))
    for k, d in enumerate(widths):
        for n in range(C + 1):
            out[k, n] = _nonblocking_weight(n, C - n, d) / binom(C, n)
    return out


def p_accept_uniform_link_sc(x: int, k: int, C: int, widths: Sequence[int]) -> float:
    """Uniform acceptance on one link with ``x`` occupied slices."""
    d = widths[k]
    num = 0
    for i in range(1, x + 2):
        term = binom(x + 1, i) * binom(C - i * d, x)
        num += term if i % 2 else -term
    return num / binom(C, x)


def uniform_overlap_pmf(occupancy: Sequence[int], C: int) -> np.ndarray:
    """Distribution of the number of slices free on every link of a route.

    Each link's free slices are a uniformly random subset of its size, so
    adding a link thins the current common-free set hypergeometrically.
    """
    pmf = np.zeros(C + 1)
    pmf[C - occupancy[0]] = 1.0
    n = np.arange(C + 1)
    for y in occupancy[1:]:
        nxt = np.zeros(C + 1)
        for i in np.nonzero(pmf)[0]:
            nxt += pmf[i] * hypergeom.pmf(n, C, i, C - y)
        pmf = nxt
    return pmf


def p_accept_uniform_route(occupancy: Sequence[int], k: int, C: int,
                           widths: Sequence[int]) -> float:
    given = uniform_given_free(C, tuple(widths))[k]
    return float(given @ uniform_overlap_pmf(occupancy, C))


@lru_cache(maxsize=16)
def _uniform_pair_table(C: int, widths: tuple) -> np.ndarray:
    """``(K, C+1, C+1)`` array of two-hop uniform acceptance for every (x1, x2)."""
    given = uniform_given_free(C, widths)
    n = np.arange(C + 1)
    out = np.zeros((len(widths), C + 1, C + 1))
    for x1 in range(C + 1):
        # rows: occupancy x2 of the second link, cols: common free count
        pmf = np.nan_to_num(hypergeom.pmf(n[None, :], C, C - x1, C - n[:, None]))
        out[:, x1, :] = given @ pmf.T
    return out


def p_accept_route(occupancy: Sequence[int], mean_occupancy: Sequence[float], k: int,
                   variant: str, sc: bool, table: CountTable) -> float:
    """Route acceptance for a given occupancy vector.

    Product forms: ``prod_i p_link(x_i)`` with conversion, ``(prod_i p_link(x_i))**l``
    without. Uniform without conversion uses the overlap distribution instead.
    """
    C = table.capacity
    hops = len(occupancy)
    if variant == "uniform":
        if not sc:
            return p_accept_uniform_route(occupancy, k, C, table.widths)
        links = [p_accept_uniform_link_sc(x, k, C, table.widths) for x in occupancy]
    elif variant == "ees":
        links = [p_accept_ees(table, x, k) for x in occupancy]
    elif variant == "soc":
        links = [p_accept_soc(table, x, k, xb) for x, xb in zip(occupancy, mean_occupancy)]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    prod = math.prod(links)
    return prod if sc else prod ** hops


# -- rates and per-link chains -----------------------------------------------

def valid_occupancies(C: int, widths: Sequence[int]) -> list[int]:
    return [x for x in range(C + 1) if enumerate_macrostates(C, widths, x)]


@lru_cache(maxsize=64)
def _mean_connections(C: int, widths: tuple) -> np.ndarray:
    out = np.zeros((len(widths), C + 1))
    for x in range(C + 1):
        macro = enumerate_macrostates(C, widths, x)
        if macro:
            out[:, x] = np.mean(np.asarray(macro, dtype=float), axis=0)
    return out


def departure_rates(C: int, widths: Sequence[int], mus: Sequence[float]) -> np.ndarray:
    """``(K, C+1)`` array ``gamma_k(x) = mu_k * mean_n n_k`` over macrostates at ``x``."""
    return _mean_connections(C, tuple(widths)) * np.asarray(mus, dtype=float)[:, None]


def reduced_gbe_solve(alpha: np.ndarray, gamma: np.ndarray, widths: Sequence[int],
                      valid: Sequence[int] | None = None, tolerance: float = 1e-10) -> np.ndarray:
    """Stationary occupancy distribution of one link (length ``C+1``, zero off ``valid``)."""
    K, size = alpha.shape
    C = size - 1
    if valid is None:
        valid = valid_occupancies(C, widths)
    pos = {x: i for i, x in enumerate(valid)}
    Q = np.zeros((len(valid), len(valid)))
    for x, i in pos.items():
        for k, d in enumerate(widths):
            if x + d <= C and alpha[k, x] > 0:
                Q[i, pos[x + d]] += alpha[k, x]
            if x - d >= 0 and gamma[k, x] > 0:
                Q[i, pos[x - d]] += gamma[k, x]
    Q -= np.diag(Q.sum(axis=1))
    pi_valid = solve_stationary(Q, tolerance)
    pi = np.zeros(size)
    pi[list(valid)] = pi_valid
    return pi


@dataclass
class LinkModels:
    """Current iterate for every link: occupancy distribution and its mean."""

    pi: np.ndarray  # (L, C+1)
    xbar: np.ndarray  # (L,)


class AcceptanceModel:
    """Link and route acceptance for one scenario and approximation variant."""

    def __init__(self, config: ScenarioConfig, variant: str, table: CountTable | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.config = config
        self.variant = variant
        self.sc = config.mode.spectrum_conversion
        C = config.capacity
        widths = config.widths
        self.table = table if table is not None else count_table_for(config)
        self.nb, self.fb = _ratio_arrays(self.table)
        self.ees = self.nb.copy()
        self.uniform_link = uniform_given_free(C, widths)[:, ::-1]  # index by occupancy

    def link_arrays(self, xbar: np.ndarray) -> np.ndarray:
        """``(L, K, C+1)`` link acceptance per link."""
        L = len(xbar)
        if self.variant == "ees":
            return np.broadcast_to(self.ees, (L,) + self.ees.shape)
        if self.variant == "soc":
            return np.stack([soc_array(self.nb, self.fb, xb) for xb in xbar])
        return np.broadcast_to(self.uniform_link, (L,) + self.uniform_link.shape)

    def nested(self, hops: int) -> bool:
        return self.variant == "uniform" and not self.sc and 1 < hops <= UNIFORM_NESTED_MAX_HOPS


def count_table_for(config: ScenarioConfig, ff_max_c: int = FF_ENUMERATION_MAX_C) -> CountTable:
    """RF closed-form counts, or enumerated FF counts when ``C`` is small enough."""
    C = config.capacity
    widths = config.widths
    if config.mode.policy is Policy.FF and C <= ff_max_c:
        return ff_count_table(C, widths)
    return rf_count_table(C, widths)


def _route_factors(model: AcceptanceModel, links: LinkModels, P: np.ndarray):
    """Per OD pair and class: per-link factor arrays ``f_i(x)`` and their
    expectations ``E_i = sum_x pi_i(x) f_i(x)`` for product-form routes."""
    out = []
    for od in model.config.od_pairs:
        route = od.route
        power = 1 if model.sc else len(route)
        per_class = []
        for k in range(model.config.num_classes):
            f = [P[j, k] ** power for j in route]
            e = [float(links.pi[j] @ fj) for j, fj in zip(route, f)]
            per_class.append((f, e))
        out.append(per_class)
    return out


def setup_rates(model: AcceptanceModel, links: LinkModels, P: np.ndarray | None = None) -> np.ndarray:
    """``(L, K, C+1)`` setup rates: arrivals of every route through the link,
    thinned by the chance they fit given the link's own occupancy."""
    config = model.config
    C = config.capacity
    L = len(config.topology.links)
    K = config.num_classes
    if P is None:
        P = model.link_arrays(links.xbar)
    alpha = np.zeros((L, K, C + 1))
    pair = _uniform_pair_table(C, config.widths) if model.variant == "uniform" and not model.sc else None
    factors = _route_factors(model, links, P)
    for o, od in enumerate(config.od_pairs):
        route = od.route
        for k in range(K):
            lam = od.arrival_rates[k]
            if lam == 0:
                continue
            if model.nested(len(route)):
                a, b = route
                alpha[a, k] += lam * (pair[k] @ links.pi[b])
                alpha[b, k] += lam * (pair[k].T @ links.pi[a])
                continue
            f, e = factors[o][k]
            for i, j in enumerate(route):
                others = math.prod(e[:i] + e[i + 1:])
                alpha[j, k] += lam * f[i] * others
    return alpha


def network_blocking(model: AcceptanceModel, links: LinkModels, P: np.ndarray | None = None):
    """Per-(o, k) blocking ``1 - P(route fits)`` and the rate-weighted overall value."""
    config = model.config
    K = config.num_classes
    if P is None:
        P = model.link_arrays(links.xbar)
    pair = (_uniform_pair_table(config.capacity, config.widths)
            if model.variant == "uniform" and not model.sc else None)
    factors = _route_factors(model, links, P)
    bp = np.zeros((len(config.od_pairs), K))
    for o, od in enumerate(config.od_pairs):
        for k in range(K):
            if model.nested(len(od.route)):
                a, b = od.route
                ok = float(links.pi[a] @ pair[k] @ links.pi[b])
            else:
                ok = math.prod(factors[o][k][1])
            bp[o, k] = min(max(1.0 - ok, 0.0), 1.0)
    lam = np.array([od.arrival_rates for od in config.od_pairs], dtype=float)
    bp = np.where(lam > 0, bp, 0.0)  # streams without traffic report 0, as in the exact engine
    total = lam.sum()
    overall = float((lam * bp).sum() / total) if total > 0 else 0.0
    return bp, overall


@dataclass
class FixedPointReport:
    iterations: int
    max_delta: float
    converged: bool
    bp: list  # per OD, per class
    overall: float
    pi: np.ndarray
    xbar: np.ndarray
    damped: bool = False
    runtime_s: float = 0.0
    trace: list = field(default_factory=list)


def initial_rates(config: ScenarioConfig) -> np.ndarray:
    C = config.capacity
    L = len(config.topology.links)
    alpha = np.zeros((L, config.num_classes, C + 1))
    for od in config.od_pairs:
        for j in od.route:
            for k, d in enumerate(config.widths):
                alpha[j, k, :C - d + 1] += od.arrival_rates[k]
    return alpha


def fixed_point(config: ScenarioConfig, variant: str | None = None, *,
                epsilon: float | None = None, max_iters: int | None = None,
                table: CountTable | None = None, damping: float = 0.5) -> FixedPointReport:
    """Iterate per-link occupancy chains and route blocking to a fixed point.

    Starts from unthinned setup rates and ``xbar = C/2``; each round solves
    every link chain, refreshes ``xbar`` and the setup rates, and recomputes
    blocking, stopping once no per-(o, k) value moves by ``epsilon`` or more.
    Setup-rate updates are damped once the blocking change alternates sign
    for three rounds in a row.
    """
    t0 = time.perf_counter()
    variant = (variant or config.variant).lower()
    epsilon = config.epsilon if epsilon is None else epsilon
    max_iters = config.max_iters if max_iters is None else max_iters
    model = AcceptanceModel(config, variant, table)
    C = config.capacity
    L = len(config.topology.links)
    widths = config.widths
    valid = valid_occupancies(C, widths)
    gamma = departure_rates(C, widths, config.mus)
    used = sorted({j for od in config.od_pairs for j in od.route})

    alpha = initial_rates(config)
    xbar = np.full(L, C / 2.0)
    pi = np.zeros((L, C + 1))
    pi[:, 0] = 1.0
    bp_hat = np.zeros((len(config.od_pairs), config.num_classes))
    signs: list[int] = []
    damped = False
    trace = []
    delta = float("inf")
    overall = 0.0
    it = 0
    converged = False
    xs = np.arange(C + 1)
    for it in range(1, max_iters + 1):
        for j in used:
            pi[j] = reduced_gbe_solve(alpha[j], gamma, widths, valid, config.solver_tolerance)
        xbar = pi @ xs
        links = LinkModels(pi, xbar)
        P = model.link_arrays(xbar)
        new_alpha = setup_rates(model, links, P)
        bp, overall = network_blocking(model, links, P)
        diff = bp - bp_hat
        delta = float(np.max(np.abs(diff))) if diff.size else 0.0
        trace.append({"iteration": it, "max_delta": delta, "xbar": xbar[used].tolist()})

        if delta > 0:
            signs.append(int(np.sign(diff.flat[int(np.argmax(np.abs(diff)))])))
        if not damped and len(signs) >= 3 and signs[-1] == -signs[-2] == signs[-3]:
            damped = True
            log.debug("blocking oscillates at iteration %d; damping setup rates", it)
        alpha = (1 - damping) * alpha + damping * new_alpha if damped else new_alpha

        if delta < epsilon:
            converged = True
            break
        bp_hat = bp

    if not converged:
        log.warning("fixed point did not converge in %d iterations (delta %.3e)", it, delta)
    return FixedPointReport(
        iterations=it, max_delta=delta, converged=converged,
        bp=bp.tolist(), overall=overall, pi=pi, xbar=xbar, damped=damped,
        runtime_s=time.perf_counter() - t0, trace=trace,
    )


def write_trace_csv(report: FixedPointReport, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["iteration", "max_delta", "xbar"])
    for row in report.trace:
        writer.writerow([row["iteration"], f"{row['max_delta']:.6e}",
                         " ".join(f"{v:.6g}" for v in row["xbar"])])
