import math

import numpy as np
import pytest

from eonblock.exact import allocate_candidates, build_state_space
from eonblock.sim import ci_halfwidth, make_rng, pool_results, run_sim
from eonblock.spectrum import candidates
from eonblock.topologies import ring, two_link


def test_zero_load():
    res = run_sim(two_link(10, (3, 4), 0.0), requests=1000)
    assert res.overall == 0.0
    assert all(v == 0 for row in res.blocked for v in row)


def test_reproducible():
    cfg = two_link(6, (2, 3), 1.0, "rf-sc")
    a = run_sim(cfg, requests=20_000, seed=5)
    b = run_sim(cfg, requests=20_000, seed=5)
    assert a.bp == b.bp and a.ci == b.ci and a.overall == b.overall
    c = run_sim(cfg, requests=20_000, seed=6)
    assert c.bp != a.bp
    assert a.rng == "Philox"


def test_counts_and_bounds():
    cfg = ring(3, 7, (3, 4), 1.2, "ff")
    res = run_sim(cfg, requests=30_000, seed=1, batches=10)
    assert res.warmup == 600
    assert sum(map(sum, res.offered)) == 30_000 - 600
    for row_bp, row_ci in zip(res.bp, res.ci):
        for v, h in zip(row_bp, row_ci):
            assert 0.0 <= v <= 1.0 and h >= 0.0
    assert res.batch_offered.shape == (10, 12)


def test_streams_are_independent_and_pool():
    cfg = two_link(6, (2, 3), 1.0)
    parts = [run_sim(cfg, requests=10_000, seed=3, stream=s) for s in range(2)]
    assert parts[0].bp != parts[1].bp
    pooled = pool_results(cfg, parts)
    assert pooled.batches == 60
    assert pooled.requests == 20_000
    blocked = np.add(parts[0].blocked, parts[1].blocked).sum()
    offered = np.add(parts[0].offered, parts[1].offered).sum()
    assert pooled.overall == pytest.approx(blocked / offered)


def test_ci_halfwidth():
    assert ci_halfwidth([0.2] * 12) == 0.0
    with pytest.raises(ValueError):
        ci_halfwidth([0.1, 0.2])
    with pytest.raises(ValueError):
        run_sim(two_link(), requests=100, batches=5)


def test_ci_matches_binomial_oracle():
    p, batches, size = 0.01, 100, 10_000
    rng = make_rng(11)
    means = rng.binomial(size, p, batches) / size
    exact = 1.959963984540054 * math.sqrt(p * (1 - p) / (batches * size))
    assert abs(ci_halfwidth(means) - exact) <= 0.2 * exact


@pytest.mark.parametrize("mode", ["rf", "ff", "rf-sc", "ff-sc"])
def test_sim_allocation_candidates_equal_exact_successors(mode):
    cfg = two_link(6, (2, 3), 1.0, mode)
    space = build_state_space(cfg)
    C = space.capacity
    for state in space.states[:: max(1, len(space) // 100)]:
        masks = []
        for j in range(len(space.links)):
            cells = space.link_cells(state, j)
            masks.append(sum(1 << c for c in range(C) if cells[c] == 0))
        for o, route in enumerate(space.routes):
            for k, width in enumerate(space.widths):
                cand = candidates([masks[j] for j in route], width, C, space.mode)
                expected = allocate_candidates(space, state, o, k)
                n = 0 if cand is None else cand.count()
                assert n == len(expected)


def test_agrees_with_exact_on_small_chain():
    from eonblock.exact import solve_exact

    cfg = two_link(6, (2, 3), 1.0, "ff")
    exact = solve_exact(cfg).overall
    res = run_sim(cfg, requests=200_000, seed=2)
    assert abs(res.overall - exact) <= 3 * res.overall_ci
