"""Network builders shared by the test modules."""

import numpy as np

from swapdyn.network import FlowState, Network, build_network


def parallel_network(demand=90.0, t0=(10.0, 10.0), cap=(40.0, 40.0)) -> Network:
    """One OD pair served by two single-link routes."""
    return build_network(
        links=[("a", t0[0], cap[0]), ("b", t0[1], cap[1])],
        od_pairs=[("w", demand)],
        routes=[("r1", "w", ["a"]), ("r2", "w", ["b"])],
    )


def random_network(rng: np.random.Generator, max_routes: int = 6) -> Network:
    """Small random route-based network: 1-2 OD pairs, routes drawn over a shared link pool."""
    n_links = int(rng.integers(2, 8))
    links = [(f"l{i}", float(rng.uniform(1, 10)), float(rng.uniform(10, 60))) for i in range(n_links)]
    n_od = int(rng.integers(1, 3))
    n_routes = int(rng.integers(n_od, max_routes + 1))
    ods = [(f"w{j}", float(rng.uniform(10, 100))) for j in range(n_od)]
    routes = []
    for r in range(n_routes):
        od = f"w{r % n_od}"
        k = int(rng.integers(1, min(3, n_links) + 1))
        chosen = rng.choice(n_links, size=k, replace=False)
        routes.append((f"r{r}", od, [f"l{i}" for i in sorted(chosen)]))
    return build_network(links, ods, routes)


def random_feasible(net: Network, rng: np.random.Generator, day: int = 0) -> FlowState:
    f = np.zeros(len(net.routes))
    for d, pos in zip(net.demands, net.od_blocks):
        f[pos] = rng.dirichlet(np.ones(len(pos))) * d
    return FlowState(f, day)
