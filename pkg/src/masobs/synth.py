"""Random graph and model generators for property tests and demos.

Every generator takes a numpy Generator so callers own the seeding.  Models
come out satisfying the structural assumptions by construction: interaction
edges follow one shared ordering and diagonal observation pairs are resampled
until observable.
"""

from __future__ import annotations

import numpy as np

from .graphs import DirectedGraph
from .localization import SensingGraph
from .mas import MasModel, is_observable


def random_digraph(rng, m, density=0.3) -> DirectedGraph:
    """Arbitrary directed graph (possibly disconnected, possibly cyclic)."""
    w = (rng.random((m, m)) < density).astype(float)
    np.fill_diagonal(w, 0.0)
    return DirectedGraph(w)


def random_strongly_connected(rng, m, extra=0.3) -> DirectedGraph:
    """Directed cycle through a random permutation plus extra random edges."""
    perm = rng.permutation(m) + 1
    edges = {(int(perm[i]), int(perm[(i + 1) % m])) for i in range(m)} if m > 1 else set()
    for src in range(1, m + 1):
        for dst in range(1, m + 1):
            if src != dst and rng.random() < extra:
                edges.add((src, dst))
    return DirectedGraph.from_edges(m, edges)


def random_not_strongly_connected(rng, m, extra=0.3) -> DirectedGraph:
    """Two internally connected groups with one-way edges between them."""
    if m < 2:
        raise ValueError("need at least two nodes to break strong connectivity")
    cut = int(rng.integers(1, m))
    first = list(range(1, cut + 1))
    second = list(range(cut + 1, m + 1))
    edges = set()
    for group in (first, second):
        for i in range(len(group)):
            if len(group) > 1:
                edges.add((group[i], group[(i + 1) % len(group)]))
    for src in first:
        for dst in second:
            if rng.random() < max(extra, 0.2):
                edges.add((src, dst))
    edges.add((first[0], second[0]))  # guarantee one forward bridge
    return DirectedGraph.from_edges(m, edges)


def random_connected_undirected(rng, m, extra=0.2) -> DirectedGraph:
    """Random spanning tree plus extra symmetric edges, binary weights."""
    w = np.zeros((m, m))
    order = rng.permutation(m)
    for idx in range(1, m):
        a = order[idx]
        b = order[int(rng.integers(0, idx))]
        w[a, b] = w[b, a] = 1.0
    for a in range(m):
        for b in range(a + 1, m):
            if w[a, b] == 0.0 and rng.random() < extra:
                w[a, b] = w[b, a] = 1.0
    return DirectedGraph(w)


def random_dag_pair(rng, m, density=0.35):
    """Dynamics/sensing edge sets sharing the identity topological ordering."""
    def draw():
        return {(j, i) for j in range(1, m + 1) for i in range(j + 1, m + 1)
                if rng.random() < density}
    return draw(), draw()


def random_observable_pair(rng, n, p):
    """Gaussian (A, C) with an observable pair, by rejection."""
    while True:
        a = rng.standard_normal((n, n))
        c = rng.standard_normal((p, n))
        if is_observable(a, c):
            return a, c


def random_mas_model(rng, m=None, max_agents=5, max_state=3, density=0.35,
                     comm_extra=0.3, unstable_diagonals=False,
                     strongly_connected=True) -> MasModel:
    """Random model satisfying node observability and ordering consistency.

    With ``unstable_diagonals`` every A_ii is shifted until its rightmost
    eigenvalue is at least +0.25, which the stabilizability converse needs.
    """
    if m is None:
        m = int(rng.integers(2, max_agents + 1))
    dims = [int(rng.integers(1, max_state + 1)) for _ in range(m)]
    a_diag = []
    c_diag = []
    for i in range(m):
        n_i = dims[i]
        p_i = int(rng.integers(1, n_i + 1))
        a, c = random_observable_pair(rng, n_i, p_i)
        if unstable_diagonals:
            shift = 0.25 - np.max(np.linalg.eigvals(a).real)
            if shift > 0:
                a = a + shift * np.eye(n_i)
        a_diag.append(a)
        c_diag.append(c)
    s_edges, o_edges = random_dag_pair(rng, m, density)

    def coupling(n_i, n_j):
        while True:
            block = rng.standard_normal((n_i, n_j))
            if np.any(block != 0.0):
                return block

    a_cpl = {(i, j): coupling(dims[i - 1], dims[j - 1]) for (j, i) in s_edges}
    c_cpl = {(i, j): rng.standard_normal((c_diag[i - 1].shape[0], dims[j - 1]))
             for (j, i) in o_edges}
    gc = (random_strongly_connected(rng, m, comm_extra) if strongly_connected
          else random_not_strongly_connected(rng, m, comm_extra))
    return MasModel.build(a_diag, c_diag, communication=gc,
                          a_couplings=a_cpl, c_couplings=c_cpl)


def random_sensing_graph(rng, m, extra=0.25, anchor_prob=0.3, connected=True,
                         ensure_no_sources=True) -> SensingGraph:
    """Random sensing scenario over unordered pairs with random ownership.

    With ``connected`` the pair skeleton is a spanning tree plus extras and
    at least one anchor exists; with ``ensure_no_sources`` ownership is
    repaired so every agent holds at least one measurement.
    """
    pairs = set()
    if connected and m > 1:
        order = rng.permutation(m) + 1
        for idx in range(1, m):
            a = int(order[idx])
            b = int(order[int(rng.integers(0, idx))])
            pairs.add((min(a, b), max(a, b)))
    for a in range(1, m + 1):
        for b in range(a + 1, m + 1):
            if (a, b) not in pairs and rng.random() < extra:
                pairs.add((a, b))
    edges = []
    for a, b in sorted(pairs):
        if rng.random() < 0.5:
            edges.append((a, b))  # b owns the pair
        else:
            edges.append((b, a))
    anchors = [k for k in range(1, m + 1) if rng.random() < anchor_prob]
    if connected and not anchors:
        anchors = [int(rng.integers(1, m + 1))]
    if ensure_no_sources:
        counts = {i: 0 for i in range(1, m + 1)}
        for _, dst in edges:
            counts[dst] += 1
        for k in anchors:
            counts[k] += 1
        for agent in range(1, m + 1):
            if counts[agent] > 0:
                continue
            flipped = False
            for idx, (src, dst) in enumerate(edges):
                # steal a pair the current owner can spare
                if src == agent and counts[dst] >= 2:
                    edges[idx] = (dst, src)
                    counts[agent] += 1
                    counts[dst] -= 1
                    flipped = True
                    break
            if not flipped:
                anchors.append(agent)
                counts[agent] += 1
    return SensingGraph(m, tuple(edges), tuple(sorted(anchors)))
