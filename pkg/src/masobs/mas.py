"""Coupled linear multi-agent plant: block matrices plus interaction graphs.

The plant is a set of m linear subsystems

    dx_i/dt = A_ii x_i + sum_j A_ij x_j + B_ii u_i
    y_i     = C_ii x_i + sum_j C_ij x_j

where the state-coupling sums run over in-neighbors in the dynamics graph
and the output-coupling sums over in-neighbors in the sensing graph.  Blocks
are stored sparsely: an off-diagonal block exists exactly when the matching
edge does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

import numpy as np

from . import graphs
from .errors import AssumptionError, CycleError, DimensionError
from .graphs import DirectedGraph

RANK_REL_TOL = 1e-9


def _freeze(arr) -> np.ndarray:
    a = np.array(arr, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MasModel:
    """Immutable description of the coupled plant and its three graphs."""

    a_blocks: "MappingProxyType"
    b_blocks: "MappingProxyType"
    c_blocks: "MappingProxyType"
    dynamics_graph: DirectedGraph
    sensing_graph: DirectedGraph
    communication_graph: DirectedGraph

    def __post_init__(self):
        a = {k: _freeze(v) for k, v in dict(self.a_blocks).items()}
        b = {k: _freeze(v) for k, v in dict(self.b_blocks).items()}
        c = {k: _freeze(v) for k, v in dict(self.c_blocks).items()}
        object.__setattr__(self, "a_blocks", MappingProxyType(a))
        object.__setattr__(self, "b_blocks", MappingProxyType(b))
        object.__setattr__(self, "c_blocks", MappingProxyType(c))
        self._validate()

    # -- construction -------------------------------------------------

    @classmethod
    def build(cls, a_diag, c_diag, communication, b_diag=None,
              a_couplings=None, c_couplings=None):
        """Assemble a model from per-agent blocks and coupling maps.

        ``a_diag``/``c_diag``/``b_diag`` are sequences indexed by agent
        (agent i at position i-1).  Couplings are mappings (i, j) -> block
        meaning "agent j's state enters agent i's equation"; exactly-zero
        blocks are dropped.  The dynamics and sensing graphs are derived
        from the coupling keys with unit weights.
        """
        m = len(a_diag)
        if len(c_diag) != m:
            raise DimensionError("a_diag and c_diag must have one block per agent")
        a_couplings = dict(a_couplings or {})
        c_couplings = dict(c_couplings or {})
        a_blocks = {}
        c_blocks = {}
        for i in range(1, m + 1):
            a_blocks[(i, i)] = np.atleast_2d(np.asarray(a_diag[i - 1], dtype=float))
            c_blocks[(i, i)] = np.atleast_2d(np.asarray(c_diag[i - 1], dtype=float))
        s_edges = []
        o_edges = []
        for (i, j), block in a_couplings.items():
            block = np.atleast_2d(np.asarray(block, dtype=float))
            if np.any(block != 0.0):
                a_blocks[(i, j)] = block
                s_edges.append((j, i))
        for (i, j), block in c_couplings.items():
            block = np.atleast_2d(np.asarray(block, dtype=float))
            if np.any(block != 0.0):
                c_blocks[(i, j)] = block
                o_edges.append((j, i))
        b_blocks = {}
        for i in range(1, m + 1):
            n_i = a_blocks[(i, i)].shape[0]
            if b_diag is None or b_diag[i - 1] is None:
                b_blocks[i] = np.zeros((n_i, 0))
            else:
                b_blocks[i] = np.atleast_2d(np.asarray(b_diag[i - 1], dtype=float))
        return cls(
            a_blocks=a_blocks,
            b_blocks=b_blocks,
            c_blocks=c_blocks,
            dynamics_graph=DirectedGraph.from_edges(m, s_edges),
            sensing_graph=DirectedGraph.from_edges(m, o_edges),
            communication_graph=communication,
        )

    # -- validation ----------------------------------------------------

    def _validate(self):
        m = self.dynamics_graph.node_count
        if self.sensing_graph.node_count != m or self.communication_graph.node_count != m:
            raise DimensionError("all three graphs must share the agent count")
        for i in range(1, m + 1):
            if (i, i) not in self.a_blocks:
                raise DimensionError(f"missing diagonal A block for agent {i}")
            if (i, i) not in self.c_blocks:
                raise DimensionError(f"missing diagonal C block for agent {i}")
            if i not in self.b_blocks:
                raise DimensionError(f"missing B block for agent {i}")
        dims = self.state_dims
        for (i, j), block in self.a_blocks.items():
            if block.shape != (dims[i - 1], dims[j - 1]):
                raise DimensionError(
                    f"A block ({i},{j}) has shape {block.shape}, "
                    f"expected {(dims[i - 1], dims[j - 1])}")
            if i != j:
                if not self.dynamics_graph.has_edge(j, i):
                    raise AssumptionError(f"A block ({i},{j}) present without edge ({j},{i})")
                if not np.any(block != 0.0):
                    raise AssumptionError(f"A block ({i},{j}) must be nonzero")
        for (j, i) in self.dynamics_graph.edges:
            if (i, j) not in self.a_blocks:
                raise AssumptionError(f"dynamics edge ({j},{i}) without A block ({i},{j})")
        outs = self.output_dims
        for (i, j), block in self.c_blocks.items():
            if block.shape != (outs[i - 1], dims[j - 1]):
                raise DimensionError(
                    f"C block ({i},{j}) has shape {block.shape}, "
                    f"expected {(outs[i - 1], dims[j - 1])}")
            if i != j:
                if not self.sensing_graph.has_edge(j, i):
                    raise AssumptionError(f"C block ({i},{j}) present without edge ({j},{i})")
                if not np.any(block != 0.0):
                    raise AssumptionError(f"C block ({i},{j}) must be nonzero")
        for (j, i) in self.sensing_graph.edges:
            if (i, j) not in self.c_blocks:
                raise AssumptionError(f"sensing edge ({j},{i}) without C block ({i},{j})")
        for i, block in self.b_blocks.items():
            if block.shape[0] != dims[i - 1]:
                raise DimensionError(f"B block for agent {i} has {block.shape[0]} rows, "
                                     f"expected {dims[i - 1]}")

    # -- dimensions ----------------------------------------------------

    @property
    def m(self) -> int:
        return self.dynamics_graph.node_count

    @property
    def agents(self):
        return range(1, self.m + 1)

    @property
    def state_dims(self):
        return tuple(self.a_blocks[(i, i)].shape[0] for i in self.agents)

    @property
    def input_dims(self):
        return tuple(self.b_blocks[i].shape[1] for i in self.agents)

    @property
    def output_dims(self):
        return tuple(self.c_blocks[(i, i)].shape[0] for i in self.agents)

    @property
    def n(self) -> int:
        return sum(self.state_dims)

    @property
    def k(self) -> int:
        return sum(self.input_dims)

    @property
    def p(self) -> int:
        return sum(self.output_dims)

    def state_slice(self, i: int) -> slice:
        offsets = np.concatenate(([0], np.cumsum(self.state_dims)))
        return slice(int(offsets[i - 1]), int(offsets[i]))

    def input_slice(self, i: int) -> slice:
        offsets = np.concatenate(([0], np.cumsum(self.input_dims)))
        return slice(int(offsets[i - 1]), int(offsets[i]))

    def output_slice(self, i: int) -> slice:
        offsets = np.concatenate(([0], np.cumsum(self.output_dims)))
        return slice(int(offsets[i - 1]), int(offsets[i]))


@dataclass(frozen=True, eq=False)
class StackedSystem:
    """Stacked matrices of the whole MAS: dx/dt = A x + B u, y = C x."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    state_dims: tuple
    input_dims: tuple
    output_dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", _freeze(self.a))
        object.__setattr__(self, "b", _freeze(self.b))
        object.__setattr__(self, "c", _freeze(self.c))

    def _offsets(self, dims):
        return np.concatenate(([0], np.cumsum(dims)))

    def state_block(self, i: int, j: int) -> np.ndarray:
        off = self._offsets(self.state_dims)
        return self.a[off[i - 1]:off[i], off[j - 1]:off[j]]

    def input_block(self, i: int) -> np.ndarray:
        roff = self._offsets(self.state_dims)
        coff = self._offsets(self.input_dims)
        return self.b[roff[i - 1]:roff[i], coff[i - 1]:coff[i]]

    def output_block(self, i: int, j: int) -> np.ndarray:
        roff = self._offsets(self.output_dims)
        coff = self._offsets(self.state_dims)
        return self.c[roff[i - 1]:roff[i], coff[j - 1]:coff[j]]


def stack(mas: MasModel) -> StackedSystem:
    """Assemble the stacked system with zero fill for absent couplings."""
    dims = mas.state_dims
    a = np.zeros((mas.n, mas.n))
    for (i, j), block in mas.a_blocks.items():
        a[mas.state_slice(i), mas.state_slice(j)] = block
    b = np.zeros((mas.n, mas.k))
    for i in mas.agents:
        b[mas.state_slice(i), mas.input_slice(i)] = mas.b_blocks[i]
    c = np.zeros((mas.p, mas.n))
    for (i, j), block in mas.c_blocks.items():
        c[mas.output_slice(i), mas.state_slice(j)] = block
    return StackedSystem(a=a, b=b, c=c, state_dims=dims,
                         input_dims=mas.input_dims, output_dims=mas.output_dims)


def observability_matrix(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """[C; CA; ...; CA^(n-1)] for an (A, C) pair."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape[1] != a.shape[0]:
        raise DimensionError(f"C has {c.shape[1]} columns for A of size {a.shape[0]}")
    rows = [c]
    for _ in range(a.shape[0] - 1):
        rows.append(rows[-1] @ a)
    return np.vstack(rows)


def numerical_rank(matrix: np.ndarray, rel_tol: float = RANK_REL_TOL) -> int:
    """Rank by singular values above ``rel_tol`` times the largest one."""
    matrix = np.atleast_2d(matrix)
    if matrix.size == 0:
        return 0
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def is_observable(a: np.ndarray, c: np.ndarray) -> bool:
    a = np.atleast_2d(a)
    return numerical_rank(observability_matrix(a, c)) == a.shape[0]


def check_node_observability(mas: MasModel):
    """Per-agent observability of the pair (A_ii, C_ii)."""
    return [is_observable(mas.a_blocks[(i, i)], mas.c_blocks[(i, i)]) for i in mas.agents]


def check_topological_consistency(mas: MasModel):
    """Ordering that is simultaneously topological for both interaction graphs.

    Computed on the union of the dynamics and sensing edge sets; raises
    AssumptionError when any of the graphs (or their union) has a cycle.
    """
    for name, g in (("dynamics", mas.dynamics_graph), ("sensing", mas.sensing_graph)):
        try:
            graphs.topological_ordering(g)
        except CycleError as exc:
            raise AssumptionError(f"{name} graph is cyclic: {exc.cycle}") from exc
    union = mas.dynamics_graph.union(mas.sensing_graph)
    try:
        return graphs.topological_ordering(union)
    except CycleError as exc:
        raise AssumptionError(
            f"dynamics and sensing graphs admit no common ordering: {exc.cycle}") from exc


def plant_derivative(mas: MasModel, x: np.ndarray, u=None) -> np.ndarray:
    """Blockwise evaluation of the state derivative."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mas.n,):
        raise DimensionError(f"state must have shape ({mas.n},), got {x.shape}")
    if u is None:
        u = np.zeros(mas.k)
    u = np.asarray(u, dtype=float)
    if u.shape != (mas.k,):
        raise DimensionError(f"input must have shape ({mas.k},), got {u.shape}")
    out = np.zeros(mas.n)
    for i in mas.agents:
        acc = mas.a_blocks[(i, i)] @ x[mas.state_slice(i)]
        for j in mas.dynamics_graph.in_neighbors(i):
            acc = acc + mas.a_blocks[(i, j)] @ x[mas.state_slice(j)]
        if mas.input_dims[i - 1]:
            acc = acc + mas.b_blocks[i] @ u[mas.input_slice(i)]
        out[mas.state_slice(i)] = acc
    return out


def plant_output(mas: MasModel, x: np.ndarray) -> np.ndarray:
    """Blockwise evaluation of the measured output."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mas.n,):
        raise DimensionError(f"state must have shape ({mas.n},), got {x.shape}")
    out = np.zeros(mas.p)
    for i in mas.agents:
        acc = mas.c_blocks[(i, i)] @ x[mas.state_slice(i)]
        for j in mas.sensing_graph.in_neighbors(i):
            acc = acc + mas.c_blocks[(i, j)] @ x[mas.state_slice(j)]
        out[mas.output_slice(i)] = acc
    return out


# -- model files -------------------------------------------------------

def _graph_to_json(g: DirectedGraph):
    return {"nodes": g.node_count,
            "edges": [[src, dst, g.weight(src, dst)] for src, dst in sorted(g.edges)]}


def _graph_from_json(obj) -> DirectedGraph:
    if "graph_file" in obj:
        return DirectedGraph.from_text(Path(obj["graph_file"]).read_text())
    return DirectedGraph.from_edges(obj["nodes"], [tuple(e) for e in obj["edges"]])


def model_to_json(mas: MasModel) -> dict:
    agents = []
    for i in mas.agents:
        b = mas.b_blocks[i]
        agents.append({
            "A": mas.a_blocks[(i, i)].tolist(),
            "B": b.tolist() if b.shape[1] else None,
            "C": mas.c_blocks[(i, i)].tolist(),
        })
    return {
        "m": mas.m,
        "agents": agents,
        "state_couplings": [
            {"i": i, "j": j, "block": blk.tolist()}
            for (i, j), blk in sorted(mas.a_blocks.items()) if i != j],
        "output_couplings": [
            {"i": i, "j": j, "block": blk.tolist()}
            for (i, j), blk in sorted(mas.c_blocks.items()) if i != j],
        "dynamics_edges": sorted(list(e) for e in mas.dynamics_graph.edges),
        "sensing_edges": sorted(list(e) for e in mas.sensing_graph.edges),
        "communication": _graph_to_json(mas.communication_graph),
    }


def model_from_json(obj: dict) -> MasModel:
    m = obj["m"]
    if len(obj["agents"]) != m:
        raise DimensionError("agent list length does not match 'm'")
    a_diag = [entry["A"] for entry in obj["agents"]]
    c_diag = [entry["C"] for entry in obj["agents"]]
    b_diag = [entry.get("B") for entry in obj["agents"]]
    a_couplings = {(e["i"], e["j"]): e["block"] for e in obj.get("state_couplings", [])}
    c_couplings = {(e["i"], e["j"]): e["block"] for e in obj.get("output_couplings", [])}
    model = MasModel.build(
        a_diag, c_diag,
        communication=_graph_from_json(obj["communication"]),
        b_diag=b_diag, a_couplings=a_couplings, c_couplings=c_couplings)
    # edge lists in the file are redundant but must agree with the blocks
    for key, g in (("dynamics_edges", model.dynamics_graph),
                   ("sensing_edges", model.sensing_graph)):
        if key in obj:
            declared = {tuple(e) for e in obj[key]}
            if declared != set(g.edges):
                raise AssumptionError(f"'{key}' disagrees with the coupling blocks")
    return model


def save_model(mas: MasModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(mas), indent=2) + "\n")


def load_model(path) -> MasModel:
    return model_from_json(json.loads(Path(path).read_text()))
