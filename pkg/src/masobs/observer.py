"""Distributed observer: per-agent estimators, gain design, error dynamics.

Each agent i integrates an estimate ``xhat^(i)`` of the whole MAS state plus
an auxiliary own-state estimate ``xbar_i`` driven by its local output.  The
estimate of agent j's state held by agent i tracks agent j's auxiliary
signal through leader-follower consensus over the communication graph,
scaled by a coupling gain ``mu``.

Estimation-error coordinates are always ordered as

    E_j = [xbar_j - x_j; xhat_j^(1) - x_j; ...; xhat_j^(m) - x_j]

with the per-target blocks E_j stacked in the shared topological ordering
of the interaction graphs; the stacked error then obeys dE/dt = R E with R
block lower triangular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np
import scipy.linalg
import scipy.signal

from . import graphs, mas as mas_mod
from .errors import ConnectivityError, DimensionError, DomainError, UnobservableError
from .graphs import DirectedGraph, augment, grounded_partition
from .mas import MasModel, check_topological_consistency, is_observable

HURWITZ_TOL = 1e-9

WEIGHT_RULES = {
    "binary": graphs.binary_weights,
    "normalized-in": graphs.normalized_in_weights,
    "normalized-out": graphs.normalized_out_weights,
}


# ----------------------------------------------------------------------
# gain containers
# ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObserverGains:
    """Everything the observer needs beyond the plant itself.

    ``luenberger[i]`` is agent i's output-injection gain, ``weights[j]`` the
    (m+1) x (m+1) consensus-weight matrix aligned to the augmented graph for
    target j (row/column 0 is the virtual leader), ``mu`` the coupling gain.
    ``input_mode`` is "full" when every agent knows the whole input vector
    and "own-only" when it only knows its own input.
    """

    luenberger: "MappingProxyType"
    mu: float
    weights: "MappingProxyType"
    input_mode: str = "full"

    def __post_init__(self):
        if self.mu <= 0:
            raise DomainError(f"coupling gain must be positive, got {self.mu}")
        if self.input_mode not in ("full", "own-only"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        lg = {i: mas_mod._freeze(f) for i, f in dict(self.luenberger).items()}
        ws = {j: mas_mod._freeze(w) for j, w in dict(self.weights).items()}
        object.__setattr__(self, "luenberger", MappingProxyType(lg))
        object.__setattr__(self, "weights", MappingProxyType(ws))
        object.__setattr__(self, "mu", float(self.mu))

    def leader_weight(self, i: int) -> float:
        return float(self.weights[i][i, 0])


def validate_gains(model: MasModel, gains: ObserverGains) -> None:
    """Check shapes, Hurwitz Luenberger loops, and weight/edge compatibility."""
    m = model.m
    for i in model.agents:
        f = gains.luenberger.get(i)
        if f is None:
            raise DomainError(f"missing Luenberger gain for agent {i}")
        n_i = model.state_dims[i - 1]
        p_i = model.output_dims[i - 1]
        if f.shape != (n_i, p_i):
            raise DomainError(f"gain for agent {i} has shape {f.shape}, expected {(n_i, p_i)}")
        loop = model.a_blocks[(i, i)] - f @ model.c_blocks[(i, i)]
        if np.max(np.linalg.eigvals(loop).real) >= 0.0:
            raise DomainError(f"A - F C is not Hurwitz for agent {i}")
    gc = model.communication_graph
    for j in model.agents:
        w = gains.weights.get(j)
        if w is None:
            raise DomainError(f"missing consensus weights for target {j}")
        if w.shape != (m + 1, m + 1):
            raise DomainError(f"weights for target {j} must be {(m + 1, m + 1)}")
        # must be a valid weighting of the augmented graph for target j
        augment(gc, j, 1.0).with_weights(w)


def consensus_weight_set(gc: DirectedGraph, rule="binary"):
    """Per-target consensus weights for every augmented graph of ``gc``.

    ``rule`` is one of "binary", "normalized-in", "normalized-out", or a
    callable mapping an AugmentedGraph to a weight matrix.
    """
    if callable(rule):
        build = rule
    else:
        try:
            build = WEIGHT_RULES[rule]
        except KeyError:
            raise ValueError(f"unknown weight rule {rule!r}") from None
    out = {}
    for j in gc.nodes:
        ag = augment(gc, j, 1.0)
        out[j] = build(ag)
    return out


# ----------------------------------------------------------------------
# Luenberger gain design
# ----------------------------------------------------------------------

def _mirrored_poles(eigenvalues: np.ndarray, margin: float):
    """Reflect eigenvalues right of -margin and spread exact repeats.

    Conjugate pairing is preserved; repeated target locations are separated
    by deterministic leftward shifts so a pole placement routine accepts
    them regardless of the output dimension.
    """
    reps = []  # (real, imag>=0, count)
    for lam in eigenvalues:
        re, im = float(lam.real), abs(float(lam.imag))
        if im < 1e-9:
            reps.append((re, 0.0))
        elif lam.imag > 0:
            reps.append((re, im))
    mirrored = []
    for re, im in reps:
        if re > -margin:
            re = -2.0 * margin - re
        mirrored.append((re, im))
    mirrored.sort()
    seen = {}
    poles = []
    for re, im in mirrored:
        key = (round(re, 9), round(im, 9))
        bump = seen.get(key, 0)
        seen[key] = bump + 1
        re = re - 0.15 * margin * bump
        if im == 0.0:
            poles.append(complex(re, 0.0))
        else:
            poles.append(complex(re, im))
            poles.append(complex(re, -im))
    return np.array(sorted(poles, key=lambda z: (z.real, z.imag)))


def design_luenberger_gain(a, c, margin: float = 1.0) -> np.ndarray:
    """Deterministic output-injection gain with a guaranteed stability margin.

    Places the eigenvalues of A - F C at the spectrum of A mirrored to the
    left of ``-margin`` (dual-system pole placement); if the placement
    routine rejects the pole set, falls back to a Riccati design on the
    margin-shifted pair.  Either way every closed-loop eigenvalue ends up
    with real part <= -margin.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if margin <= 0:
        raise DomainError(f"margin must be positive, got {margin}")
    if not is_observable(a, c):
        raise UnobservableError("pair (A, C) is not observable")
    n = a.shape[0]
    f = None
    try:
        poles = _mirrored_poles(np.linalg.eigvals(a), margin)
        placed = scipy.signal.place_poles(a.T, c.T, poles)
        f = placed.gain_matrix.T
    except ValueError:
        f = None
    if f is not None:
        worst = np.max(np.linalg.eigvals(a - f @ c).real)
        if worst > -margin * (1.0 - 1e-6) + 1e-9:
            f = None
    if f is None:
        shifted = a + margin * np.eye(n)
        p = scipy.linalg.solve_continuous_are(shifted.T, c.T, np.eye(n), np.eye(c.shape[0]))
        f = p @ c.T
    return f


# ----------------------------------------------------------------------
# coupling gain selection
# ----------------------------------------------------------------------

def _next_integer_above(bound: float) -> int:
    """Smallest integer strictly greater than ``bound``."""
    return int(math.floor(bound)) + 1


def spectral_radius(matrix) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(matrix)))))


def coupling_gain_global(model: MasModel, weights) -> int:
    """Coupling gain from the actual grounded spectra of every target graph.

    Evaluates max_j rho(A_jj) / min_{q,j} |eig_q(S_j)| and returns the
    smallest integer strictly above it.  A (numerically) singular follower
    block means the communication graph is not strongly connected.
    """
    rho_max = max(spectral_radius(model.a_blocks[(j, j)]) for j in model.agents)
    min_mod = np.inf
    scale = 0.0
    for j in model.agents:
        s = grounded_partition(weights[j]).s_matrix
        eigs = np.linalg.eigvals(s)
        min_mod = min(min_mod, float(np.min(np.abs(eigs))))
        scale = max(scale, float(np.max(np.abs(eigs))) if eigs.size else 0.0)
    if min_mod <= 1e-9 * max(1.0, scale):
        raise ConnectivityError(
            "a grounded follower block is singular; the communication graph "
            "is not strongly connected")
    return _next_integer_above(rho_max / min_mod)


def coupling_gain_undirected(rho_max: float, m_bar: int) -> int:
    """Uniform integer coupling gain for undirected graphs with binary weights.

    Only needs the largest block spectral radius and the maximum number of
    allowable agents, so every agent can evaluate it locally.
    """
    if rho_max < 0:
        raise DomainError("spectral radius bound must be nonnegative")
    if m_bar < 2:
        raise DomainError("agent cap must be at least 2")
    bound = rho_max * ((m_bar * m_bar - m_bar + 4) / 4.0) ** (m_bar - 1) * m_bar
    return _next_integer_above(bound)


def coupling_gain_directed(rho_max: float, m_bar: int) -> int:
    """Uniform integer coupling gain for strongly connected directed graphs
    with normalized weights."""
    if rho_max < 0:
        raise DomainError("spectral radius bound must be nonnegative")
    if m_bar < 1:
        raise DomainError("agent cap must be at least 1")
    bound = rho_max / grounded_spectrum_bound_directed(m_bar)
    return _next_integer_above(bound)


def grounded_spectrum_bound_undirected(lambda2: float, m: int) -> float:
    """Lower bound on the smallest grounded-Laplacian eigenvalue over all
    targets, for an undirected connected graph with binary weights."""
    if m < 1:
        raise DomainError("need at least one agent")
    if lambda2 <= 0:
        return 0.0
    return (1.0 / m) * (lambda2 / (lambda2 + 1.0)) ** (m - 1)


def grounded_spectrum_bound_directed(m: int) -> float:
    """Lower bound on the smallest grounded eigenvalue modulus over all
    targets, for a strongly connected digraph with normalized weights."""
    if m < 1:
        raise DomainError("need at least one agent")
    # 1 - (1 - 1/(m+1)!)**(1/m), evaluated in a cancellation-safe form
    return -math.expm1(math.log1p(-1.0 / math.factorial(m + 1)) / m)


def design_gains(model: MasModel, luenberger="auto", margin: float = 1.0,
                 weights="binary", mu="global", m_bar=None,
                 input_mode: str = "full"):
    """Resolve a gain policy against a concrete model.

    Returns ``(gains, report)`` where the report records the bound trail
    (spectral radius, bound value, selected mu, weight rule).
    """
    if isinstance(weights, (str,)) or callable(weights):
        weight_set = consensus_weight_set(model.communication_graph, weights)
        rule_name = weights if isinstance(weights, str) else "custom"
    else:
        weight_set = {j: np.asarray(w, dtype=float) for j, w in dict(weights).items()}
        rule_name = "explicit"
    if luenberger == "auto":
        gain_map = {}
        for i in model.agents:
            try:
                gain_map[i] = design_luenberger_gain(
                    model.a_blocks[(i, i)], model.c_blocks[(i, i)], margin=margin)
            except UnobservableError as exc:
                raise UnobservableError(f"agent {i}: {exc}") from exc
    else:
        gain_map = {i: np.asarray(f, dtype=float) for i, f in dict(luenberger).items()}
    rho_max = max(spectral_radius(model.a_blocks[(j, j)]) for j in model.agents)
    report = {"rho_max": rho_max, "weight_rule": rule_name, "mu_policy": str(mu)}
    if mu == "global":
        mu_value = coupling_gain_global(model, weight_set)
        min_mod = min(
            float(np.min(np.abs(np.linalg.eigvals(grounded_partition(weight_set[j]).s_matrix))))
            for j in model.agents)
        report["min_grounded_eigenvalue"] = min_mod
        report["mu_bound"] = rho_max / min_mod
    elif mu == "undirected":
        if m_bar is None:
            raise DomainError("the undirected policy needs the agent cap m_bar")
        mu_value = coupling_gain_undirected(rho_max, m_bar)
        report["m_bar"] = m_bar
        report["mu_bound"] = rho_max * ((m_bar ** 2 - m_bar + 4) / 4.0) ** (m_bar - 1) * m_bar
    elif mu == "directed":
        if m_bar is None:
            raise DomainError("the directed policy needs the agent cap m_bar")
        mu_value = coupling_gain_directed(rho_max, m_bar)
        report["m_bar"] = m_bar
        report["mu_bound"] = rho_max / grounded_spectrum_bound_directed(m_bar)
    else:
        mu_value = float(mu)
        report["mu_bound"] = None
    report["mu"] = mu_value
    gains = ObserverGains(luenberger=gain_map, mu=mu_value, weights=weight_set,
                          input_mode=input_mode)
    validate_gains(model, gains)
    return gains, report


# ----------------------------------------------------------------------
# observer state and derivative
# ----------------------------------------------------------------------

@dataclass
class ObserverState:
    """Estimates held by all agents: xhat[i] is agent i's stacked estimate of
    the whole MAS state, xbar[i] its auxiliary own-state estimate."""

    xhat: dict
    xbar: dict

    def copy(self) -> "ObserverState":
        return ObserverState(xhat={i: v.copy() for i, v in self.xhat.items()},
                             xbar={i: v.copy() for i, v in self.xbar.items()})


def zero_observer_state(model: MasModel) -> ObserverState:
    return ObserverState(
        xhat={i: np.zeros(model.n) for i in model.agents},
        xbar={i: np.zeros(model.state_dims[i - 1]) for i in model.agents})


def pack_observer_state(model: MasModel, state: ObserverState) -> np.ndarray:
    parts = [state.xbar[i] for i in model.agents]
    parts += [state.xhat[i] for i in model.agents]
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack_observer_state(model: MasModel, vector: np.ndarray) -> ObserverState:
    xbar = {}
    pos = 0
    for i in model.agents:
        n_i = model.state_dims[i - 1]
        xbar[i] = np.array(vector[pos:pos + n_i])
        pos += n_i
    xhat = {}
    for i in model.agents:
        xhat[i] = np.array(vector[pos:pos + model.n])
        pos += model.n
    return ObserverState(xhat=xhat, xbar=xbar)


def observer_dim(model: MasModel) -> int:
    return model.n + model.m * model.n


def observer_derivative(model: MasModel, gains: ObserverGains,
                        state: ObserverState, u, y, t: float = 0.0) -> ObserverState:
    """Time derivative of every agent's estimates.

    In "own-only" input mode the cross-agent estimators drop the unknown
    input feedthrough B_jj u_j for j != i, while each agent keeps its own
    input in both its own-state estimator and its auxiliary signal.
    """
    u = np.zeros(model.k) if u is None else np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != (model.k,):
        raise DimensionError(f"input must have shape ({model.k},), got {u.shape}")
    if y.shape != (model.p,):
        raise DimensionError(f"output must have shape ({model.p},), got {y.shape}")
    mu = gains.mu
    full_input = gains.input_mode == "full"
    d_xbar = {}
    d_xhat = {}
    for i in model.agents:
        xhat_i = state.xhat[i]
        xbar_i = state.xbar[i]
        f_i = gains.luenberger[i]
        # auxiliary own-state estimate driven by the local output
        acc = model.a_blocks[(i, i)] @ xbar_i
        if model.input_dims[i - 1]:
            acc = acc + model.b_blocks[i] @ u[model.input_slice(i)]
        for l in model.dynamics_graph.in_neighbors(i):
            acc = acc + model.a_blocks[(i, l)] @ xhat_i[model.state_slice(l)]
        predicted = model.c_blocks[(i, i)] @ xbar_i
        for l in model.sensing_graph.in_neighbors(i):
            predicted = predicted + model.c_blocks[(i, l)] @ xhat_i[model.state_slice(l)]
        d_xbar[i] = acc + f_i @ (y[model.output_slice(i)] - predicted)
        # consensus estimators for every target j
        d_i = np.zeros(model.n)
        comm = model.communication_graph.in_neighbors(i)
        for j in model.agents:
            sl_j = model.state_slice(j)
            xhat_ij = xhat_i[sl_j]
            accj = model.a_blocks[(j, j)] @ xhat_ij
            for l in model.dynamics_graph.in_neighbors(j):
                accj = accj + model.a_blocks[(j, l)] @ xhat_i[model.state_slice(l)]
            if (full_input or j == i) and model.input_dims[j - 1]:
                accj = accj + model.b_blocks[j] @ u[model.input_slice(j)]
            w_j = gains.weights[j]
            cons = np.zeros(len(xhat_ij))
            for l in comm:
                cons = cons + w_j[i, l] * (state.xhat[l][sl_j] - xhat_ij)
            if j == i:
                cons = cons + w_j[i, 0] * (xbar_i - xhat_ij)
            d_i[sl_j] = accj + mu * cons
        d_xhat[i] = d_i
    return ObserverState(xhat=d_xhat, xbar=d_xbar)


# ----------------------------------------------------------------------
# error coordinates
# ----------------------------------------------------------------------

def error_dim(model: MasModel) -> int:
    return (model.m + 1) * model.n


def error_vector(model: MasModel, state: ObserverState, x: np.ndarray,
                 ordering=None) -> np.ndarray:
    """Stack [xbar_j - x_j; xhat_j^(1..m) - x_j] over targets in ordering."""
    if ordering is None:
        ordering = check_topological_consistency(model)
    parts = []
    for j in ordering:
        sl = model.state_slice(j)
        parts.append(state.xbar[j] - x[sl])
        for i in model.agents:
            parts.append(state.xhat[i][sl] - x[sl])
    return np.concatenate(parts)


def observer_state_from_errors(model: MasModel, errors: np.ndarray, x: np.ndarray,
                               ordering=None) -> ObserverState:
    """Inverse of :func:`error_vector` for a given true state."""
    if ordering is None:
        ordering = check_topological_consistency(model)
    state = zero_observer_state(model)
    pos = 0
    for j in ordering:
        sl = model.state_slice(j)
        n_j = model.state_dims[j - 1]
        state.xbar[j] = x[sl] + errors[pos:pos + n_j]
        pos += n_j
        for i in model.agents:
            state.xhat[i][sl] = x[sl] + errors[pos:pos + n_j]
            pos += n_j
    return state


def error_derivative(model: MasModel, gains: ObserverGains, state: ObserverState,
                     x: np.ndarray, u=None, process_noise=None,
                     measurement_noise=None, ordering=None, t: float = 0.0) -> np.ndarray:
    """d/dt of the stacked estimation error, through the observer equations."""
    if ordering is None:
        ordering = check_topological_consistency(model)
    y = mas_mod.plant_output(model, x)
    if measurement_noise is not None:
        y = y + measurement_noise
    ds = observer_derivative(model, gains, state, u, y, t=t)
    dx = mas_mod.plant_derivative(model, x, u)
    if process_noise is not None:
        dx = dx + process_noise
    parts = []
    for j in ordering:
        sl = model.state_slice(j)
        parts.append(ds.xbar[j] - dx[sl])
        for i in model.agents:
            parts.append(ds.xhat[i][sl] - dx[sl])
    return np.concatenate(parts)


# ----------------------------------------------------------------------
# error-dynamics assembly
# ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ErrorDynamics:
    """Error-dynamics blocks: per-target diagonal blocks, coupling blocks,
    and the stacked matrix R (block lower triangular in ``ordering``)."""

    t_blocks: "MappingProxyType"
    q_blocks: "MappingProxyType"
    r: np.ndarray
    ordering: tuple

    def __post_init__(self):
        object.__setattr__(self, "t_blocks",
                           MappingProxyType({k: mas_mod._freeze(v)
                                             for k, v in dict(self.t_blocks).items()}))
        object.__setattr__(self, "q_blocks",
                           MappingProxyType({k: mas_mod._freeze(v)
                                             for k, v in dict(self.q_blocks).items()}))
        object.__setattr__(self, "r", mas_mod._freeze(self.r))
        object.__setattr__(self, "ordering", tuple(self.ordering))


def assemble_error_dynamics(model: MasModel, gains: ObserverGains) -> ErrorDynamics:
    """Build the T and Q blocks and the permuted stacked matrix R.

    The diagonal block for target j couples the auxiliary error into the
    consensus errors through the (mu-scaled) leader column of the grounded
    Laplacian partition; couplings between different targets enter through
    the dynamics and sensing blocks exactly as the error equations dictate,
    so R equals the Jacobian of the stacked error derivative.
    """
    ordering = check_topological_consistency(model)
    validate_gains(model, gains)
    m = model.m
    mu = gains.mu
    t_blocks = {}
    for j in model.agents:
        n_j = model.state_dims[j - 1]
        blocks = grounded_partition(gains.weights[j])
        a_jj = model.a_blocks[(j, j)]
        loop = a_jj - gains.luenberger[j] @ model.c_blocks[(j, j)]
        t = np.zeros(((m + 1) * n_j, (m + 1) * n_j))
        t[:n_j, :n_j] = loop
        t[n_j:, :n_j] = mu * np.kron(blocks.o_vector.reshape(m, 1), np.eye(n_j))
        t[n_j:, n_j:] = np.kron(np.eye(m), a_jj) - mu * np.kron(blocks.s_matrix, np.eye(n_j))
        t_blocks[j] = t
    q_blocks = {}
    for j in model.agents:
        n_j = model.state_dims[j - 1]
        f_j = gains.luenberger[j]
        s_in = set(model.dynamics_graph.in_neighbors(j))
        o_in = set(model.sensing_graph.in_neighbors(j))
        for l in sorted(s_in | o_in):
            n_l = model.state_dims[l - 1]
            q = np.zeros(((m + 1) * n_j, (m + 1) * n_l))
            top = np.zeros((n_j, n_l))
            if l in s_in:
                top = top + model.a_blocks[(j, l)]
                q[n_j:, n_l:] = np.kron(np.eye(m), model.a_blocks[(j, l)])
            if l in o_in:
                top = top - f_j @ model.c_blocks[(j, l)]
            # the auxiliary error of target j sees agent j's own estimate of l
            col = n_l * j  # block offset of estimator j inside E_l
            q[:n_j, col:col + n_l] = top
            q_blocks[(j, l)] = q
    sizes = [(m + 1) * model.state_dims[j - 1] for j in ordering]
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    r = np.zeros((offsets[-1], offsets[-1]))
    pos = {j: idx for idx, j in enumerate(ordering)}
    for j in model.agents:
        a = pos[j]
        r[offsets[a]:offsets[a + 1], offsets[a]:offsets[a + 1]] = t_blocks[j]
    for (j, l), q in q_blocks.items():
        a, b = pos[j], pos[l]
        if b > a:
            raise AssertionError("coupling source appears after its target in the ordering")
        r[offsets[a]:offsets[a + 1], offsets[b]:offsets[b + 1]] = q
    return ErrorDynamics(t_blocks=t_blocks, q_blocks=q_blocks, r=r, ordering=ordering)


def is_hurwitz(matrix, tol: float = HURWITZ_TOL) -> bool:
    """True iff every eigenvalue has real part below ``-tol``."""
    return bool(np.max(np.linalg.eigvals(np.atleast_2d(matrix)).real) < -tol)


# ----------------------------------------------------------------------
# disturbance entry maps and the ISS bound
# ----------------------------------------------------------------------

def error_disturbance_matrices(model: MasModel, gains: ObserverGains, ordering=None):
    """Linear maps from disturbances into the stacked error derivative.

    Returns a dict with keys "unknown_input" (stacked input -> dE/dt; zero
    in full-input mode), "process" (stacked state noise) and "measurement"
    (stacked output noise), obtained by probing the observer equations with
    unit disturbances at zero error, which is exact for a linear system.
    """
    if ordering is None:
        ordering = check_topological_consistency(model)
    x0 = np.zeros(model.n)
    state0 = zero_observer_state(model)

    def probe(**kwargs):
        return error_derivative(model, gains, state0, x0, ordering=ordering, **kwargs)

    base = probe()
    dim = error_dim(model)
    g_u = np.zeros((dim, model.k))
    for c in range(model.k):
        e = np.zeros(model.k)
        e[c] = 1.0
        g_u[:, c] = probe(u=e) - base
    g_w = np.zeros((dim, model.n))
    for c in range(model.n):
        e = np.zeros(model.n)
        e[c] = 1.0
        g_w[:, c] = probe(process_noise=e) - base
    g_v = np.zeros((dim, model.p))
    for c in range(model.p):
        e = np.zeros(model.p)
        e[c] = 1.0
        g_v[:, c] = probe(measurement_noise=e) - base
    return {"unknown_input": g_u, "process": g_w, "measurement": g_v}


def iss_error_bound(kappa: float, eta: float, e0_norm: float, b_norm: float,
                    u_bar: float, t):
    """Exponential-plus-offset bound on the error norm under bounded inputs."""
    if eta <= 0:
        raise DomainError(f"decay rate must be positive, got {eta}")
    if kappa < 1:
        raise DomainError(f"overshoot constant must be at least 1, got {kappa}")
    t = np.asarray(t, dtype=float)
    value = kappa * np.exp(-eta * t) * e0_norm + kappa * b_norm * u_bar / eta
    return float(value) if value.ndim == 0 else value


def fit_decay_envelope(r: np.ndarray, t_max: float = 20.0, samples: int = 200,
                       rate_fraction: float = 0.9, inflation: float = 1.05):
    """Fit (kappa, eta) with ||exp(R t)|| <= kappa exp(-eta t) from samples.

    ``eta`` is a fixed fraction of the spectral decay rate and ``kappa`` the
    inflated envelope peak over a uniform sample grid on [0, t_max], so the
    envelope is valid by construction up to sampling density.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    alpha = float(np.max(np.linalg.eigvals(r).real))
    if alpha >= 0:
        raise DomainError("matrix is not Hurwitz; no decay envelope exists")
    eta = rate_fraction * (-alpha)
    dt = t_max / (samples - 1)
    step = scipy.linalg.expm(r * dt)
    power = np.eye(r.shape[0])
    kappa = 1.0
    for k in range(1, samples):
        power = step @ power
        kappa = max(kappa, float(np.linalg.norm(power, 2)) * math.exp(eta * k * dt))
    return max(1.0, kappa * inflation), eta
