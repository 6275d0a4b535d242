"""Deterministic co-simulation of the plant and the distributed observer.

A scenario couples one MAS model with a gain policy, input signals, bounded
noise, and an optional list of join/leave events.  Integration is classical
fixed-step RK4 on a shared time grid; noise is redrawn from a seeded
generator once per step and held constant within the step, so a scenario is
a pure function of its configuration.

Agents are tracked by *label*: the model always numbers its agents 1..m
internally, while joins and leaves edit the label set and the simulator
re-maps blocks, gains and estimates around them.  Trace arrays cover every
label that ever exists, padded with NaN while an agent is absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import mas as mas_mod
from . import observer as obs_mod
from .errors import (AssumptionError, ConnectivityError, DimensionError,
                     DomainError, NonFiniteError)
from .graphs import DirectedGraph, is_strongly_connected
from .mas import MasModel, check_node_observability, check_topological_consistency
from .observer import ObserverGains, ObserverState

MACHINE_EPS = float(np.finfo(float).eps)
#: multiplier for the double-precision error floor used by the trace checks;
#: measured cancellation error sits near 1-2 times eps * state magnitude
FLOAT_FLOOR_SAFETY = 8.0


# ----------------------------------------------------------------------
# input signals
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantInput:
    value: tuple

    def evaluate(self, t):
        return np.asarray(self.value, dtype=float)


@dataclass(frozen=True)
class SinusoidInput:
    """Per-channel a_c * sin(omega t + phi_c) with shared angular frequency."""

    amplitude: tuple
    frequency: float
    phase: tuple

    def evaluate(self, t):
        return np.asarray(self.amplitude, float) * np.sin(
            self.frequency * t + np.asarray(self.phase, float))


@dataclass(frozen=True)
class PiecewiseInput:
    """Zero-order hold over breakpoints; constant at the last value."""

    times: tuple
    values: tuple

    def evaluate(self, t):
        idx = int(np.searchsorted(np.asarray(self.times, float), t, side="right")) - 1
        idx = max(0, min(idx, len(self.values) - 1))
        return np.asarray(self.values[idx], dtype=float)


def signal_to_json(sig):
    if isinstance(sig, ConstantInput):
        return {"type": "constant", "value": list(sig.value)}
    if isinstance(sig, SinusoidInput):
        return {"type": "sinusoid", "amplitude": list(sig.amplitude),
                "frequency": sig.frequency, "phase": list(sig.phase)}
    if isinstance(sig, PiecewiseInput):
        return {"type": "piecewise", "times": list(sig.times),
                "values": [list(v) for v in sig.values]}
    raise ValueError(f"unknown signal {sig!r}")


def signal_from_json(obj):
    kind = obj["type"]
    if kind == "constant":
        return ConstantInput(tuple(obj["value"]))
    if kind == "sinusoid":
        return SinusoidInput(tuple(obj["amplitude"]), float(obj["frequency"]),
                             tuple(obj["phase"]))
    if kind == "piecewise":
        return PiecewiseInput(tuple(obj["times"]), tuple(tuple(v) for v in obj["values"]))
    raise ValueError(f"unknown signal type {kind!r}")


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Uniform per-channel noise bounds; zero disables a channel family."""

    process: float = 0.0
    measurement: float = 0.0


@dataclass(frozen=True)
class GainPolicy:
    """How to obtain observer gains for the current (possibly edited) model.

    Dict-valued fields are keyed by agent label.  ``mu`` is either a number
    (kept fixed across events) or one of "global", "undirected", "directed"
    (re-evaluated after every event).
    """

    luenberger: object = "auto"
    margin: float = 1.0
    weights: object = "binary"
    mu: object = "global"
    m_bar: int = None
    input_mode: str = "full"


@dataclass(frozen=True)
class JoinEvent:
    """A new agent appears: its blocks, couplings (keyed by labels), initial
    plant state, replacement communication edges, and (for explicit gain
    policies) its Luenberger gain."""

    time: float
    label: int
    a_block: tuple
    c_block: tuple
    initial_state: tuple
    b_block: tuple = None
    state_couplings: tuple = ()      # ((i_label, j_label, block), ...)
    output_couplings: tuple = ()
    communication: tuple = ()        # ((src_label, dst_label, weight), ...)
    luenberger: tuple = None


@dataclass(frozen=True)
class LeaveEvent:
    """An agent departs; optionally replace the communication edges of the
    remaining agents (default: induced subgraph)."""

    time: float
    label: int
    communication: tuple = None


@dataclass(frozen=True)
class ScenarioConfig:
    model: MasModel
    policy: GainPolicy = GainPolicy()
    inputs: dict = None              # label -> input signal
    noise: NoiseSpec = NoiseSpec()
    events: tuple = ()
    t_end: float = 10.0
    dt: float = 1e-3
    seed: int = 0
    record_every: int = 1
    initial_state: tuple = None
    initial_estimates: object = "zero"

    def __post_init__(self):
        if not (0 < self.dt <= self.t_end):
            raise DomainError("need 0 < dt <= t_end")
        times = [e.time for e in self.events]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise DomainError("event times must be strictly increasing")
        if any(not (0.0 < t < self.t_end) for t in times):
            raise DomainError("event times must lie strictly inside (0, t_end)")
        if self.record_every < 1:
            raise DomainError("record_every must be at least 1")


# ----------------------------------------------------------------------
# trace
# ----------------------------------------------------------------------

@dataclass
class SimulationTrace:
    """Time-indexed states, estimates and error norms of one scenario run.

    All arrays share the recorded time grid.  ``x``/``xbar`` columns follow
    ``labels`` with each agent's block width from ``state_dims``; ``xhat``
    maps estimator label to that agent's stacked-estimate history.  Error
    norms are recomputed from the stored states, never integrated.
    """

    labels: tuple
    state_dims: dict
    times: np.ndarray
    x: np.ndarray
    xbar: np.ndarray
    xhat: dict
    pair_errors: dict
    bar_errors: dict
    total_error: np.ndarray
    events: list
    gain_log: list
    meta: dict

    def label_slice(self, label: int) -> slice:
        start = 0
        for lab in self.labels:
            width = self.state_dims[lab]
            if lab == label:
                return slice(start, start + width)
            start += width
        raise KeyError(f"unknown label {label}")

    def state_magnitude(self) -> np.ndarray:
        """Euclidean norm over every stored state/estimate column per sample."""
        total = np.nansum(self.x ** 2, axis=1) + np.nansum(self.xbar ** 2, axis=1)
        for arr in self.xhat.values():
            total = total + np.nansum(arr ** 2, axis=1)
        return np.sqrt(total)


# ----------------------------------------------------------------------
# fixed-step integrator
# ----------------------------------------------------------------------

def integrate_step(f, state, t, dt):
    """One classical 4-stage Runge-Kutta step of ``state' = f(t, state)``."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    k1 = f(t, state)
    k2 = f(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = f(t + dt, state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"state became non-finite at t={t + dt:.6g}")
    return out


# ----------------------------------------------------------------------
# gain-policy resolution (label aware)
# ----------------------------------------------------------------------

def _map_labels_to_index(d, labels):
    index = {lab: pos + 1 for pos, lab in enumerate(labels)}
    return {index[lab]: v for lab, v in d.items() if lab in index}


def resolve_gains(model: MasModel, policy: GainPolicy, labels=None):
    """Turn a label-keyed gain policy into concrete gains for ``model``."""
    labels = tuple(labels) if labels is not None else tuple(model.agents)
    if len(labels) != model.m:
        raise DimensionError("label list does not match the model size")
    luenberger = policy.luenberger
    if isinstance(luenberger, dict):
        luenberger = _map_labels_to_index(luenberger, labels)
        missing = [lab for lab in labels if (labels.index(lab) + 1) not in luenberger]
        if missing:
            raise DomainError(f"explicit policy lacks Luenberger gains for {missing}")
    weights = policy.weights
    if isinstance(weights, dict):
        weights = _map_labels_to_index(weights, labels)
    gains, report = obs_mod.design_gains(
        model, luenberger=luenberger, margin=policy.margin, weights=weights,
        mu=policy.mu, m_bar=policy.m_bar, input_mode=policy.input_mode)
    return gains, report


def _validate_model_for_run(model: MasModel):
    observable = check_node_observability(model)
    if not all(observable):
        bad = [i for i, ok in zip(model.agents, observable) if not ok]
        raise AssumptionError(f"agents {bad} fail node-level observability")
    ordering = check_topological_consistency(model)
    if not is_strongly_connected(model.communication_graph):
        raise ConnectivityError("communication graph is not strongly connected")
    return ordering


# ----------------------------------------------------------------------
# join / leave editing
# ----------------------------------------------------------------------

def _label_blocks(model: MasModel, labels):
    """Re-key a model's blocks by agent label."""
    index = {pos + 1: lab for pos, lab in enumerate(labels)}
    a_diag = {index[i]: model.a_blocks[(i, i)] for i in model.agents}
    b_diag = {index[i]: model.b_blocks[i] for i in model.agents}
    c_diag = {index[i]: model.c_blocks[(i, i)] for i in model.agents}
    a_cpl = {(index[i], index[j]): blk for (i, j), blk in model.a_blocks.items() if i != j}
    c_cpl = {(index[i], index[j]): blk for (i, j), blk in model.c_blocks.items() if i != j}
    return a_diag, b_diag, c_diag, a_cpl, c_cpl


def _build_labelled_model(labels, a_diag, b_diag, c_diag, a_cpl, c_cpl, comm_edges):
    order = {lab: pos + 1 for pos, lab in enumerate(labels)}
    m = len(labels)
    gc = DirectedGraph.from_edges(
        m, [(order[src], order[dst], w) for src, dst, w in comm_edges])
    return MasModel.build(
        [a_diag[lab] for lab in labels],
        [c_diag[lab] for lab in labels],
        communication=gc,
        b_diag=[b_diag[lab] for lab in labels],
        a_couplings={(order[i], order[j]): blk for (i, j), blk in a_cpl.items()},
        c_couplings={(order[i], order[j]): blk for (i, j), blk in c_cpl.items()})


def _comm_edges_by_label(model: MasModel, labels):
    index = {pos + 1: lab for pos, lab in enumerate(labels)}
    gc = model.communication_graph
    return tuple((index[src], index[dst], gc.weight(src, dst)) for src, dst in sorted(gc.edges))


def apply_event(model: MasModel, policy: GainPolicy, obs_state: ObserverState,
                x: np.ndarray, event, labels):
    """Apply one join/leave event.

    Returns (model', policy', gains', state', x', labels', gain_report).
    Surviving agents keep their estimates; estimate vectors are extended
    with zeros for a joining agent (and its own estimates start at zero),
    or shrunk by dropping the departing agent's slice.  Gains are re-derived
    from the policy on the edited model.
    """
    labels = tuple(labels)
    a_diag, b_diag, c_diag, a_cpl, c_cpl = _label_blocks(model, labels)
    old_slice = {lab: model.state_slice(pos + 1) for pos, lab in enumerate(labels)}
    if isinstance(event, JoinEvent):
        if event.label in labels:
            raise DomainError(f"agent label {event.label} already present")
        if not event.communication:
            raise DomainError("a join event must carry the new communication edges")
        new_labels = tuple(sorted(labels + (event.label,)))
        a_diag[event.label] = np.atleast_2d(np.asarray(event.a_block, float))
        c_diag[event.label] = np.atleast_2d(np.asarray(event.c_block, float))
        n_new = a_diag[event.label].shape[0]
        b_diag[event.label] = (None if event.b_block is None
                               else np.atleast_2d(np.asarray(event.b_block, float)))
        for i, j, blk in event.state_couplings:
            a_cpl[(i, j)] = np.atleast_2d(np.asarray(blk, float))
        for i, j, blk in event.output_couplings:
            c_cpl[(i, j)] = np.atleast_2d(np.asarray(blk, float))
        new_model = _build_labelled_model(new_labels, a_diag, b_diag, c_diag,
                                          a_cpl, c_cpl, event.communication)
        init = np.asarray(event.initial_state, float)
        if init.shape != (n_new,):
            raise DimensionError(f"initial state for agent {event.label} must have "
                                 f"shape ({n_new},)")
        policy_out = policy
        if isinstance(policy.luenberger, dict):
            if event.luenberger is None and event.label not in policy.luenberger:
                raise DomainError("explicit gain policy needs a Luenberger gain "
                                  "for the joining agent")
            updated = dict(policy.luenberger)
            if event.luenberger is not None:
                updated[event.label] = np.atleast_2d(np.asarray(event.luenberger, float))
            policy_out = replace(policy, luenberger=updated)

        def new_x():
            out = np.zeros(new_model.n)
            for pos, lab in enumerate(new_labels):
                sl = new_model.state_slice(pos + 1)
                out[sl] = init if lab == event.label else x[old_slice[lab]]
            return out

        def carry_vec(old_vec):
            out = np.zeros(new_model.n)
            for pos, lab in enumerate(new_labels):
                if lab != event.label:
                    out[new_model.state_slice(pos + 1)] = old_vec[old_slice[lab]]
            return out

        new_state = obs_mod.zero_observer_state(new_model)
        for pos, lab in enumerate(new_labels):
            if lab == event.label:
                continue
            old_pos = labels.index(lab) + 1
            new_state.xbar[pos + 1] = obs_state.xbar[old_pos].copy()
            new_state.xhat[pos + 1] = carry_vec(obs_state.xhat[old_pos])
        out_x = new_x()
    elif isinstance(event, LeaveEvent):
        if event.label not in labels:
            raise DomainError(f"agent label {event.label} is not present")
        new_labels = tuple(lab for lab in labels if lab != event.label)
        if not new_labels:
            raise DomainError("cannot remove the last agent")
        for store in (a_diag, b_diag, c_diag):
            store.pop(event.label)
        a_cpl = {k: v for k, v in a_cpl.items() if event.label not in k}
        c_cpl = {k: v for k, v in c_cpl.items() if event.label not in k}
        if event.communication is not None:
            comm = event.communication
        else:
            comm = tuple((src, dst, w)
                         for src, dst, w in _comm_edges_by_label(model, labels)
                         if event.label not in (src, dst))
        new_model = _build_labelled_model(new_labels, a_diag, b_diag, c_diag,
                                          a_cpl, c_cpl, comm)
        policy_out = policy
        if isinstance(policy.luenberger, dict) and event.label in policy.luenberger:
            updated = dict(policy.luenberger)
            updated.pop(event.label)
            policy_out = replace(policy, luenberger=updated)

        def shrink(old_vec):
            return np.concatenate([old_vec[old_slice[lab]] for lab in new_labels])

        new_state = obs_mod.zero_observer_state(new_model)
        for pos, lab in enumerate(new_labels):
            old_pos = labels.index(lab) + 1
            new_state.xbar[pos + 1] = obs_state.xbar[old_pos].copy()
            new_state.xhat[pos + 1] = shrink(obs_state.xhat[old_pos])
        out_x = shrink(x)
    else:
        raise TypeError(f"unknown event {event!r}")
    _validate_model_for_run(new_model)
    new_gains, report = resolve_gains(new_model, policy_out, new_labels)
    return new_model, policy_out, new_gains, new_state, out_x, new_labels, report


# ----------------------------------------------------------------------
# linearization of one segment
# ----------------------------------------------------------------------

def _linearize_segment(model: MasModel, gains: ObserverGains):
    """Exact affine form of the coupled plant/observer dynamics.

    The stacked segment state is z = [x; xbar_1..m; xhat^(1..m)].  Columns
    are extracted by driving the blockwise equations with basis vectors,
    which is exact because everything is linear.
    """
    n = model.n
    dim = n + obs_mod.observer_dim(model)

    def deriv(z, u=None, w=None, v=None):
        x = z[:n]
        state = obs_mod.unpack_observer_state(model, z[n:])
        y = mas_mod.plant_output(model, x)
        if v is not None:
            y = y + v
        ds = obs_mod.observer_derivative(model, gains, state, u, y)
        dx = mas_mod.plant_derivative(model, x, u)
        if w is not None:
            dx = dx + w
        return np.concatenate([dx, obs_mod.pack_observer_state(model, ds)])

    base = deriv(np.zeros(dim))
    m_mat = np.empty((dim, dim))
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = 1.0
        m_mat[:, c] = deriv(e) - base
    g_u = np.empty((dim, model.k))
    for c in range(model.k):
        e = np.zeros(model.k)
        e[c] = 1.0
        g_u[:, c] = deriv(np.zeros(dim), u=e) - base
    g_w = np.empty((dim, model.n))
    for c in range(model.n):
        e = np.zeros(model.n)
        e[c] = 1.0
        g_w[:, c] = deriv(np.zeros(dim), w=e) - base
    g_v = np.empty((dim, model.p))
    for c in range(model.p):
        e = np.zeros(model.p)
        e[c] = 1.0
        g_v[:, c] = deriv(np.zeros(dim), v=e) - base
    return m_mat, g_u, g_w, g_v


class _StackedInput:
    """Fast stacked input evaluator for the current label set."""

    def __init__(self, model, labels, signals):
        self.k = model.k
        self.const = np.zeros(model.k)
        self.amp = np.zeros(model.k)
        self.freq = np.zeros(model.k)
        self.phase = np.zeros(model.k)
        self.pieces = []
        signals = signals or {}
        for pos, lab in enumerate(labels):
            sl = model.input_slice(pos + 1)
            sig = signals.get(lab)
            if sig is None:
                continue
            width = sl.stop - sl.start
            probe = sig.evaluate(0.0)
            if probe.shape != (width,):
                raise DimensionError(
                    f"input signal for agent {lab} yields shape {probe.shape}, "
                    f"expected ({width},)")
            if isinstance(sig, ConstantInput):
                self.const[sl] = probe
            elif isinstance(sig, SinusoidInput):
                self.amp[sl] = np.asarray(sig.amplitude, float)
                self.freq[sl] = sig.frequency
                self.phase[sl] = np.asarray(sig.phase, float)
            else:
                self.pieces.append((sl, sig))
        self.has_sin = bool(np.any(self.amp != 0.0))

    def __call__(self, t):
        u = self.const.copy()
        if self.has_sin:
            u += self.amp * np.sin(self.freq * t + self.phase)
        for sl, sig in self.pieces:
            u[sl] = sig.evaluate(t)
        return u


# ----------------------------------------------------------------------
# the runner
# ----------------------------------------------------------------------

def _all_labels(cfg: ScenarioConfig):
    labels = set(range(1, cfg.model.m + 1))
    dims = {i: cfg.model.state_dims[i - 1] for i in labels}
    for event in cfg.events:
        if isinstance(event, JoinEvent):
            labels.add(event.label)
            dims[event.label] = np.atleast_2d(np.asarray(event.a_block, float)).shape[0]
    ordered = tuple(sorted(labels))
    return ordered, dims


def _initial_observer_state(cfg: ScenarioConfig) -> ObserverState:
    if cfg.initial_estimates == "zero":
        return obs_mod.zero_observer_state(cfg.model)
    spec = cfg.initial_estimates
    state = obs_mod.zero_observer_state(cfg.model)
    for lab, vec in spec.get("xbar", {}).items():
        state.xbar[int(lab)] = np.asarray(vec, float)
    for lab, vec in spec.get("xhat", {}).items():
        state.xhat[int(lab)] = np.asarray(vec, float)
    return state


def _gain_snapshot(t, labels, gains: ObserverGains, report):
    return {
        "time": t,
        "labels": list(labels),
        "mu": gains.mu,
        "input_mode": gains.input_mode,
        "luenberger": {str(lab): gains.luenberger[pos + 1].tolist()
                       for pos, lab in enumerate(labels)},
        "weights": {str(lab): gains.weights[pos + 1].tolist()
                    for pos, lab in enumerate(labels)},
        "report": {k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                   for k, v in (report or {}).items()},
    }


def run_scenario(cfg: ScenarioConfig) -> SimulationTrace:
    """Integrate one scenario and return its trace.

    Event times are snapped to the step grid (the snap is logged); at an
    event the simulator rebuilds the model, gains and estimate vectors and
    continues on the same grid, so the sample recorded at the event time
    already reflects the edited network.
    """
    model = cfg.model
    policy = cfg.policy
    labels = tuple(model.agents)
    ordering = _validate_model_for_run(model)
    gains, report = resolve_gains(model, policy, labels)
    rng = np.random.default_rng(cfg.seed)

    total_steps = int(round(cfg.t_end / cfg.dt))
    if total_steps < 1:
        raise DomainError("t_end shorter than one step")
    event_steps = []
    events_log = []
    for event in cfg.events:
        k = int(round(event.time / cfg.dt))
        k = min(max(k, 1), total_steps - 1)
        snap = k * cfg.dt - event.time
        event_steps.append(k)
        events_log.append({
            "time": k * cfg.dt,
            "requested_time": event.time,
            "snap": snap,
            "kind": "join" if isinstance(event, JoinEvent) else "leave",
            "label": event.label,
        })
    if any(k2 <= k1 for k1, k2 in zip(event_steps, event_steps[1:])):
        raise DomainError("events collapse onto the same grid step; reduce dt")

    all_labels, dims = _all_labels(cfg)
    col_of = {}
    start = 0
    for lab in all_labels:
        col_of[lab] = slice(start, start + dims[lab])
        start += dims[lab]
    n_total = start

    record_idx = sorted({k for k in range(0, total_steps + 1)
                         if k % cfg.record_every == 0}
                        | set(event_steps) | {total_steps})
    rec_pos = {k: idx for idx, k in enumerate(record_idx)}
    n_rec = len(record_idx)

    times = np.array([k * cfg.dt for k in record_idx])
    x_rec = np.full((n_rec, n_total), np.nan)
    xbar_rec = np.full((n_rec, n_total), np.nan)
    xhat_rec = {lab: np.full((n_rec, n_total), np.nan) for lab in all_labels}

    # initial segment state
    if cfg.initial_state is None:
        x = np.zeros(model.n)
    else:
        x = np.asarray(cfg.initial_state, float)
        if x.shape != (model.n,):
            raise DimensionError(f"initial state must have shape ({model.n},)")
    state = _initial_observer_state(cfg)
    z = np.concatenate([x, obs_mod.pack_observer_state(model, state)])
    gain_log = [_gain_snapshot(0.0, labels, gains, report)]

    def record(k, z_now, model_now, labels_now):
        idx = rec_pos.get(k)
        if idx is None:
            return
        n_now = model_now.n
        x_now = z_now[:n_now]
        st = obs_mod.unpack_observer_state(model_now, z_now[n_now:])
        for pos, lab in enumerate(labels_now):
            sl_model = model_now.state_slice(pos + 1)
            x_rec[idx, col_of[lab]] = x_now[sl_model]
            xbar_rec[idx, col_of[lab]] = st.xbar[pos + 1]
        for pos, lab in enumerate(labels_now):
            est = st.xhat[pos + 1]
            for pos2, lab2 in enumerate(labels_now):
                xhat_rec[lab][idx, col_of[lab2]] = est[model_now.state_slice(pos2 + 1)]

    pending = list(zip(event_steps, cfg.events))
    seg_start = 0
    noise_on = cfg.noise.process > 0 or cfg.noise.measurement > 0
    while True:
        seg_end = pending[0][0] if pending else total_steps
        m_mat, g_u, g_w, g_v = _linearize_segment(model, gains)
        u_fn = _StackedInput(model, labels, cfg.inputs)
        g_extra = np.zeros(m_mat.shape[0])

        def f(tt, zz, m_mat=m_mat, g_u=g_u, u_fn=u_fn):
            return m_mat @ zz + g_u @ u_fn(tt) + g_extra

        for k in range(seg_start, seg_end):
            record(k, z, model, labels)
            if noise_on:
                g_extra = np.zeros(m_mat.shape[0])
                if cfg.noise.process > 0:
                    g_extra += g_w @ rng.uniform(-cfg.noise.process,
                                                 cfg.noise.process, model.n)
                if cfg.noise.measurement > 0:
                    g_extra += g_v @ rng.uniform(-cfg.noise.measurement,
                                                 cfg.noise.measurement, model.p)
            z = integrate_step(f, z, k * cfg.dt, cfg.dt)
        if not pending:
            record(total_steps, z, model, labels)
            break
        k_event, event = pending.pop(0)
        n_now = model.n
        state = obs_mod.unpack_observer_state(model, z[n_now:])
        model, policy, gains, state, x, labels, report = apply_event(
            model, policy, state, z[:n_now], event, labels)
        z = np.concatenate([x, obs_mod.pack_observer_state(model, state)])
        gain_log.append(_gain_snapshot(k_event * cfg.dt, labels, gains, report))
        seg_start = k_event

    pair_errors = {}
    bar_errors = {}
    total_sq = np.zeros(n_rec)
    for j in all_labels:
        xj = x_rec[:, col_of[j]]
        bar = np.linalg.norm(xbar_rec[:, col_of[j]] - xj, axis=1)
        bar_errors[j] = bar
        total_sq += np.where(np.isnan(bar), 0.0, bar ** 2)
        for i in all_labels:
            err = np.linalg.norm(xhat_rec[i][:, col_of[j]] - xj, axis=1)
            pair_errors[(i, j)] = err
            total_sq += np.where(np.isnan(err), 0.0, err ** 2)
    total_error = np.sqrt(total_sq)

    return SimulationTrace(
        labels=all_labels,
        state_dims=dims,
        times=times,
        x=x_rec,
        xbar=xbar_rec,
        xhat=xhat_rec,
        pair_errors=pair_errors,
        bar_errors=bar_errors,
        total_error=total_error,
        events=events_log,
        gain_log=gain_log,
        meta={"dt": cfg.dt, "t_end": cfg.t_end, "seed": cfg.seed,
              "record_every": cfg.record_every, "ordering": list(ordering)},
    )


# ----------------------------------------------------------------------
# trace summaries and checks
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TraceSummary:
    pair_final: dict
    pair_sup: dict
    total_final: float
    total_sup: float
    settling_times: dict


def error_norms(trace: SimulationTrace, settle_threshold: float = 1e-3) -> TraceSummary:
    """Per-pair supremum/final norms and settling times onto a threshold."""
    pair_final = {}
    pair_sup = {}
    settling = {}
    for key, series in trace.pair_errors.items():
        finite = series[~np.isnan(series)]
        pair_final[key] = float(series[-1]) if not np.isnan(series[-1]) else None
        pair_sup[key] = float(finite.max()) if finite.size else None
        above = np.where(~np.isnan(series) & (series >= settle_threshold))[0]
        if above.size == 0:
            settling[key] = 0.0
        elif above[-1] + 1 < len(trace.times):
            settling[key] = float(trace.times[above[-1] + 1])
        else:
            settling[key] = None  # never settles inside the horizon
    return TraceSummary(
        pair_final=pair_final,
        pair_sup=pair_sup,
        total_final=float(trace.total_error[-1]),
        total_sup=float(np.nanmax(trace.total_error)),
        settling_times=settling,
    )


def roundoff_floor(trace: SimulationTrace) -> np.ndarray:
    """Double-precision floor for the recomputed error norms.

    Errors are differences of stored states, so once the plant magnitude
    dwarfs the true error the recomputed norm saturates near machine epsilon
    times the state magnitude; the multiplier covers the mild step-to-step
    accumulation observed on unstable plants.
    """
    return FLOAT_FLOOR_SAFETY * MACHINE_EPS * trace.state_magnitude()


def check_exponential_envelope(trace: SimulationTrace, kappa: float, eta: float,
                               rel_slack: float = 1e-6):
    """Verify ||E(t)|| <= kappa exp(-eta t) ||E(0)|| up to the float floor.

    The floor only matters once the envelope falls below machine precision
    relative to the plant magnitude (unstable plants reach that within a
    simulated minute); before that the exponential term dominates and the
    check is exact up to ``rel_slack``.  Returns (ok, worst_excess) with the
    excess in units of the local bound.
    """
    e0 = trace.total_error[0]
    bound = kappa * np.exp(-eta * trace.times) * e0 * (1.0 + rel_slack) \
        + roundoff_floor(trace)
    excess = (trace.total_error - bound) / np.maximum(bound, 1e-300)
    worst = float(np.nanmax(excess))
    return worst <= 0.0, worst


def check_iss_bound(trace: SimulationTrace, kappa: float, eta: float,
                    b_norm: float, u_bar: float, slack: float = 0.10):
    """Verify the exponential-plus-offset error bound along a trace."""
    e0 = trace.total_error[0]
    bound = obs_mod.iss_error_bound(kappa, eta, e0, b_norm, u_bar, trace.times)
    bound = bound * (1.0 + slack)
    excess = (trace.total_error - bound) / np.maximum(bound, 1e-300)
    worst = float(np.nanmax(excess))
    return worst <= 0.0, worst


# ----------------------------------------------------------------------
# CSV / metadata output
# ----------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def trace_columns(trace: SimulationTrace):
    """Column names in file order (states, estimates, then error norms)."""
    cols = ["t"]
    for lab in trace.labels:
        cols += [f"x[{lab}][{c + 1}]" for c in range(trace.state_dims[lab])]
    for lab in trace.labels:
        cols += [f"xbar[{lab}][{c + 1}]" for c in range(trace.state_dims[lab])]
    for i in trace.labels:
        for j in trace.labels:
            cols += [f"xhat[{i}][{j}][{c + 1}]" for c in range(trace.state_dims[j])]
    for i in trace.labels:
        for j in trace.labels:
            cols.append(f"err[{i}][{j}]")
    for j in trace.labels:
        cols.append(f"errbar[{j}]")
    cols.append("E_norm")
    return cols


def trace_matrix(trace: SimulationTrace) -> np.ndarray:
    """Trace as one dense matrix matching :func:`trace_columns`."""
    blocks = [trace.times[:, None], trace.x, trace.xbar]
    blocks += [trace.xhat[i] for i in trace.labels]
    blocks += [trace.pair_errors[(i, j)][:, None]
               for i in trace.labels for j in trace.labels]
    blocks += [trace.bar_errors[j][:, None] for j in trace.labels]
    blocks.append(trace.total_error[:, None])
    return np.hstack(blocks)


def write_trace_csv(trace: SimulationTrace, path, subsample: int = 1) -> None:
    full = trace_matrix(trace)
    matrix = full[::subsample]
    # keep the final sample even when subsampling skips it
    if (len(trace.times) - 1) % subsample != 0:
        matrix = np.vstack([matrix, full[-1]])
    lines = [",".join(trace_columns(trace))]
    for row in matrix:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path):
    """Columns and data of a trace file written by :func:`write_trace_csv`."""
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    data = np.array([[float(tok) for tok in line.split(",")] for line in text[1:]])
    return header, data


def policy_to_json(policy: GainPolicy) -> dict:
    out = {"margin": policy.margin, "mu": policy.mu, "m_bar": policy.m_bar,
           "input_mode": policy.input_mode}
    if isinstance(policy.luenberger, dict):
        out["luenberger"] = {str(k): np.asarray(v, float).tolist()
                             for k, v in policy.luenberger.items()}
    else:
        out["luenberger"] = policy.luenberger
    if isinstance(policy.weights, dict):
        out["weights"] = {str(k): np.asarray(v, float).tolist()
                          for k, v in policy.weights.items()}
    else:
        out["weights"] = policy.weights
    return out


def policy_from_json(obj: dict) -> GainPolicy:
    luenberger = obj.get("luenberger", "auto")
    if isinstance(luenberger, dict):
        luenberger = {int(k): np.asarray(v, float) for k, v in luenberger.items()}
    weights = obj.get("weights", "binary")
    if isinstance(weights, dict):
        weights = {int(k): np.asarray(v, float) for k, v in weights.items()}
    return GainPolicy(luenberger=luenberger, margin=obj.get("margin", 1.0),
                      weights=weights, mu=obj.get("mu", "global"),
                      m_bar=obj.get("m_bar"), input_mode=obj.get("input_mode", "full"))


def event_to_json(event) -> dict:
    if isinstance(event, JoinEvent):
        out = {"time": event.time, "join": {
            "label": event.label,
            "A": np.asarray(event.a_block, float).tolist(),
            "C": np.asarray(event.c_block, float).tolist(),
            "state": list(event.initial_state),
            "state_couplings": [[i, j, np.asarray(b, float).tolist()]
                                for i, j, b in event.state_couplings],
            "output_couplings": [[i, j, np.asarray(b, float).tolist()]
                                 for i, j, b in event.output_couplings],
            "communication": [list(e) for e in event.communication],
        }}
        if event.b_block is not None:
            out["join"]["B"] = np.asarray(event.b_block, float).tolist()
        if event.luenberger is not None:
            out["join"]["luenberger"] = np.asarray(event.luenberger, float).tolist()
        return out
    if isinstance(event, LeaveEvent):
        out = {"time": event.time, "leave": {"label": event.label}}
        if event.communication is not None:
            out["leave"]["communication"] = [list(e) for e in event.communication]
        return out
    raise TypeError(f"unknown event {event!r}")


def event_from_json(obj: dict):
    if "join" in obj:
        spec = obj["join"]
        return JoinEvent(
            time=float(obj["time"]), label=int(spec["label"]),
            a_block=spec["A"], c_block=spec["C"], initial_state=tuple(spec["state"]),
            b_block=spec.get("B"),
            state_couplings=tuple((int(i), int(j), b)
                                  for i, j, b in spec.get("state_couplings", [])),
            output_couplings=tuple((int(i), int(j), b)
                                   for i, j, b in spec.get("output_couplings", [])),
            communication=tuple((int(s), int(d), float(w))
                                for s, d, w in spec.get("communication", [])),
            luenberger=spec.get("luenberger"))
    if "leave" in obj:
        spec = obj["leave"]
        comm = spec.get("communication")
        if comm is not None:
            comm = tuple((int(s), int(d), float(w)) for s, d, w in comm)
        return LeaveEvent(time=float(obj["time"]), label=int(spec["label"]),
                          communication=comm)
    raise ValueError("event object needs a 'join' or 'leave' section")


def scenario_to_json(cfg: ScenarioConfig) -> dict:
    out = {
        "kind": "mas",
        "model": mas_mod.model_to_json(cfg.model),
        "gains": policy_to_json(cfg.policy),
        "noise": {"process": cfg.noise.process, "measurement": cfg.noise.measurement},
        "events": [event_to_json(e) for e in cfg.events],
        "t_end": cfg.t_end, "dt": cfg.dt, "seed": cfg.seed,
        "record_every": cfg.record_every,
    }
    if cfg.inputs:
        out["inputs"] = {str(lab): signal_to_json(sig) for lab, sig in cfg.inputs.items()}
    if cfg.initial_state is not None:
        out["initial_state"] = list(np.asarray(cfg.initial_state, float))
    if cfg.initial_estimates != "zero":
        out["initial_estimates"] = {
            part: {str(k): list(np.asarray(v, float)) for k, v in spec.items()}
            for part, spec in cfg.initial_estimates.items()}
    return out


def scenario_from_json(obj: dict) -> ScenarioConfig:
    if obj.get("kind", "mas") != "mas":
        raise ValueError(f"not a mas scenario: kind={obj.get('kind')!r}")
    inputs = None
    if "inputs" in obj:
        inputs = {int(lab): signal_from_json(sig) for lab, sig in obj["inputs"].items()}
    noise = obj.get("noise", {})
    initial_estimates = obj.get("initial_estimates", "zero")
    if initial_estimates != "zero":
        initial_estimates = {part: {int(k): np.asarray(v, float) for k, v in spec.items()}
                             for part, spec in initial_estimates.items()}
    return ScenarioConfig(
        model=mas_mod.model_from_json(obj["model"]),
        policy=policy_from_json(obj.get("gains", {})),
        inputs=inputs,
        noise=NoiseSpec(process=float(noise.get("process", 0.0)),
                        measurement=float(noise.get("measurement", 0.0))),
        events=tuple(event_from_json(e) for e in obj.get("events", [])),
        t_end=float(obj["t_end"]), dt=float(obj["dt"]),
        seed=int(obj.get("seed", 0)),
        record_every=int(obj.get("record_every", 1)),
        initial_state=(None if "initial_state" not in obj
                       else tuple(obj["initial_state"])),
        initial_estimates=initial_estimates,
    )


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(cfg), indent=2) + "\n")


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_json(json.loads(Path(path).read_text()))


def write_metadata(path, trace: SimulationTrace, config_json=None) -> None:
    summary = error_norms(trace)
    payload = {
        "format": "masobs-trace-1",
        "meta": trace.meta,
        "events": trace.events,
        "gains": trace.gain_log,
        "summary": {
            "total_final": summary.total_final,
            "total_sup": summary.total_sup,
            "pair_final": {f"{i}->{j}": v for (i, j), v in summary.pair_final.items()},
            "pair_sup": {f"{i}->{j}": v for (i, j), v in summary.pair_sup.items()},
        },
    }
    if config_json is not None:
        payload["config"] = config_json
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
