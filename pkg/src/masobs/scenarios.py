"""Built-in benchmark scenarios and the experiment registry.

Two families ship with the package: a three-agent heterogeneous MAS with a
state/output coupling (run clean, with bounded noise, or with an agent
joining or leaving mid-run under fully distributed gain selection), and a
six-agent planar localization ring with one anchored agent (run with known
or unknown inputs).  Each registry entry bundles a scenario with the checks
the reproduce command evaluates against its trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import localization as loc_mod
from . import observer as obs_mod
from . import sim as sim_mod
from .graphs import DirectedGraph
from .localization import SensingGraph, build_localization_mas, dagc, localization_gains
from .mas import MasModel
from .sim import (GainPolicy, JoinEvent, LeaveEvent, NoiseSpec, ScenarioConfig,
                  SinusoidInput, error_norms)

ENVELOPE_FIT_HORIZON = 20.0
ENVELOPE_FIT_SAMPLES = 200


# ----------------------------------------------------------------------
# three-agent coupled MAS
# ----------------------------------------------------------------------

def coupled_triple_model() -> MasModel:
    """Heterogeneous three-agent MAS with one state and one output coupling.

    Agent 1 carries a two-dimensional unstable block measured in full;
    agents 2 and 3 are unstable scalars; agent 2 additionally senses a mix
    of agent 1's state.  The communication ring 1->2->3->1 is strongly
    connected and the interaction graphs share a topological ordering.
    """
    a1 = [[1.2, 1.0], [0.0, 0.8]]
    return MasModel.build(
        a_diag=[a1, [[1.03]], [[0.3]]],
        c_diag=[np.eye(2), [[1.0]], [[1.0]]],
        communication=DirectedGraph.from_edges(3, [(1, 2), (2, 3), (3, 1)]),
        a_couplings={(2, 1): [[0.8, 1.0]]},
        c_couplings={(2, 1): [[0.8, 1.2]]},
    )


def coupled_triple_gains() -> GainPolicy:
    return GainPolicy(
        luenberger={1: np.diag([4.2, 4.8]), 2: [[3.0]], 3: [[2.0]]},
        weights="binary", mu=10.0)


def coupled_triple_scenario(noise: bool = False, t_end: float = None,
                            dt: float = 1e-3, seed: int = 7) -> ScenarioConfig:
    if t_end is None:
        t_end = 30.0 if noise else 20.0
    return ScenarioConfig(
        model=coupled_triple_model(),
        policy=coupled_triple_gains(),
        noise=NoiseSpec(process=0.05, measurement=0.05) if noise else NoiseSpec(),
        t_end=t_end, dt=dt, seed=seed, record_every=10,
        initial_state=(0.5, -0.5, 0.5, 0.5),
    )


# ----------------------------------------------------------------------
# homogeneous plug-in / plug-out MAS
# ----------------------------------------------------------------------

_PLUGIN_A = ((1.2, 1.0), (0.0, 0.8))
_PLUGIN_C_COUPLING = ((1.2, 0.0), (0.0, 0.8))
_PLUGIN_F = ((4.2, 0.0), (0.0, 4.8))
_PLUGIN_M_BAR = 4


def plugin_base_model() -> MasModel:
    """Homogeneous three-agent chain: identical unstable blocks, identity
    output, and an output coupling along 1->2->3."""
    return MasModel.build(
        a_diag=[_PLUGIN_A] * 3,
        c_diag=[np.eye(2)] * 3,
        communication=DirectedGraph.from_edges(3, [(1, 2), (2, 3), (3, 1)]),
        c_couplings={(2, 1): _PLUGIN_C_COUPLING, (3, 2): _PLUGIN_C_COUPLING},
    )


def plugin_policy(mu) -> GainPolicy:
    """Fully distributed policy: shared Luenberger gain, in-degree-normalized
    consensus weights, and a uniform integer coupling gain."""
    return GainPolicy(
        luenberger={1: _PLUGIN_F, 2: _PLUGIN_F, 3: _PLUGIN_F},
        weights="normalized-in", mu=mu, m_bar=_PLUGIN_M_BAR)


def plugin_join_scenario(mu=572, t_end: float = 24.0, dt: float = 1e-4,
                         event_time: float = 15.0) -> ScenarioConfig:
    """A fourth homogeneous agent joins mid-run and starts estimating from
    zero; mu stays fixed at its agent-cap value and the weights rebuild."""
    join = JoinEvent(
        time=event_time, label=4,
        a_block=_PLUGIN_A, c_block=np.eye(2),
        initial_state=(0.05, 0.05),
        output_couplings=((4, 3, _PLUGIN_C_COUPLING),),
        communication=((1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (4, 1, 1.0)),
        luenberger=_PLUGIN_F,
    )
    return ScenarioConfig(
        model=plugin_base_model(), policy=plugin_policy(mu),
        events=(join,), t_end=t_end, dt=dt, seed=3, record_every=200,
        initial_state=(0.05, -0.05, 0.05, -0.05, 0.05, -0.05),
    )


def plugin_leave_scenario(mu=572, t_end: float = 24.0, dt: float = 1e-4,
                          event_time: float = 15.0) -> ScenarioConfig:
    """Agent 2 departs mid-run; the survivors re-link over a two-agent loop."""
    leave = LeaveEvent(
        time=event_time, label=2,
        communication=((1, 3, 1.0), (3, 1, 1.0)),
    )
    return ScenarioConfig(
        model=plugin_base_model(), policy=plugin_policy(mu),
        events=(leave,), t_end=t_end, dt=dt, seed=3, record_every=200,
        initial_state=(0.05, -0.05, 0.05, -0.05, 0.05, -0.05),
    )


# ----------------------------------------------------------------------
# six-agent localization ring
# ----------------------------------------------------------------------

RING_IDS = {1: 10, 2: 20, 3: 30, 4: 40, 5: 50, 6: 60}
RING_POSITIONS = ((5.0, 7.0), (3.0, 4.0), (5.0, 2.0), (10.0, 2.0),
                  (12.0, 4.0), (10.0, 7.0))
_RING_GAIN_BLOCK = ((-1.0, 0.0), (0.0, -0.5))


def ring_sensing_graph() -> SensingGraph:
    """Six agents sensing around a ring, agent 2 anchored to the origin."""
    edges = ((2, 1), (3, 2), (4, 3), (5, 4), (6, 5), (1, 6))
    return SensingGraph(6, edges, anchors=(2,))


def ring_communication() -> DirectedGraph:
    edges = []
    for i in range(1, 7):
        j = i % 6 + 1
        edges += [(i, j), (j, i)]
    return DirectedGraph.from_edges(6, edges)


def ring_localization_model(order: str = "single"):
    """Oriented ring sensing turned into an integrator MAS, plus its gains."""
    assignment = dagc(ring_sensing_graph(), ids=RING_IDS)
    model = build_localization_mas(assignment, ring_communication(), order=order, h=2)
    gains = localization_gains(model, weight_rule="binary", gain_block=_RING_GAIN_BLOCK)
    return model, gains, assignment


def ring_localization_scenario(known_input: bool = True, t_end: float = 200.0,
                               dt: float = 1e-2, seed: int = 11) -> ScenarioConfig:
    model, gains, _ = ring_localization_model()
    policy = GainPolicy(
        luenberger={i: gains.luenberger[i] for i in model.agents},
        weights="binary", mu=1.0,
        input_mode="full" if known_input else "own-only")
    signal = SinusoidInput(amplitude=(-0.1, 0.1), frequency=0.01,
                           phase=(0.0, math.pi / 2.0))
    kinematics = loc_mod.AgentKinematics(order="single", h=2,
                                         positions=RING_POSITIONS)
    return ScenarioConfig(
        model=model, policy=policy,
        inputs={i: signal for i in model.agents},
        t_end=t_end, dt=dt, seed=seed, record_every=10,
        initial_state=tuple(kinematics.stacked_state()),
    )


# ----------------------------------------------------------------------
# experiment registry
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Experiment:
    key: str
    title: str
    config: ScenarioConfig
    checks: tuple  # of (name, fn(trace) -> (ok, detail))


def _fit_envelope_for(config: ScenarioConfig):
    gains, _ = sim_mod.resolve_gains(config.model, config.policy)
    dynamics = obs_mod.assemble_error_dynamics(config.model, gains)
    kappa, eta = obs_mod.fit_decay_envelope(
        dynamics.r, t_max=ENVELOPE_FIT_HORIZON, samples=ENVELOPE_FIT_SAMPLES)
    return gains, dynamics, kappa, eta


def _check_final_pairs(threshold):
    def check(trace):
        summary = error_norms(trace)
        worst = max(v for v in summary.pair_final.values() if v is not None)
        return worst < threshold, f"worst final pair error {worst:.3e} (limit {threshold:g})"
    return check


def _check_final_total(threshold):
    def check(trace):
        value = float(trace.total_error[-1])
        return value < threshold, f"final stacked error {value:.3e} (limit {threshold:g})"
    return check


def _experiment_triple_basic() -> Experiment:
    config = coupled_triple_scenario(noise=False)
    _, _, kappa, eta = _fit_envelope_for(config)

    def check_envelope(trace):
        ok, worst = sim_mod.check_exponential_envelope(trace, kappa, eta)
        return ok, f"worst envelope excess {worst:.3e} (kappa={kappa:.3g}, eta={eta:.3g})"

    return Experiment(
        key="5A-basic", title="three-agent convergence, known inputs",
        config=config,
        checks=(("final pair errors below 1e-3", _check_final_pairs(1e-3)),
                ("exponential envelope", check_envelope)))


def _experiment_triple_noise() -> Experiment:
    config = coupled_triple_scenario(noise=True)
    gains, _, kappa, eta = _fit_envelope_for(config)
    maps = obs_mod.error_disturbance_matrices(config.model, gains)
    g_norm = float(np.linalg.norm(np.hstack([maps["process"], maps["measurement"]]), 2))
    d_bar = 0.05 * math.sqrt(config.model.n + config.model.p)

    def check_iss(trace):
        ok, worst = sim_mod.check_iss_bound(trace, kappa, eta, g_norm, d_bar, slack=0.10)
        return ok, f"worst bound excess {worst:.3e}"

    def check_finite(trace):
        sup = float(np.nanmax(trace.total_error))
        return math.isfinite(sup), f"sup stacked error {sup:.3e}"

    return Experiment(
        key="5A-noise", title="three-agent run under bounded noise",
        config=config,
        checks=(("error stays finite", check_finite),
                ("error within disturbance bound", check_iss)))


def _experiment_plugin(kind: str) -> Experiment:
    if kind == "join":
        config = plugin_join_scenario()
        title = "homogeneous MAS, agent 4 joins mid-run"
        key = "5A-join"
    else:
        config = plugin_leave_scenario()
        title = "homogeneous MAS, agent 2 leaves mid-run"
        key = "5A-leave"
    return Experiment(
        key=key, title=title, config=config,
        checks=(("post-event stacked error below 1e-2", _check_final_total(1e-2)),))


def _experiment_ring(known: bool) -> Experiment:
    config = ring_localization_scenario(known_input=known)
    if known:
        return Experiment(
            key="5B-known", title="localization ring, inputs shared",
            config=config,
            checks=(("final position errors below 1e-3", _check_final_pairs(1e-3)),))
    gains, _, kappa, eta = _fit_envelope_for(config)
    maps = obs_mod.error_disturbance_matrices(config.model, gains)
    g_norm = float(np.linalg.norm(maps["unknown_input"], 2))
    u_bar = 0.1 * math.sqrt(config.model.m)

    def check_iss(trace):
        ok, worst = sim_mod.check_iss_bound(trace, kappa, eta, g_norm, u_bar, slack=0.10)
        return ok, f"worst bound excess {worst:.3e}"

    def check_bounded(trace):
        sup = float(np.nanmax(trace.total_error))
        return math.isfinite(sup), f"sup stacked error {sup:.3e}"

    return Experiment(
        key="5B-unknown", title="localization ring, inputs private",
        config=config,
        checks=(("error stays bounded", check_bounded),
                ("error within unknown-input bound", check_iss)))


_BUILDERS = {
    "5A-basic": _experiment_triple_basic,
    "5A-noise": _experiment_triple_noise,
    "5A-join": lambda: _experiment_plugin("join"),
    "5A-leave": lambda: _experiment_plugin("leave"),
    "5B-known": lambda: _experiment_ring(True),
    "5B-unknown": lambda: _experiment_ring(False),
}

ALIASES = {
    "coupled-basic": "5A-basic",
    "coupled-noise": "5A-noise",
    "coupled-join": "5A-join",
    "coupled-leave": "5A-leave",
    "ring-known": "5B-known",
    "ring-unknown": "5B-unknown",
}

EXPERIMENT_KEYS = tuple(_BUILDERS)


def build_experiment(key: str) -> Experiment:
    key = ALIASES.get(key, key)
    try:
        factory = _BUILDERS[key]
    except KeyError:
        raise KeyError(f"unknown experiment {key!r}; choose from {list(_BUILDERS)}") from None
    return factory()
