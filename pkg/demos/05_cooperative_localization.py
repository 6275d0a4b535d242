"""
Cooperative localization over an anchored sensing ring
======================================================

Six planar agents measure relative positions around a ring; only agent 2
knows where it actually is.  Raw relative sensing produces a cyclic graph,
so the agents first orient every sensing pair by hop distance from the
anchored set (IDs break ties), which always yields a DAG and keeps the
observability conditions intact.  The resulting integrator network then
runs the distributed observer: with shared inputs every agent localizes
everyone exactly; with private inputs the errors stay bounded instead.
"""

import numpy as np

from masobs.localization import assign_layers, dagc
from masobs.scenarios import (RING_IDS, ring_localization_scenario,
                              ring_sensing_graph)
from masobs.sim import error_norms, run_scenario

sg = ring_sensing_graph()
print("sensing pairs:", sorted((min(e), max(e)) for e in sg.relative_edges))
print("anchored agents:", sg.anchors)
print("hop layers:", assign_layers(sg))

oriented = dagc(sg, ids=RING_IDS)
print("oriented measurement edges (measured -> owner):", oriented.oriented_edges)

known = run_scenario(ring_localization_scenario(known_input=True))
summary = error_norms(known)
print(f"\nshared inputs, t = {known.times[-1]:.0f}:")
print(f"  worst final position error: "
      f"{max(v for v in summary.pair_final.values()):.2e}")

private = run_scenario(ring_localization_scenario(known_input=False))
print(f"private inputs, t = {private.times[-1]:.0f}:")
print(f"  stacked error: start {private.total_error[0]:.1f}, "
      f"sup {np.nanmax(private.total_error):.1f}, "
      f"end {private.total_error[-1]:.2f}")
print("  (bounded, not vanishing: the observers never learn the other inputs)")
