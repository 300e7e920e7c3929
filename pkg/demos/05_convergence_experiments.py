"""
Convergence experiments end to end
==================================

The experiment driver sweeps schedules and dimensions, writes one CSV per
scenario in a fixed schema, and the standalone ``plots`` tool turns those
CSVs into annotated figures.  Fits here and in the figures use the same
least-squares formula, so they cannot disagree.
"""

import math
import tempfile
from pathlib import Path

import numpy as np

from absdiff.experiments import (
    ExperimentConfig,
    fit_slope,
    run_forward_convergence,
    run_scenario,
    run_tau_sweep,
)

out = Path(tempfile.mkdtemp(prefix="absdiff-demo-"))

# exponential decay of the initialization gap, exact in one pass
fwd = run_forward_convergence(ExperimentConfig(
    scenario="forward", S=3, q0_base="point:0", d_list=(1, 2),
    T_list=tuple(np.linspace(4.0, 12.0, 9)),
))
one = sorted((r.T, r.kl) for r in fwd if r.d == 1)
slope = fit_slope([T for T, _ in one], [math.log(k) for _, k in one])
print(f"initialization gap: log-KL slope vs T = {slope:.6f} (exact decay -1)")

# leap-sampler discretization error shrinks as the grid refines
tau = run_tau_sweep(ExperimentConfig(
    scenario="tau", S=3, q0_base=[0.5, 0.3, 0.2], d_list=(1, 2),
    T_list=(8.0,), c_list=(0.4, 0.2, 0.1, 0.05), delta_list=(1e-3,),
))
for d in (1, 2):
    rows = sorted((r.N, r.kl) for r in tau if r.d == d)
    sl = fit_slope([math.log(n) for n, _ in rows], [math.log(k) for _, k in rows])
    print(f"leap sampler d={d}: KL-vs-N log-log slope = {sl:.3f}")

# the same data as CSV + figure via the standalone renderer
csv_path = run_scenario(ExperimentConfig(
    scenario="forward", S=3, q0_base="point:0", d_list=(1,),
    T_list=tuple(np.linspace(4.0, 12.0, 9)), out=str(out),
))
print(f"\nwrote {csv_path}")
print("render it with the standalone tool, e.g.:")
print(f'  echo \'{{"csv": ["{csv_path}"], "x": "T", "y": "kl",'
      f' "out": "{out}/forward.png"}}\' > {out}/spec.json')
print(f"  plots {out}/spec.json")
