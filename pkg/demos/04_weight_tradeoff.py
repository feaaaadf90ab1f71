"""
Delay versus power across the weight
====================================

The weight w prices transmit power against queueing delay. Raising it makes
the optimal policy wait longer and batch more requests into each multicast.
This runs the same sweep as ``hetcast sweep --config configs/fig4.yaml``
with shorter simulations.
"""

# %%
import dataclasses
from pathlib import Path

from hetcast import SimPlan, load_config
from hetcast.experiments import run_sweep

spec = load_config(Path(__file__).resolve().parent.parent / "configs" / "fig4.yaml")
spec = spec.replace(sim=SimPlan(horizon=20_000, replications=5, warmup=500, seed=1),
                    sweep=dataclasses.replace(spec.sweep, values=(0.5, 1.0, 2.0, 3.0)))
rows = run_sweep(spec).rows

# %%
# Power falls and delay rises with w under the optimal policy; the
# decomposition policy stays close to it and well below the base policy.
print(f"{'w':>4} {'policy':10s} {'delay':>8} {'power':>8} {'network':>9} {'+/-':>7}")
for r in rows:
    print(f"{r['axis_value']:4} {r['policy']:10s} {r['mean_delay']:8.3f} {r['mean_power']:8.3f} "
          f"{r['mean_network']:9.3f} {r['ci95_network']:7.3f}")
