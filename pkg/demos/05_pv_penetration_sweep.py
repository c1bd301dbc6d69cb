"""Monte Carlo PV penetration sweep at solar noon.

Runs 20 random deployment scenarios at each penetration level, then
prints the level-by-level story: average PCC voltage, average drawn
power, slack dispatch and reverse-flow flags. Full outputs (results.csv,
aggregates.json, trace.jsonl, plot data) land in demos/output/sweep.
"""

from pathlib import Path

import numpy as np

from pvcosim import RunConfig, detect_reverse_flow, emit, run

out_dir = Path(__file__).parent / "output" / "sweep"
config = RunConfig.bundled(
    levels=tuple(range(10, 101, 10)),
    n_scenarios=20,
    hours=(12,),
    master_seed=42,
)
results = run(config)
paths = emit(results, out_dir)
flags = detect_reverse_flow(results)

agg = results.aggregates()
print(f"{len(results.records)} co-simulations "
      f"({sum(1 for r in results.records if r.error)} failures)\n")
print(f"{'level':>5} {'mean V5':>8} {'mean V6':>8} {'mean V8':>8} "
      f"{'mean P/PCC':>10} {'slack P':>8} {'fpi':>5} {'absorbing':>10}")

for level in config.levels:
    ldata = agg["levels"][str(level)]
    sel = [r for r in results.records if r.level == level and r.error is None]
    v = [np.mean(ldata["pcc"][str(b)]["mean_v"]) for b in (5, 6, 8)]
    p = np.mean([sum(ldata["pcc"][str(b)]["mean_p"]) for b in (5, 6, 8)])
    slack = np.mean([r.slack_p for r in sel])
    absorbing = sum(
        1 for r in sel if flags[(r.scenario_id, r.level, r.hour)]["slack_absorbing"]
    )
    print(f"{level:>5} {v[0]:>8.4f} {v[1]:>8.4f} {v[2]:>8.4f} "
          f"{p:>10.4f} {slack:>+8.3f} {ldata['mean_fpi']:>5.2f} "
          f"{absorbing:>6}/{len(sel)}")

print("\nreading the table:")
print(" - drawn power falls with penetration at every PCC;")
print(" - voltages at buses 5 and 6 rise only until the slack generator")
print("   starts absorbing the surplus, then sag again while bus 8 keeps")
print("   rising - the signature the co-simulation is built to expose.")
print(f"\nfiles written to {out_dir}:")
for name, p in paths.items():
    print(f"  {name}: {p.name}")
