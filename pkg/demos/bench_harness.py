"""
A seeded benchmark plan
=======================

Run a small heavy-tailed sweep over the number of measurements and write
``bench.csv`` and ``summary.csv``.  The same plan can be stored as an INI
file and run with ``momcs bench --config plan.ini``.
"""

import tempfile
from pathlib import Path

from momcs.experiments import ExperimentPlan, run_plan
from momcs.recovery import RecoveryConfig

with tempfile.TemporaryDirectory() as tmp:
    plan = ExperimentPlan(
        scenario="heavy_tailed",
        m_grid=[100, 200, 400],
        algorithms={
            "erm": RecoveryConfig(algorithm="erm", step_size=0.01, iterations=1000, restarts=3),
            "mom_tournament": RecoveryConfig(algorithm="mom_tournament", M=10, step_size=0.01, iterations=1000, restarts=3),
        },
        trials=5,
        master_seed=11,
        out=tmp,
    )
    result = run_plan(plan)
    for row in result.summary:
        print(f"m={row['m']:<4} {row['algorithm']:<15} mean {row['mean']:.2e}  95% CI [{row['ci_low']:.2e}, {row['ci_high']:.2e}]")
    print((Path(tmp) / "summary.csv").read_text().splitlines()[0])
