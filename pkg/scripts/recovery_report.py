"""Recovery metrics, printed-value discrepancies and Shapley rankings for the
29 shipped reconditioned cells.

    python scripts/recovery_report.py
"""
import numpy as np

from lirecon.recovery import discrepancies, importance_ranking, shipped_recovery_records


def main():
    recs = shipped_recovery_records()
    for d in discrepancies(recs):
        scope = "in scope" if d.in_scope else "out of scope"
        print(f"{d.cell_id}: {d.metric} {d.computed:.2f} vs {d.reported:.2f} ({scope})")
    for target in ("c_rec", "r1", "r2"):
        imp = importance_ranking(recs, target)
        reg = imp.regression
        cond = np.linalg.cond(np.column_stack([r.features() for r in recs]).T)
        print(f"\n{target}: R^2 {reg.r_squared:.3f}, ridge {reg.flagged}, raw cond {cond:.3g}")
        for name, v in imp.ranking:
            print(f"  {name:>8} {v:.4g}")


if __name__ == "__main__":
    main()
