"""Error-versus-n scaling of the robust location/scatter estimator."""
import argparse
import time

from _common import save
from bgan.losses import ScoringRule
from bgan.robust import EstimateBudget, SweepSpec, scaling_sweep

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--n", default="250,500,1000,2000,4000")
    p.add_argument("--epsilon", default="0,0.2")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--radial", default="GAUSSIAN")
    p.add_argument("--out", default="results")
    args = p.parse_args()
    t0 = time.perf_counter()
    sw = SweepSpec(p=args.p, n_grid=[int(v) for v in args.n.split(",")],
                   eps_grid=[float(v) for v in args.epsilon.split(",")], repetitions=args.reps,
                   radial=args.radial.upper())
    res = scaling_sweep(sw, ScoringRule(alpha=0.5, beta=0.5), EstimateBudget(steps=args.steps))
    for (eps, key), vals in sorted(res["medians"].items()):
        print(f"eps={eps:g} {key:16s} " + " ".join(f"{v:.2e}" for v in vals))
    for k, v in res["slopes"].items():
        print(f"slope {k}: {v:.3f}")
    payload = {"slopes": res["slopes"], "rows": res["rows"],
               "medians": {f"eps={e:g}:{k}": v for (e, k), v in res["medians"].items()}, "spec": res["spec"]}
    save(args, "theorem_sweep", payload, t0)
