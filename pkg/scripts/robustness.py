"""Relative test-MSE degradation under contaminated training pairs."""
import time

from _common import desk, parser, save, seeds
from bgan.experiments import robustness

if __name__ == "__main__":
    p = parser(__doc__, iterations=1500)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--type", default="A", choices=["A", "B", "C", "MIXTURE"])
    args = p.parse_args()
    t0 = time.perf_counter()
    spec = desk(args)
    res = robustness(spec, epsilon=args.epsilon, kind=args.type, seeds=seeds(args))
    save(args, f"robustness_{args.type}_{args.epsilon:g}", {"spec": spec.to_dict(), "models": res}, t0)
