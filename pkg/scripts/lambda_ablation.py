"""Test MSE of the (.5,.5)-GAN across reconstruction weights, next to the l1 autoencoder."""
import time

from _common import desk, parser, save, seeds
from bgan.experiments import lambda_ablation

if __name__ == "__main__":
    p = parser(__doc__, iterations=1500, seeds="0")
    p.add_argument("--lambdas", default="0.1,10,10000")
    args = p.parse_args()
    t0 = time.perf_counter()
    spec = desk(args)
    lams = tuple(float(v) for v in args.lambdas.split(","))
    rows = lambda_ablation(spec, lams, seed=seeds(args)[0])
    save(args, "lambda_ablation", {"spec": spec.to_dict(), "mse": rows}, t0)
