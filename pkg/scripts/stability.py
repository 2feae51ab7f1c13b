"""Trailing-window test-MSE spread of the bare (0,0)-GAN versus (0,0)-GAN + l1."""
import time

from _common import desk, parser, save, seeds
from bgan.experiments import stability

if __name__ == "__main__":
    p = parser(__doc__, iterations=3000)
    p.add_argument("--window", type=int, default=500, help="trailing window in iterations")
    args = p.parse_args()
    t0 = time.perf_counter()
    spec = desk(args)
    res = stability(spec, seeds(args), args.window)
    save(args, "stability", {"spec": spec.to_dict(), **res}, t0)
