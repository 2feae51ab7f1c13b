"""ISOMAP + 2-means on the two extreme conformations, raw versus denoised."""
import time

from _common import desk, parser, save, seeds
from bgan.experiments import clustering, desk_for_clustering

if __name__ == "__main__":
    p = parser(__doc__, iterations=1500, seeds="0")
    p.add_argument("--per-class", type=int, default=30)
    args = p.parse_args()
    t0 = time.perf_counter()
    spec = desk_for_clustering(desk(args))
    res = clustering(spec, per_class=args.per_class, seed=seeds(args)[0])
    save(args, "clustering", {"spec": spec.to_dict(), **res}, t0)
