"""Held-out MSE / PSNR / SSIM for the GAN variants, the l2 autoencoder and NLM."""
import time

from _common import desk, parser, save, seeds
from bgan.experiments import denoising_table

if __name__ == "__main__":
    args = parser(__doc__, iterations=3000, seeds="0").parse_args()
    t0 = time.perf_counter()
    spec = desk(args)
    rows = denoising_table(spec, seed=seeds(args)[0])
    print(f"{'model':18s} {'MSE':>10s} {'PSNR':>8s} {'SSIM':>7s}")
    for name, r in rows.items():
        print(f"{name:18s} {r['mse_mean']:10.3e} {r['psnr_mean']:8.2f} {r['ssim_mean']:7.3f}")
    save(args, "table1", {"spec": spec.to_dict(), "rows": rows}, t0)
