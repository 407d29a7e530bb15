"""Generate the synthetic radial-velocity stand-in shipped in data/.

The file is SYNTHETIC. It only mimics the summary statistics of a real
stellar velocity catalogue: 510 rows, per-row error SD in [0.1, 46.8] with
mean about 6.34, and values spanning roughly [-289, 300] km/s. A small
group of stars near -250 km/s gives the estimators a minor bump to find.
"""

import argparse
from pathlib import Path

import numpy as np

N_ROWS = 510
SIGMA_MIN, SIGMA_MAX, SIGMA_MEAN = 0.1, 46.8, 6.34
Y_MIN, Y_MAX = -289.0, 300.0


def error_sds(rng, n):
    # Right-skewed SDs, rescaled so the mean and both extremes are exact.
    inner = rng.lognormal(mean=1.2, sigma=0.9, size=n - 2)
    target = SIGMA_MEAN * n - SIGMA_MIN - SIGMA_MAX
    for _ in range(100):
        inner = SIGMA_MIN + (inner - SIGMA_MIN) * (target - SIGMA_MIN * inner.size) / (
            inner.sum() - SIGMA_MIN * inner.size
        )
        inner = np.clip(inner, SIGMA_MIN, SIGMA_MAX)
    sig = np.concatenate([[SIGMA_MIN], inner, [SIGMA_MAX]])
    return rng.permutation(sig)


def velocities(rng, n):
    bump = int(round(0.03 * n))
    x = np.concatenate([rng.normal(20.0, 85.0, n - bump), rng.normal(-250.0, 12.0, bump)])
    return rng.permutation(x)


def make(seed):
    rng = np.random.default_rng(seed)
    sigma = error_sds(rng, N_ROWS)
    y = velocities(rng, N_ROWS) + sigma * rng.standard_normal(N_ROWS)
    # Affine map onto the target range; shifts and scales keep the shape.
    y = Y_MIN + (y - y.min()) / (y.max() - y.min()) * (Y_MAX - Y_MIN)
    return y, sigma


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=510)
    parser.add_argument(
        "--output",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "data" / "synthetic_velocities.csv",
    )
    args = parser.parse_args(argv)
    y, sigma = make(args.seed)
    lines = [
        "# SYNTHETIC data: not a real catalogue. Generated by scripts/make_synthetic_velocities.py",
        f"# seed={args.seed} rows={N_ROWS}; columns: velocity (km/s), error SD (km/s)",
        "y,sigma",
    ]
    lines += [f"{a:.3f},{b:.3f}" for a, b in zip(y, sigma)]
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(
        f"wrote {args.output}: n={y.size} y=[{y.min():.1f}, {y.max():.1f}] "
        f"sigma=[{sigma.min():.2f}, {sigma.max():.2f}] mean sigma={sigma.mean():.3f}"
    )


if __name__ == "__main__":
    main()
