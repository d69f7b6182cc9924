"""Full model against the baseline as class means move closer together.

weight_scale is the std of the attribute-to-feature map of the synthetic data;
with noise fixed, smaller values make classes harder to separate.
"""
from _common import base_parser, median_pct, resolve, with_seed

from sagan.experiments import BASELINE, FULL, dataset_for, run_variant


def main():
    p = base_parser(__doc__)
    p.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.1, 0.03])
    args = p.parse_args()
    cfg = resolve(args)
    print(f"{'scale':>6s} {'H full':>7s} {'H base':>7s}   (medians over {args.seeds} seeds)")
    for scale in args.scales:
        h = {"full": [], "baseline": []}
        for seed in range(args.seeds):
            scfg = with_seed(cfg, seed, weight_scale=scale)
            ds = dataset_for(scfg)
            for v in (FULL, BASELINE):
                h[v.name].append(run_variant(scfg, v, ds).gzsl.h)
        print(f"{scale:6.3f} {median_pct(h['full']):>7s} {median_pct(h['baseline']):>7s}", flush=True)


if __name__ == "__main__":
    main()
