"""Few-shot and generalized few-shot accuracy as labelled unseen samples are added."""
from _common import base_parser, median_pct, resolve, with_seed

from sagan.evaluation import few_shot_protocol
from sagan.experiments import FULL, run_variant


def main():
    p = base_parser(__doc__)
    p.add_argument("--shots", type=int, nargs="+", default=[1, 2, 5, 10, 20])
    args = p.parse_args()
    cfg = resolve(args)
    fsl = {k: [] for k in args.shots}
    gfsl = {k: [] for k in args.shots}
    for seed in range(args.seeds):
        r = run_variant(with_seed(cfg, seed), FULL)
        for k in args.shots:
            res = few_shot_protocol(r.stage2.bundle, r.dataset, k, r.config.eval_seed, r.config.n_syn,
                                    r.config.classifier_settings())
            fsl[k].append(res.fsl.mca_u)
            gfsl[k].append(res.gfsl.h)
            print(f"seed {seed} shots {k:3d}: FSL {100 * res.fsl.mca_u:6.2f}  GFSL H {100 * res.gfsl.h:6.2f}",
                  flush=True)
    print(f"\n{'shots':>5s} {'FSL':>6s} {'GFSL':>6s}   (medians over {args.seeds} seeds)")
    for k in args.shots:
        print(f"{k:5d} {median_pct(fsl[k])} {median_pct(gfsl[k])}")


if __name__ == "__main__":
    main()
