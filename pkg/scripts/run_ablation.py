"""Component ablation: median ZSL and GZSL scores for each step of the component ladder."""
from _common import base_parser, median_pct, resolve, with_seed

from sagan.experiments import COMPONENT_LADDER, dataset_for, run_variant


def main():
    p = base_parser(__doc__)
    p.add_argument("--variants", nargs="*", default=[v.name for v in COMPONENT_LADDER])
    args = p.parse_args()
    cfg = resolve(args)
    ladder = [v for v in COMPONENT_LADDER if v.name in args.variants]
    rows = {v.name: [] for v in ladder}
    for seed in range(args.seeds):
        ds = dataset_for(with_seed(cfg, seed))
        for v in ladder:
            r = run_variant(with_seed(cfg, seed), v, ds)
            rows[v.name].append(r)
            print(f"seed {seed} {v.name:14s} ZSL {100 * r.zsl.mca_u:6.2f}  U {100 * r.gzsl.mca_u:6.2f} "
                  f"S {100 * r.gzsl.mca_s:6.2f} H {100 * r.gzsl.h:6.2f}  ({r.seconds:.0f} s)", flush=True)
    print(f"\n{'variant':14s} {'ZSL':>6s} {'U':>6s} {'S':>6s} {'H':>6s}   (medians over {args.seeds} seeds)")
    for name, runs in rows.items():
        print(f"{name:14s} {median_pct([r.zsl.mca_u for r in runs])} {median_pct([r.gzsl.mca_u for r in runs])} "
              f"{median_pct([r.gzsl.mca_s for r in runs])} {median_pct([r.gzsl.h for r in runs])}")


if __name__ == "__main__":
    main()
