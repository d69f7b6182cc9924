"""Sweep one config key (latent dimension, loss coefficient, metric, ...) and report median scores.

Keys that only affect evaluation (n_syn) reuse one trained model per seed.

    python3 scripts/sweep.py --key n_syn --values 50 100 200 300 400
    python3 scripts/sweep.py --key d_z --values 4 8 16 32
    python3 scripts/sweep.py --key gamma_r --values 0.01 0.1 1.0
"""
from _common import base_parser, median_pct, resolve, with_seed

from sagan.config import parse_config
from sagan.evaluation import evaluate_gzsl, evaluate_zsl
from sagan.experiments import FULL, dataset_for, run_variant

EVAL_ONLY = {"n_syn"}


def main():
    p = base_parser(__doc__)
    p.add_argument("--key", required=True)
    p.add_argument("--values", nargs="+", required=True)
    args = p.parse_args()
    cfg = resolve(args)
    scores = {v: [] for v in args.values}
    for seed in range(args.seeds):
        base = with_seed(cfg, seed)
        ds = dataset_for(base)
        trained = run_variant(base, FULL, ds) if args.key in EVAL_ONLY else None
        for value in args.values:
            vcfg = parse_config(f"{args.key} = {value}", "--values", base=base)
            vcfg.validate()
            if trained is not None:
                bundle, settings = trained.stage2.bundle, vcfg.classifier_settings()
                zsl = evaluate_zsl(bundle, ds, vcfg.n_syn, vcfg.eval_seed, settings)
                gzsl = evaluate_gzsl(bundle, ds, vcfg.n_syn, vcfg.eval_seed, settings)
            else:
                r = run_variant(vcfg, FULL, ds)
                zsl, gzsl = r.zsl, r.gzsl
            scores[value].append((zsl.mca_u, gzsl.h))
            print(f"seed {seed} {args.key}={value}: ZSL {100 * zsl.mca_u:6.2f}  H {100 * gzsl.h:6.2f}", flush=True)
    print(f"\n{args.key:>10s} {'ZSL':>6s} {'H':>6s}   (medians over {args.seeds} seeds)")
    for value, rows in scores.items():
        print(f"{value:>10s} {median_pct([z for z, _ in rows])} {median_pct([h for _, h in rows])}")


if __name__ == "__main__":
    main()
