"""Recompute U, S and H from a finished run's metric files, or from published accuracy pairs."""
import argparse
from pathlib import Path

from sagan.evaluation import harmonic_mean, parse_metrics_text


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("run", nargs="?", help="output directory of `sagan pipeline`")
    p.add_argument("--pair", nargs=2, type=float, action="append", metavar=("U", "S"), default=[])
    args = p.parse_args()
    for u, s in args.pair:
        print(f"U {u:6.2f}  S {s:6.2f}  ->  H {harmonic_mean(s, u):6.2f}")
    if args.run:
        for path in sorted(Path(args.run, "metrics").glob("*.txt")):
            f = parse_metrics_text(path.read_text())
            line = f"{path.stem}: U {f['mca_u']}"
            if "h" in f:
                line += f"  S {f['mca_s']}  H {f['h']}"
            print(line)


if __name__ == "__main__":
    main()
