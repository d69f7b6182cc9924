"""Shared argument handling for the experiment scripts."""
import argparse
import dataclasses
import logging

import numpy as np

from sagan.config import RunConfig, load_config, parse_config


def base_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default="configs/desk.cfg")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at 0")
    p.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="config overrides")
    return p


def resolve(args) -> RunConfig:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    cfg = load_config(args.config)
    if args.set:
        cfg = parse_config("\n".join(args.set), "--set", base=cfg)
    cfg.validate()
    return cfg


def with_seed(cfg: RunConfig, seed: int, **overrides) -> RunConfig:
    return dataclasses.replace(cfg, seed=seed, **overrides)


def median_pct(values) -> str:
    return f"{100 * float(np.median(values)):6.2f}"
