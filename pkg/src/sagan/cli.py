"""Command-line driver for the two-stage pipeline.

Outputs land under ``--out``:

    data/        synthetic dataset (synth-data)
    map/         stage-1 checkpoint (train-map)
    map_nosp/    stage-1 checkpoint without the structure term (diagnose)
    gan/         stage-2 checkpoint (train-gan)
    synth/       synthesized unseen features (synthesize)
    metrics/     ZSL and GZSL reports (eval)
    diagnose/    structure drift reports (diagnose)
    manifest.json
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .artifacts import (
    MissingArtifact,
    PipelineManifest,
    Stopwatch,
    assign,
    load_checkpoint,
    save_checkpoint,
)
from .config import RunConfig, load_config
from .dataio import (
    DataError,
    FormatError,
    PrototypeTable,
    ZslDataset,
    load_feature_file,
    load_label_file,
    make_synthetic_dataset,
    save_feature_file,
    save_label_file,
)
from .engine import NumericError
from .engine.nn import named_parameters
from .evaluation import (
    ProtocolError,
    dataset_structure_change,
    evaluate_gzsl,
    evaluate_zsl,
)
from .generation import build_bundle, synthesize_features, train_stage2
from .mapping import ConfigError, MappingModel, train_mapping

log = logging.getLogger("sagan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class Run:
    """Resolved configuration plus the output directory of one invocation."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.manifest = PipelineManifest.load(out / "manifest.json")

    def dataset(self) -> ZslDataset:
        if self.cfg.data_dir:
            return ZslDataset.load(self.cfg.data_dir)
        d = self.out / "data"
        if not (d / "features.zsf").exists():
            raise MissingArtifact(f"no dataset at {d}; run `sagan synth-data` first or set data_dir")
        return ZslDataset.load(d)

    def record(self, stage: str, outputs, wall: float) -> None:
        self.manifest.record(stage, outputs, self.cfg.seed, wall, threads=_threads(),
                             config_hash=self.cfg.digest())


def _threads() -> int | None:
    raw = os.environ.get("SAGAN_THREADS")
    return int(raw) if raw else None


# -- checkpoints ------------------------------------------------------------------------

def _save_mapping(directory: Path, res, ds: ZslDataset, cfg) -> list[Path]:
    meta = {"kind": "mapping", "d_v": ds.d_v, "n_seen": int(ds.seen_classes.size), "d_m": cfg.d_m,
            "hidden": cfg.hidden, "slope": cfg.slope, "gamma_c": cfg.gamma_c, "gamma_s": cfg.gamma_s,
            "metric": cfg.metric, "seed": cfg.seed, "train_accuracy": res.train_accuracy}
    paths = save_checkpoint(directory, named_parameters(res.model), meta)
    extra = [directory / "prototypes.zsf", directory / "mapped_prototypes.zsf", directory / "prototype_classes.zsl",
             directory / "trace.json"]
    save_feature_file(extra[0], res.prototypes.original)
    save_feature_file(extra[1], res.prototypes.mapped)
    save_label_file(extra[2], res.prototypes.classes)
    extra[3].write_text(json.dumps(res.trace, indent=1) + "\n")
    return paths + extra


def _load_mapping(directory: Path, cfg: RunConfig, producer: str = "train-map"):
    arrays, meta = load_checkpoint(directory, producer)
    mcfg = cfg.mapping_config(d_m=meta["d_m"], hidden=meta["hidden"], slope=meta["slope"])
    model = MappingModel(meta["d_v"], meta["n_seen"], mcfg, np.random.default_rng(0))
    assign(named_parameters(model), arrays)
    protos = PrototypeTable(load_label_file(directory / "prototype_classes.zsl"),
                            load_feature_file(directory / "prototypes.zsf"),
                            load_feature_file(directory / "mapped_prototypes.zsf"))
    return model, protos


def _load_bundle(run: Run, ds: ZslDataset):
    model, protos = _load_mapping(run.out / "map", run.cfg)
    arrays, meta = load_checkpoint(run.out / "gan", "train-gan")
    gcfg = run.cfg.gan_config()
    if meta.get("mode") != gcfg.mode:
        raise ConfigError(f"gan checkpoint was trained in mode {meta.get('mode')!r}, config asks {gcfg.mode!r}")
    bundle = build_bundle(ds.d_v, protos.mapped.shape[1], ds.d_a, gcfg, protos, ds.embeddings, model)
    present = set(arrays)
    if not any(k.startswith("G2.") for k in present):
        bundle.G2 = None
    if not any(k.startswith("D2.") for k in present):
        bundle.D2 = None
    params = named_parameters(bundle.G, bundle.D, bundle.G2, bundle.D2, bundle.E)
    assign(params, arrays)
    return bundle


# -- commands -------------------------------------------------------------------------------

def cmd_synth_data(run: Run) -> None:
    with Stopwatch() as sw:
        ds = make_synthetic_dataset(run.cfg.synthetic_spec())
        paths = ds.save(run.out / "data")
    run.record("synth-data", paths, sw.elapsed)
    log.info("wrote synthetic dataset: %d samples, %d classes", ds.features.shape[0], ds.n_classes)


def cmd_train_map(run: Run) -> None:
    ds = run.dataset()
    mcfg = run.cfg.mapping_config()
    with Stopwatch() as sw:
        res = train_mapping(ds, mcfg)
        paths = _save_mapping(run.out / "map", res, ds, mcfg)
    run.record("train-map", paths, sw.elapsed)
    log.info("mapping trained: train accuracy %.4f", res.train_accuracy)


def cmd_train_gan(run: Run) -> None:
    ds = run.dataset()
    model, protos = _load_mapping(run.out / "map", run.cfg)
    gcfg = run.cfg.gan_config()
    with Stopwatch() as sw:
        res = train_stage2(model.map(ds.features), ds, protos, gcfg, model)
        b = res.bundle
        meta = {"kind": "gan", "mode": gcfg.mode, "gamma_m": gcfg.gamma_m, "gamma_r": gcfg.gamma_r,
                "gp_lambda": gcfg.gp_lambda, "critic_steps": gcfg.critic_steps, "d_z": b.d_z,
                "hidden": gcfg.hidden, "proto_condition": gcfg.proto_condition, "seed": gcfg.seed}
        paths = save_checkpoint(run.out / "gan", named_parameters(b.G, b.D, b.G2, b.D2, b.E), meta)
        trace = run.out / "gan" / "trace.json"
        trace.write_text(json.dumps(res.trace, indent=1) + "\n")
    run.record("train-gan", paths + [trace], sw.elapsed)


def cmd_synthesize(run: Run) -> None:
    ds = run.dataset()
    bundle = _load_bundle(run, ds)
    with Stopwatch() as sw:
        x, y = synthesize_features(bundle.G, ds.embeddings, np.sort(ds.unseen_classes), max(run.cfg.n_syn, 1),
                                   run.cfg.eval_seed, bundle.d_z)
        d = run.out / "synth"
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / "features.zsf", d / "labels.zsl"]
        save_feature_file(paths[0], x)
        save_label_file(paths[1], y)
    run.record("synthesize", paths, sw.elapsed)


def metrics_stem(cfg: RunConfig, protocol: str) -> str:
    return f"{protocol}_{cfg.mode}_s{cfg.seed}_{cfg.digest()}"


def cmd_eval(run: Run) -> None:
    ds = run.dataset()
    bundle = _load_bundle(run, ds)
    cfg = run.cfg
    paths = []
    with Stopwatch() as sw:
        for fn, proto in ((evaluate_zsl, "zsl"), (evaluate_gzsl, "gzsl")):
            rep = fn(bundle, ds, cfg.n_syn, cfg.eval_seed, cfg.classifier_settings())
            rep.seed = cfg.seed
            rep.config = {"mode": cfg.mode, "config_hash": cfg.digest(), "n_syn": cfg.n_syn}
            paths += rep.write(run.out / "metrics", metrics_stem(cfg, proto))
            if rep.h is not None:
                log.info("GZSL: U %.2f S %.2f H %.2f", 100 * rep.mca_u, 100 * rep.mca_s, 100 * rep.h)
            else:
                log.info("ZSL: top-1 %.2f", 100 * rep.mca_u)
    run.record("eval", paths, sw.elapsed)


def cmd_diagnose(run: Run) -> None:
    """Structure drift of the trained mapping and of a twin trained without the structure term."""
    ds = run.dataset()
    model, protos = _load_mapping(run.out / "map", run.cfg)
    nosp_dir = run.out / "map_nosp"
    paths = []
    with Stopwatch() as sw:
        if not (nosp_dir / "manifest.json").exists():
            mcfg = run.cfg.mapping_config(gamma_s=0.0)
            res = train_mapping(ds, mcfg)
            paths += _save_mapping(nosp_dir, res, ds, mcfg)
        nosp_model, nosp_protos = _load_mapping(nosp_dir, run.cfg)
        d = run.out / "diagnose"
        d.mkdir(parents=True, exist_ok=True)
        for tag, m, p in (("with_sp", model, protos), ("without_sp", nosp_model, nosp_protos)):
            rep = dataset_structure_change(ds, p, m.map(ds.features))
            path = d / f"structure_{tag}.txt"
            path.write_text(rep.to_text())
            paths.append(path)
            log.info("%s: L2-change %.4f  W-dist %.4f", tag, rep.l2_change, rep.w_dist)
    run.record("diagnose", paths, sw.elapsed)


def cmd_gradcheck(run: Run | None = None) -> bool:
    from .checks import gradient_suite

    ok = True
    for res in gradient_suite():
        print(res.line())
        ok &= res.passed
    return ok


def cmd_pipeline(run: Run) -> None:
    if not run.cfg.data_dir:
        cmd_synth_data(run)
    cmd_train_map(run)
    cmd_train_gan(run)
    cmd_synthesize(run)
    cmd_eval(run)
    cmd_diagnose(run)


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train-map": cmd_train_map,
    "train-gan": cmd_train_gan,
    "synthesize": cmd_synthesize,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "gradcheck": cmd_gradcheck,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sagan", description="Structure-aware feature generation for zero-shot learning")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--mode", choices=["sa-wgan", "sa-vaegan"], help="stage-2 variant (overrides the config)")
    p.add_argument("--quiet", action="store_true")
    return p


def _thread_limit():
    n = _threads()
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.mode is not None:
            cfg.mode = args.mode
        cfg.validate()
        with _thread_limit():
            if args.command == "gradcheck":
                return EXIT_OK if cmd_gradcheck() else EXIT_NUMERIC
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            COMMANDS[args.command](Run(cfg, out))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, ProtocolError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
