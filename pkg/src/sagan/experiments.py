"""In-process runs of component variants, shared by the scripts and the slow tests."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

from .config import RunConfig
from .dataio import ZslDataset, make_synthetic_dataset
from .evaluation import MetricsReport, StructureReport, dataset_structure_change, evaluate_gzsl, evaluate_zsl
from .generation import Stage2Result, train_stage2
from .mapping import MappingResult, train_mapping


@dataclass(frozen=True)
class Variant:
    """Which components are switched on; the baseline has none of them."""

    name: str
    sp_map: bool = True  # structure term in stage 1
    proto_condition: bool = True  # prototype-conditioned critic
    rwgan: bool = True  # reconstruction WGAN

    def apply(self, cfg: RunConfig) -> RunConfig:
        return dataclasses.replace(
            cfg,
            gamma_s=cfg.gamma_s if self.sp_map else 0.0,
            proto_condition=self.proto_condition,
            gamma_r=cfg.gamma_r if self.rwgan else 0.0,
        )


BASELINE = Variant("baseline", sp_map=False, proto_condition=False, rwgan=False)
FULL = Variant("full")
COMPONENT_LADDER = (
    BASELINE,
    Variant("sp-map", sp_map=True, proto_condition=False, rwgan=False),
    Variant("mwgan", sp_map=False, proto_condition=True, rwgan=False),
    Variant("sp-map+mwgan", sp_map=True, proto_condition=True, rwgan=False),
    FULL,
)


@dataclass
class VariantRun:
    variant: Variant
    config: RunConfig
    dataset: ZslDataset
    mapping: MappingResult
    stage2: Stage2Result
    zsl: MetricsReport
    gzsl: MetricsReport
    structure: StructureReport
    seconds: float


def dataset_for(cfg: RunConfig) -> ZslDataset:
    if cfg.data_dir:
        return ZslDataset.load(cfg.data_dir)
    return make_synthetic_dataset(cfg.synthetic_spec())


def run_variant(cfg: RunConfig, variant: Variant, ds: ZslDataset | None = None) -> VariantRun:
    """Stage 1, stage 2 and both evaluation protocols for one variant and seed."""
    t0 = time.perf_counter()
    vcfg = variant.apply(cfg)
    vcfg.validate()
    ds = ds if ds is not None else dataset_for(vcfg)
    m = train_mapping(ds, vcfg.mapping_config())
    s2 = train_stage2(m.mapped_features, ds, m.prototypes, vcfg.gan_config(), m.model)
    settings = vcfg.classifier_settings()
    zsl = evaluate_zsl(s2.bundle, ds, vcfg.n_syn, vcfg.eval_seed, settings)
    gzsl = evaluate_gzsl(s2.bundle, ds, vcfg.n_syn, vcfg.eval_seed, settings)
    drift = dataset_structure_change(ds, m.prototypes, m.mapped_features)
    return VariantRun(variant, vcfg, ds, m, s2, zsl, gzsl, drift, time.perf_counter() - t0)
