"""Experiment configuration and the fit -> embed -> evaluate pipeline.

A run is described by one JSON document; every random draw comes from its
seeds, so re-running a config reproduces every artifact byte for byte.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cltree import MixtureOfTrees, fit_mixture_em, load_mt
from .data import BinaryDataset, attach_geometry, load_binary_dataset
from .embed import (EmbeddingMatrix, QuerySet, extract_random_patches, gen_rect_queries,
                    rand_patch_embedding, rand_query_embedding)
from .evaluate import C_GRID, CurveResult, OptimizerSettings, feature_curve
from .learnspn import LearnSpnParams, learn_spn_b
from .spn import Spn, load_spn

logger = logging.getLogger(__name__)

STAGES = ("genqueries", "fit", "embed", "eval")
SPLITS = ("train", "valid", "test")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        obj = cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    obj.check(where)
    return obj


def _need(cond, where, msg):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


@dataclass
class DatasetSection:
    train: str
    valid: str
    test: str
    width: int
    height: int
    name: str = "dataset"
    format: str = "csv_labeled"

    def check(self, where):
        _need(self.format in ("csv_labeled", "csv_unlabeled"), where, f"bad format {self.format!r}")
        _need(self.format == "csv_labeled", where, "evaluation needs labeled splits")
        _need(isinstance(self.width, int) and isinstance(self.height, int)
              and self.width > 0 and self.height > 0, where, "width/height must be positive ints")


@dataclass
class SpnSection:
    m: int = 500
    rho: float = 20.0
    alpha: float = 0.1
    seed: int = 0
    cluster_max_iters: int = 100
    cluster_restarts: int = 3

    def check(self, where):
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None

    def params(self) -> LearnSpnParams:
        return LearnSpnParams(m_min_instances=self.m, rho=self.rho, alpha=self.alpha,
                              cluster_max_iters=self.cluster_max_iters,
                              cluster_restarts=self.cluster_restarts, seed=self.seed)


@dataclass
class MtSection:
    C: int = 3
    iters: int = 100
    tol: float = 1e-4
    alpha: float = 0.1
    seed: int = 0
    restarts: int = 1

    def check(self, where):
        _need(self.C >= 1 and self.iters >= 1 and self.restarts >= 1, where,
              "C, iters and restarts must be >= 1")
        _need(self.alpha >= 0, where, "alpha must be >= 0")


@dataclass
class EmbeddingSection:
    mode: str = "query"
    k: Optional[int] = None
    min_side: Optional[int] = None
    max_side: Optional[int] = None
    s: Optional[int] = None
    d: Optional[int] = None
    stride: Optional[int] = None
    scale: str = "log"
    seed: int = 0

    def check(self, where):
        _need(self.scale in ("log", "linear"), where, f"bad scale {self.scale!r}")
        if self.mode == "query":
            _need(self.k is not None and self.k >= 0, where, "query mode needs k >= 0")
            _need(self.min_side is not None and self.max_side is not None, where,
                  "query mode needs min_side and max_side")
            _need(self.s is None and self.d is None and self.stride is None, where,
                  "s/d/stride belong to patch mode")
        elif self.mode == "patch":
            _need(self.s is not None and self.d is not None, where, "patch mode needs s and d")
            _need(self.k is None and self.min_side is None and self.max_side is None, where,
                  "k/min_side/max_side belong to query mode")
            if self.stride is None:
                self.stride = 1
        else:
            raise ConfigError(f"{where}: mode must be 'query' or 'patch'")

    def to_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


@dataclass
class EvalSection:
    grid: list = field(default_factory=lambda: list(C_GRID))
    step: int = 100
    max_iters: int = 1000
    grad_tol: float = 1e-5
    standardize: bool = True

    def check(self, where):
        _need(isinstance(self.standardize, bool), where, "standardize must be true or false")
        _need(len(self.grid) > 0 and all(c > 0 for c in self.grid), where,
              "grid must be non-empty and positive")
        _need(self.step >= 1, where, "step must be >= 1")

    def optimizer(self) -> OptimizerSettings:
        return OptimizerSettings(self.max_iters, self.grad_tol)


@dataclass
class ExperimentConfig:
    dataset: DatasetSection
    model: Union[SpnSection, MtSection]
    embedding: EmbeddingSection
    eval: EvalSection = field(default_factory=EvalSection)
    output: str = "out"
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def model_kind(self) -> str:
        return "spn" if isinstance(self.model, SpnSection) else "mt"

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"dataset", "model", "embedding", "eval", "output"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
        for key in ("dataset", "model", "embedding"):
            if key not in data:
                raise ConfigError(f"missing section {key!r}")
        model = data["model"]
        if not isinstance(model, dict) or len(model) != 1 or next(iter(model)) not in ("spn", "mt"):
            raise ConfigError("model: exactly one of 'spn' or 'mt' is required")
        kind, body = next(iter(model.items()))
        return cls(
            dataset=_build(DatasetSection, data["dataset"], "dataset"),
            model=_build(SpnSection if kind == "spn" else MtSection, body, f"model.{kind}"),
            embedding=_build(EmbeddingSection, data["embedding"], "embedding"),
            eval=_build(EvalSection, data.get("eval", {}), "eval"),
            output=str(data.get("output", "out")),
            base_dir=Path(base_dir),
        )

    def to_dict(self) -> dict:
        return {
            "dataset": dataclasses.asdict(self.dataset),
            "model": {self.model_kind: dataclasses.asdict(self.model)},
            "embedding": self.embedding.to_dict(),
            "eval": dataclasses.asdict(self.eval),
            "output": self.output,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        body = self.to_dict()
        body.pop("output")
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self,
            model=dataclasses.replace(self.model, seed=seed),
            embedding=dataclasses.replace(self.embedding, seed=seed),
        )

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, path.parent)


def load_splits(cfg: ExperimentConfig) -> dict[str, BinaryDataset]:
    ds = cfg.dataset
    out = {}
    for tag in SPLITS:
        path = cfg.resolve(getattr(ds, tag))
        split = load_binary_dataset(path, ds.format, name=ds.name)
        out[tag] = dataclasses.replace(attach_geometry(split, ds.width, ds.height), split_tag=tag)
    return out


def load_model(path) -> Union[Spn, MixtureOfTrees]:
    path = Path(path)
    if path.suffix == ".spn":
        return load_spn(path)
    if path.suffix == ".mt":
        return load_mt(path)
    head = path.read_text().lstrip()[:3]
    return load_mt(path) if head.startswith("MT") else load_spn(path)


class Run:
    """Stage runner bound to one config and output directory."""

    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int = 1):
        self.cfg = cfg
        self.out = Path(out)
        self.workers = max(1, int(workers))
        self.created: list[Path] = []
        self._splits = None

    # artifact paths
    @property
    def model_path(self) -> Path:
        return self.out / f"model.{self.cfg.model_kind}"

    @property
    def queries_path(self) -> Path:
        return self.out / ("queries.txt" if self.cfg.embedding.mode == "query" else "patches.csv")

    def embed_path(self, tag) -> Path:
        return self.out / f"embed_{tag}.csv"

    @property
    def curve_path(self) -> Path:
        return self.out / "curve.csv"

    @property
    def metadata_path(self) -> Path:
        return self.out / "metadata.json"

    def _track(self, path: Path) -> Path:
        if path not in self.created:
            self.created.append(path)
        return path

    @property
    def splits(self):
        if self._splits is None:
            self._splits = load_splits(self.cfg)
        return self._splits

    def stage_genqueries(self):
        emb = self.cfg.embedding
        if emb.mode == "query":
            qs = gen_rect_queries((self.cfg.dataset.width, self.cfg.dataset.height),
                                  emb.k, emb.min_side, emb.max_side, emb.seed)
            qs.save(self._track(self.queries_path))
        else:
            from .data import write_binary_dataset
            patches = extract_random_patches(self.splits["train"], emb.s, emb.d, emb.seed)
            write_binary_dataset(patches, self._track(self.queries_path))

    def _training_data(self):
        if self.cfg.embedding.mode == "query":
            return self.splits["train"]
        return load_binary_dataset(self.queries_path, "csv_unlabeled")

    def stage_fit(self):
        data = self._training_data()
        handler = logging.FileHandler(self._track(self.out / "learn.log"), mode="w")
        handler.setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
        pkg_logger = logging.getLogger("tpmembed")
        pkg_logger.addHandler(handler)
        old_level = pkg_logger.level
        pkg_logger.setLevel(logging.INFO)
        try:
            if self.cfg.model_kind == "spn":
                model = learn_spn_b(data, self.cfg.model.params())
            else:
                mc = self.cfg.model
                model, history = fit_mixture_em(data, mc.C, mc.iters, mc.tol, mc.alpha,
                                                mc.seed, mc.restarts)
                pkg_logger.info("EM log-likelihoods: %s", " ".join(repr(h) for h in history))
        finally:
            pkg_logger.removeHandler(handler)
            pkg_logger.setLevel(old_level)
            handler.close()
        model.save(self._track(self.model_path))

    def stage_embed(self):
        model = load_model(self.model_path)
        emb = self.cfg.embedding
        prov = {"model": self.model_path.name, "model_kind": self.cfg.model_kind,
                "seed": emb.seed, "mode": emb.mode, "config_hash": self.cfg.config_hash()}
        qs = None
        if emb.mode == "query":
            qs = QuerySet.load(self.queries_path)
            prov["queries"] = self.queries_path.name
        else:
            prov.update(patches=self.queries_path.name, d=emb.d, stride=emb.stride)
        for tag in SPLITS:
            ds = self.splits[tag]
            if emb.mode == "query":
                E = rand_query_embedding(model, ds, qs, emb.scale, workers=self.workers,
                                         provenance={**prov, "split": tag})
            else:
                E = rand_patch_embedding(model, ds, emb.d, emb.stride, emb.scale,
                                         workers=self.workers, provenance={**prov, "split": tag})
            path = self._track(self.embed_path(tag))
            self._track(path.with_suffix(".json"))
            E.save(path, qs)

    def stage_eval(self):
        embeds = [EmbeddingMatrix.load(self.embed_path(tag)) for tag in SPLITS]
        labels = [self.splits[tag].labels for tag in SPLITS]
        raw = [self.splits[tag] for tag in SPLITS]
        ev = self.cfg.eval
        curve = feature_curve(embeds, labels, ev.step, ev.grid, ev.optimizer(), raw=raw,
                              workers=self.workers, standardize=ev.standardize)
        curve.save(self._track(self.curve_path))

    def metadata(self, stages, error=None) -> dict:
        emb = self.cfg.embedding
        artifacts = sorted(p.name for p in self.out.iterdir()
                           if p.is_file() and p.name != "metadata.json") if self.out.exists() else []
        meta = {
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "seeds": {"model": self.cfg.model.seed, "embedding": emb.seed},
            "stages": list(stages),
            "artifacts": artifacts,
            "scale": emb.scale,
            "model_file": self.model_path.name,
            "queries_file": self.queries_path.name,
        }
        if error is not None:
            meta["error"] = {"stage": error.stage, "message": str(error.cause)}
        return meta

    def run(self, stages=STAGES):
        self.out.mkdir(parents=True, exist_ok=True)
        done = []
        try:
            for stage in stages:
                try:
                    getattr(self, f"stage_{stage}")()
                except Exception as exc:
                    raise StageError(stage, exc) from exc
                done.append(stage)
        except StageError as err:
            for p in self.created:
                p.unlink(missing_ok=True)
            self.metadata_path.write_text(json.dumps(self.metadata(done, err), indent=2,
                                                     sort_keys=True) + "\n")
            raise
        self.metadata_path.write_text(json.dumps(self.metadata(done), indent=2, sort_keys=True) + "\n")
        return {"out": self.out, "stages": done, "artifacts": list(self.created)}


def run_experiment(cfg: ExperimentConfig, out=None, workers: int = 1, stages=STAGES):
    """Run ``stages`` of ``cfg`` into ``out`` (defaults to the config's output)."""
    out = Path(out) if out is not None else cfg.resolve(cfg.output)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stage(s) {unknown}")
    return Run(cfg, out, workers).run(stages)
