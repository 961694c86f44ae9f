import json

import pytest

from tpmembed.cli import main
from tpmembed.data import make_rectangles_noise, split_dataset, split_paths, write_binary_dataset
from tpmembed.embed import EmbeddingMatrix
from tpmembed.pipeline import (ConfigError, ExperimentConfig, StageError, load_config, parse_config,
                               run_experiment)


def write_splits(directory, m=900, seed=0, name="rect"):
    ds = make_rectangles_noise(m, seed=seed, name=name)
    paths = split_paths(directory, name)
    for part in split_dataset(ds, (0.6, 0.2, 0.2), seed=seed):
        write_binary_dataset(part, paths[part.split_tag])
    return paths


def base_config(paths, model=None, embedding=None):
    return {
        "dataset": {"name": "rect", "train": str(paths["train"]), "valid": str(paths["valid"]),
                    "test": str(paths["test"]), "width": 8, "height": 8},
        "model": model or {"spn": {"m": 50, "rho": 20, "seed": 1}},
        "embedding": embedding or {"mode": "query", "k": 30, "min_side": 2, "max_side": 6,
                                   "seed": 2},
        "eval": {"step": 10, "grid": [0.01, 1.0], "max_iters": 200},
        "output": "out",
    }


@pytest.fixture(scope="module")
def splits(tmp_path_factory):
    return write_splits(tmp_path_factory.mktemp("data"))


def write_cfg(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_config_round_trip(splits):
    for model in ({"spn": {"m": 500, "rho": 20, "alpha": 0.1, "seed": 0}},
                  {"mt": {"C": 3, "iters": 100, "tol": 1e-4, "alpha": 0.1, "seed": 0}}):
        cfg = ExperimentConfig.from_dict(base_config(splits, model))
        again = parse_config(cfg.dumps())
        assert again == cfg
        assert again.dumps() == cfg.dumps()
    patch = ExperimentConfig.from_dict(
        base_config(splits, embedding={"mode": "patch", "s": 100, "d": 8}))
    assert parse_config(patch.dumps()) == patch
    assert patch.embedding.stride == 1


@pytest.mark.parametrize("mutate, match", [
    (lambda c: c.update(extra=1), "unknown top-level"),
    (lambda c: c["model"]["spn"].update(rhoo=3), "unknown key"),
    (lambda c: c.update(model={"spn": {}, "mt": {}}), "exactly one"),
    (lambda c: c["embedding"].update(mode="grid"), "mode"),
    (lambda c: c["embedding"].pop("k"), "needs k"),
    (lambda c: c["embedding"].update(s=3), "patch mode"),
    (lambda c: c["eval"].update(grid=[]), "grid"),
    (lambda c: c.pop("dataset"), "missing section"),
])
def test_config_errors(splits, mutate, match):
    cfg = base_config(splits)
    mutate(cfg)
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict(cfg)


def test_seed_override(splits):
    cfg = ExperimentConfig.from_dict(base_config(splits)).with_seed(99)
    assert cfg.model.seed == 99 and cfg.embedding.seed == 99


def test_run_artifacts_and_metadata(tmp_path, splits):
    cfg = ExperimentConfig.from_dict(base_config(splits))
    run_experiment(cfg, tmp_path / "a")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(["curve.csv", "embed_test.csv", "embed_test.json", "embed_train.csv",
                            "embed_train.json", "embed_valid.csv", "embed_valid.json",
                            "learn.log", "metadata.json", "model.spn", "queries.txt"])
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    assert meta["config_hash"] == cfg.config_hash()
    assert meta["seeds"] == {"model": 1, "embedding": 2}
    assert meta["stages"] == ["genqueries", "fit", "embed", "eval"]
    curve = (tmp_path / "a" / "curve.csv").read_text().splitlines()
    assert curve[0] == "features,C,valid_acc,test_acc"
    assert [line.split(",")[0] for line in curve[1:]] == ["10", "20", "30", "baseline"]
    side = json.loads((tmp_path / "a" / "embed_train.json").read_text())
    assert side["config_hash"] == cfg.config_hash() and side["seed"] == 2
    assert len(side["queries"]) == 30


def test_embed_stage_matches_full_pipeline(tmp_path, splits):
    cfg = ExperimentConfig.from_dict(base_config(splits))
    run_experiment(cfg, tmp_path / "full")
    stage_dir = tmp_path / "staged"
    stage_dir.mkdir()
    for name in ("model.spn", "queries.txt"):
        (stage_dir / name).write_bytes((tmp_path / "full" / name).read_bytes())
    run_experiment(cfg, stage_dir, stages=("embed",))
    for tag in ("train", "valid", "test"):
        assert ((stage_dir / f"embed_{tag}.csv").read_bytes()
                == (tmp_path / "full" / f"embed_{tag}.csv").read_bytes())


def test_mt_patch_pipeline(tmp_path, splits):
    cfg = ExperimentConfig.from_dict(base_config(
        splits, model={"mt": {"C": 3, "iters": 10, "seed": 0}},
        embedding={"mode": "patch", "s": 500, "d": 8, "stride": 4, "seed": 0}))
    run_experiment(cfg, tmp_path / "p")
    out = tmp_path / "p"
    assert (out / "model.mt").exists() and (out / "patches.csv").exists()
    E = EmbeddingMatrix.load(out / "embed_train.csv")
    assert E.shape == (540, 15)
    assert "EM log-likelihoods" in (out / "learn.log").read_text()


def test_stage_failure_cleans_up(tmp_path, splits):
    raw = base_config(splits)
    raw["embedding"]["max_side"] = 9  # larger than the 8x8 image
    cfg = ExperimentConfig.from_dict(raw)
    with pytest.raises(StageError) as err:
        run_experiment(cfg, tmp_path / "bad")
    assert err.value.stage == "genqueries"
    names = [p.name for p in (tmp_path / "bad").iterdir()]
    assert names == ["metadata.json"]
    meta = json.loads((tmp_path / "bad" / "metadata.json").read_text())
    assert meta["error"]["stage"] == "genqueries"


def test_cli_run_and_determinism(tmp_path, splits):
    cfg_path = write_cfg(tmp_path, base_config(splits))
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r1")]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r2"),
                 "--workers", "4"]) == 0
    for name in ("curve.csv", "model.spn", "queries.txt", "embed_test.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_cli_individual_stages(tmp_path, splits):
    cfg_path = write_cfg(tmp_path, base_config(splits))
    out = str(tmp_path / "s")
    for stage in ("genqueries", "fit", "embed", "eval"):
        assert main([stage, "--config", str(cfg_path), "--out", out]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "whole")]) == 0
    assert ((tmp_path / "s" / "curve.csv").read_bytes()
            == (tmp_path / "whole" / "curve.csv").read_bytes())


def test_cli_seed_flag(tmp_path, splits):
    cfg_path = write_cfg(tmp_path, base_config(splits))
    out = tmp_path / "seeded"
    assert main(["genqueries", "--config", str(cfg_path), "--out", str(out), "--seed", "5"]) == 0
    assert json.loads((out / "metadata.json").read_text())["seeds"] == {"model": 5, "embedding": 5}


def test_cli_exit_codes(tmp_path, splits):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dataset": {}, "oops": 1}')
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    raw = base_config(splits)
    raw["embedding"]["max_side"] = 9
    assert main(["run", "--config", str(write_cfg(tmp_path, raw)),
                 "--out", str(tmp_path / "f")]) == 3


def test_cli_validate(tmp_path, splits, capsys):
    cfg_path = write_cfg(tmp_path, base_config(splits))
    out = tmp_path / "v"
    assert main(["fit", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert main(["validate", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "ok" in capsys.readouterr().out
    broken = tmp_path / "broken.spn"
    broken.write_text("LEAF 0 0 0.5\nLEAF 1 0 0.5\nPRD 2 0 1\n")
    assert main(["validate", "--model", str(broken)]) == 3
    assert "decomposability" in capsys.readouterr().err


def test_relative_paths_resolve_against_config(tmp_path):
    paths = write_splits(tmp_path, m=300)
    raw = base_config({k: p.name for k, p in paths.items()})
    cfg_path = write_cfg(tmp_path, raw)
    cfg = load_config(cfg_path)
    assert cfg.resolve(cfg.dataset.train) == paths["train"]
    assert main(["genqueries", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "queries.txt").exists()


def test_unstandardized_eval_runs(tmp_path, splits):
    raw = base_config(splits)
    raw["eval"]["standardize"] = False
    cfg = ExperimentConfig.from_dict(raw)
    assert parse_config(cfg.dumps()).eval.standardize is False
    run_experiment(cfg, tmp_path / "u")
    assert (tmp_path / "u" / "curve.csv").exists()
    raw["eval"]["standardize"] = "no"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)
