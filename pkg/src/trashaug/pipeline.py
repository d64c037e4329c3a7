"""End-to-end orchestration: config, run ledger, content-addressed artifacts.

Each step reads the artifacts of its upstream steps, writes new artifact
directories (never mutating existing ones) and appends one ledger entry.
Re-running a step with identical inputs and config hash is a no-op that
returns the existing artifact. Replaying a recorded ledger from scratch
reproduces the final report byte-identically given fixed seeds.
"""

from __future__ import annotations

import copy
import hashlib
import json
import shutil
import time
from pathlib import Path

import numpy as np
import yaml
from filelock import FileLock

from . import dataset, eval_harness, images, labeling, metrics, quality_filter, vae
from .dataset import DatasetManifest
from .eval_harness import ExperimentSpec
from .quality_filter import FilterTrainConfig, LabelStore
from .vae import VaeCheckpoint, VaeStageConfig


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    pass


DEFAULT_CONFIG = {
    "seed": 0,
    "image_size": 128,
    "classes": {},  # name -> {source: dir, generative: bool}
    "test_per_class": 300,
    "augment": {"target_count": None},
    "vae": {
        "train_subset": None,
        "stage1": {
            "latent_dim": 12,
            "base_dim": 16,
            "kernel_size": 3,
            "batch_size": 16,
            "max_epochs": 3000,
            "learning_rate": 1e-4,
            "mae_patience": 200,
            "mae_min_delta": 1e-4,
        },
        "stage2": {
            "latent_dim": 12,
            "dense_dim": 1024,
            "dense_layers": 4,
            "batch_size": 16,
            "max_epochs": 6000,
            "learning_rate": 1e-4,
            "mae_patience": 200,
            "mae_min_delta": 1e-4,
        },
        "per_class": {},
    },
    "generate": {"n_per_class": 10000},
    "labeling": {"port": 8765, "auto": None},
    "filter": {
        "epochs": 50,
        "batch_size": 16,
        "learning_rate": 1e-3,
        "arch": "small",
        "threshold": 0.5,
        "max_per_verdict": 1200,
    },
    "eval": {
        "compositions": ["real", "generated", "mixed"],
        "trash_class": None,  # default: the single generative class
        "train_size": 3000,
        "test_size": 300,
        "epochs": 30,
        "batch_size": 100,
        "learning_rate": 1e-3,
    },
    "fid": {"n_samples": 64, "extractor_out": 16},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None) -> dict:
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    config = _deep_merge(DEFAULT_CONFIG, raw)
    if overrides:
        config = _deep_merge(config, overrides)
    if not config["classes"]:
        raise PipelineError("config must declare at least one class")
    return config


def config_hash(config: dict) -> str:
    hashable = {k: v for k, v in config.items() if k != "workspace"}
    blob = json.dumps(hashable, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _artifact_id(step: str, cfg_hash: str, inputs: list[str]) -> str:
    blob = json.dumps([step, cfg_hash, sorted(inputs)]).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class RunLedger:
    def __init__(self, path):
        self.path = Path(path)

    def entries(self) -> list[dict]:
        if not self.path.is_file():
            return []
        with open(self.path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    def append(self, entry: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=False) + "\n")

    def latest(self, step: str, cfg_hash: str):
        for entry in reversed(self.entries()):
            if entry["step"] == step and entry["config_hash"] == cfg_hash:
                return entry
        return None


class Workspace:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "artifacts").mkdir(exist_ok=True)
        (self.root / "configs").mkdir(exist_ok=True)
        self.ledger = RunLedger(self.root / "ledger.jsonl")
        self.lock = FileLock(str(self.root / "ledger.lock"))

    def artifact_dir(self, artifact_id: str) -> Path:
        return self.root / "artifacts" / artifact_id

    def save_config(self, config: dict) -> str:
        h = config_hash(config)
        path = self.root / "configs" / f"{h}.json"
        if not path.is_file():
            hashable = {k: v for k, v in config.items() if k != "workspace"}
            path.write_text(json.dumps(hashable, sort_keys=True, indent=2))
        return h


STEP_REQUIRES = {
    "ingest": [],
    "augment": ["ingest"],
    "train-vae-1": ["augment"],
    "train-vae-2": ["train-vae-1", "augment"],
    "generate": ["train-vae-1", "train-vae-2"],
    "label-serve": ["generate"],
    "train-filter": ["generate", "label-serve"],
    "filter": ["generate", "train-filter"],
    "compose": ["ingest", "augment", "filter"],
    "train-eval": ["compose"],
    "evaluate": ["train-eval", "compose"],
    "report": [
        "ingest",
        "augment",
        "train-vae-1",
        "train-vae-2",
        "generate",
        "train-filter",
        "filter",
        "evaluate",
    ],
}
STEP_ORDER = list(STEP_REQUIRES)


def _class_names(config) -> list[str]:
    return sorted(config["classes"])


def _generative_classes(config) -> list[str]:
    return [c for c in _class_names(config) if config["classes"][c].get("generative")]


def _stage_configs(config, cls: str):
    names = _generative_classes(config)
    idx = names.index(cls)
    base = config["seed"]
    s1 = dict(config["vae"]["stage1"])
    s2 = dict(config["vae"]["stage2"])
    per_class = config["vae"].get("per_class") or {}
    s1.update((per_class.get(cls) or {}).get("stage1", {}))
    s2.update((per_class.get(cls) or {}).get("stage2", {}))
    s1.setdefault("seed", base * 1000 + idx)
    s2.setdefault("seed", base * 1000 + 500 + idx)
    cfg1 = VaeStageConfig(stage=1, image_size=config["image_size"], **s1)
    cfg2 = VaeStageConfig(stage=2, input_dim=cfg1.latent_dim, **s2)
    return cfg1, cfg2


def _vae_train_manifest(config, aug_dir: Path, cls: str) -> DatasetManifest:
    manifest = DatasetManifest.load(aug_dir / "classes" / cls / "train.jsonl")
    subset = config["vae"].get("train_subset")
    if subset:
        manifest = dataset.subsample(manifest, min(subset, len(manifest)), config["seed"])
    return manifest


# ---------------------------------------------------------------------------
# Step implementations. Each gets (config, workspace, inputs: {step: Path},
# out: Path) and writes everything it produces under out.


def _step_ingest(config, ws, inputs, out):
    skipped = {}
    for cls in _class_names(config):
        spec = config["classes"][cls]
        cls_dir = out / "classes" / cls
        result = dataset.ingest(
            spec["source"], cls, (config["image_size"], config["image_size"]), cls_dir
        )
        skipped[cls] = result.skipped
        train, test = dataset.split_train_test(
            result.manifest, min(config["test_per_class"], len(result.manifest) - 1),
            config["seed"],
        )
        train.save(cls_dir / "train.jsonl")
        test.save(cls_dir / "test.jsonl")
    (out / "skipped.json").write_text(json.dumps(skipped, sort_keys=True, indent=2))


def _step_augment(config, ws, inputs, out):
    for cls in _class_names(config):
        src = DatasetManifest.load(inputs["ingest"] / "classes" / cls / "train.jsonl")
        cls_dir = out / "classes" / cls
        augmented = dataset.augment(src, cls_dir)
        target = config["augment"].get("target_count")
        if target and target < len(augmented):
            augmented = dataset.subsample(augmented, target, config["seed"])
        augmented.save(cls_dir / "train.jsonl")


def _step_train_vae_1(config, ws, inputs, out):
    for cls in _generative_classes(config):
        cfg1, _ = _stage_configs(config, cls)
        manifest = _vae_train_manifest(config, inputs["augment"], cls)
        ckpt = vae.train_stage(manifest, cfg1)
        (out / cls).mkdir(parents=True, exist_ok=True)
        ckpt.save(out / cls / "stage1.pt")


def _step_train_vae_2(config, ws, inputs, out):
    for cls in _generative_classes(config):
        cfg1, cfg2 = _stage_configs(config, cls)
        stage1 = VaeCheckpoint.load(inputs["train-vae-1"] / cls / "stage1.pt")
        manifest = _vae_train_manifest(config, inputs["augment"], cls)
        latents = vae.stage1_latents(
            manifest, stage1, source=cfg2.latent_source, seed=cfg2.seed
        )
        ckpt = vae.train_stage(latents, cfg2)
        (out / cls).mkdir(parents=True, exist_ok=True)
        ckpt.save(out / cls / "stage2.pt")


def _step_generate(config, ws, inputs, out):
    from . import images as img_io

    n = config["generate"]["n_per_class"]
    for i, cls in enumerate(_generative_classes(config)):
        stage1 = VaeCheckpoint.load(inputs["train-vae-1"] / cls / "stage1.pt")
        stage2 = VaeCheckpoint.load(inputs["train-vae-2"] / cls / "stage2.pt")
        imgs = vae.generate(n, stage1, stage2, seed=config["seed"] * 100 + i)
        cls_dir = out / "classes" / cls
        cls_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for j, arr in enumerate(imgs):
            rel = f"gen_{cls}_{j:06d}.png"
            img_io.save_image(arr, cls_dir / rel)
            entries.append(
                dataset.ManifestEntry(
                    image_id=f"gen_{cls}_{j:06d}",
                    path=rel,
                    class_label=cls,
                    provenance="generated",
                    split="train",
                )
            )
        DatasetManifest(cls_dir, entries).save(cls_dir / "pool.jsonl")


def _step_label_serve(config, ws, inputs, out):
    auto = config["labeling"].get("auto")
    if not auto:
        raise PipelineError(
            "label-serve as a ledger step needs labeling.auto configured; "
            "start the interactive service with `pipeline label-serve --interactive`"
        )
    if auto.get("import_path"):
        # verdicts collected interactively; snapshot them into the artifact
        shutil.copyfile(auto["import_path"], out / "labels.jsonl")
        store = LabelStore(out / "labels.jsonl")
        counts = {"imported": len(store.records())}
        (out / "counts.json").write_text(json.dumps(counts, sort_keys=True, indent=2))
        return
    store = LabelStore(out / "labels.jsonl")
    counts = {}
    for cls in _generative_classes(config):
        pool = DatasetManifest.load(inputs["generate"] / "classes" / cls / "pool.jsonl")
        counts[cls] = labeling.auto_label(
            pool,
            store,
            good_fraction=auto.get("good_fraction", 0.5),
            annotator=auto.get("annotator", "auto"),
        )
    (out / "counts.json").write_text(json.dumps(counts, sort_keys=True, indent=2))


def _step_train_filter(config, ws, inputs, out):
    store = LabelStore(inputs["label-serve"] / "labels.jsonl")
    verdicts = store.verdicts()
    fcfg = config["filter"]
    cap = fcfg.get("max_per_verdict")
    stats = {}
    for cls in _generative_classes(config):
        pool = DatasetManifest.load(inputs["generate"] / "classes" / cls / "pool.jsonl")
        good = DatasetManifest(
            pool.root, [e for e in pool if verdicts.get(e.image_id) == "good"]
        )
        bad = DatasetManifest(
            pool.root, [e for e in pool if verdicts.get(e.image_id) == "bad"]
        )
        if cap:
            if len(good) > cap:
                good = dataset.subsample(good, cap, config["seed"])
            if len(bad) > cap:
                bad = dataset.subsample(bad, cap, config["seed"])
        train_cfg = FilterTrainConfig(
            batch_size=fcfg["batch_size"],
            epochs=fcfg["epochs"],
            learning_rate=fcfg["learning_rate"],
            seed=config["seed"],
            arch=fcfg["arch"],
            threshold=fcfg["threshold"],
        )
        model = quality_filter.train_filter(good, bad, train_cfg)
        (out / cls).mkdir(parents=True, exist_ok=True)
        model.save(out / cls / "filter.pt")
        stats[cls] = model.training_stats
    (out / "stats.json").write_text(json.dumps(stats, sort_keys=True, indent=2))


def _step_filter(config, ws, inputs, out):
    counts = {}
    for cls in _generative_classes(config):
        pool = DatasetManifest.load(inputs["generate"] / "classes" / cls / "pool.jsonl")
        model = quality_filter.FilterModel.load(inputs["train-filter"] / cls / "filter.pt")
        accepted, rejected = quality_filter.filter_pool(model, pool)
        cls_dir = out / "classes" / cls
        cls_dir.mkdir(parents=True, exist_ok=True)
        accepted.save(cls_dir / "accepted.jsonl")
        rejected.save(cls_dir / "rejected.jsonl")
        counts[cls] = {"accepted": len(accepted), "rejected": len(rejected)}
    (out / "counts.json").write_text(json.dumps(counts, sort_keys=True, indent=2))


def _step_compose(config, ws, inputs, out):
    ecfg = config["eval"]
    classes = _class_names(config)
    per_class = ecfg["train_size"] // len(classes)

    tests = []
    for cls in classes:
        test = DatasetManifest.load(inputs["ingest"] / "classes" / cls / "test.jsonl")
        tests.append(dataset.subsample(test, min(ecfg["test_size"], len(test)), config["seed"]))
    dataset.concat(tests).save(out / "test.jsonl")

    for mode in ecfg["compositions"]:
        parts = []
        for cls in classes:
            real = DatasetManifest.load(inputs["augment"] / "classes" / cls / "train.jsonl")
            generative = config["classes"][cls].get("generative")
            if generative and mode != "real":
                accepted = DatasetManifest.load(
                    inputs["filter"] / "classes" / cls / "accepted.jsonl"
                )
                parts.append(dataset.compose(real, accepted, mode, per_class, config["seed"]))
            else:
                parts.append(dataset.subsample(real, per_class, config["seed"]))
        merged = dataset.concat(parts)
        merged = dataset.subsample(merged, len(merged), config["seed"])
        merged.save(out / f"train-{mode}.jsonl")


def _experiment_spec(config, mode: str) -> ExperimentSpec:
    ecfg = config["eval"]
    trash = ecfg.get("trash_class") or _generative_classes(config)[0]
    return ExperimentSpec(
        trash_class=trash,
        composition=mode,
        train_size=ecfg["train_size"],
        test_size=ecfg["test_size"],
        epochs=ecfg["epochs"],
        batch_size=ecfg["batch_size"],
        seed=config["seed"],
        learning_rate=ecfg["learning_rate"],
    )


def _step_train_eval(config, ws, inputs, out):
    for mode in config["eval"]["compositions"]:
        train = DatasetManifest.load(inputs["compose"] / f"train-{mode}.jsonl")
        test = DatasetManifest.load(inputs["compose"] / "test.jsonl")
        eval_harness.assert_disjoint(train, test)
        model = eval_harness.train_eval_classifier(train, _experiment_spec(config, mode))
        model.save(out / f"eval-{mode}.pt")


def _step_evaluate(config, ws, inputs, out):
    test = DatasetManifest.load(inputs["compose"] / "test.jsonl")
    reports = {}
    compositions = list(config["eval"]["compositions"])
    for mode in compositions:
        model = eval_harness.EvalModel.load(inputs["train-eval"] / f"eval-{mode}.pt")
        reports[mode] = eval_harness.evaluate(model, test)
        (out / f"report-{mode}.json").write_text(reports[mode].to_record())
    trash = _experiment_spec(config, compositions[0]).trash_class
    table = eval_harness.ComparisonTable(
        trash_class=trash, reports=reports, compositions=compositions
    )
    (out / "comparison.json").write_text(table.to_record())
    (out / "comparison.txt").write_text(table.render() + "\n")


def _fid_for_class(config, inputs, cls: str) -> dict:
    fcfg = config["fid"]
    n = fcfg["n_samples"]
    extractor = metrics.FlattenDownsampleExtractor(fcfg["extractor_out"])
    real = DatasetManifest.load(inputs["augment"] / "classes" / cls / "train.jsonl")
    real = dataset.subsample(real, min(n, len(real)), config["seed"])
    real_imgs = [real.load_pixels(e) for e in real]

    stage1 = VaeCheckpoint.load(inputs["train-vae-1"] / cls / "stage1.pt")
    stage2 = VaeCheckpoint.load(inputs["train-vae-2"] / cls / "stage2.pt")
    seed = config["seed"] + 7
    sets = {
        "stage1": vae.generate_stage1(len(real_imgs), stage1, seed),
        "stage2": vae.generate(len(real_imgs), stage1, stage2, seed),
        "reconstruction": [
            vae.reconstruct(
                images.resize(img, (stage1.config.image_size,) * 2), stage1, stage2
            )
            for img in real_imgs
        ],
    }
    real_feats = metrics.extract_features(real_imgs, extractor)
    out = {}
    for name, imgs in sets.items():
        feats = metrics.extract_features(imgs, extractor)
        out[name] = json.loads(metrics.fid(real_feats, feats).to_record())
    return out


def _step_report(config, ws, inputs, out):
    evaluated = [p.name for p in inputs["evaluate"].glob("report-*.json")]
    if not evaluated:
        raise PipelineError("report requires at least one completed evaluate step")
    fid_reports = {cls: _fid_for_class(config, inputs, cls) for cls in _generative_classes(config)}
    filter_stats = json.loads((inputs["train-filter"] / "stats.json").read_text())
    filter_counts = json.loads((inputs["filter"] / "counts.json").read_text())
    comparison = json.loads((inputs["evaluate"] / "comparison.json").read_text())
    bundle = {
        "config_hash": config_hash(config),
        "config": {k: v for k, v in config.items() if k != "workspace"},
        "fid": fid_reports,
        "filter_accuracy": filter_stats,
        "filter_counts": filter_counts,
        "comparison": comparison,
    }
    (out / "report.json").write_text(json.dumps(bundle, sort_keys=True, indent=2))

    lines = []
    for cls, scores in sorted(fid_reports.items()):
        lines.append(f"FID scores ({cls})")
        lines.append(f"{'':>8} {'Stage 1':>10} {'Stage 2':>10} {'Reconstruction':>15}")
        lines.append(
            f"{cls:>8} {scores['stage1']['score']:>10.2f} "
            f"{scores['stage2']['score']:>10.2f} "
            f"{scores['reconstruction']['score']:>15.2f}"
        )
        lines.append("")
    lines.append("Binary classifier accuracy")
    lines.append(f"{'':>8} {'Training Acc.':>14} {'Validation Acc.':>16} {'Test Acc.':>10}")
    for cls, stats in sorted(filter_stats.items()):
        lines.append(
            f"{cls:>8} {stats['train_acc']:>14.2f} {stats['val_acc']:>16.2f} "
            f"{stats['test_acc']:>10.2f}"
        )
    lines.append("")
    lines.append((inputs["evaluate"] / "comparison.txt").read_text().rstrip("\n"))
    (out / "report.txt").write_text("\n".join(lines) + "\n")


STEP_FUNCS = {
    "ingest": _step_ingest,
    "augment": _step_augment,
    "train-vae-1": _step_train_vae_1,
    "train-vae-2": _step_train_vae_2,
    "generate": _step_generate,
    "label-serve": _step_label_serve,
    "train-filter": _step_train_filter,
    "filter": _step_filter,
    "compose": _step_compose,
    "train-eval": _step_train_eval,
    "evaluate": _step_evaluate,
    "report": _step_report,
}


def run_step(step: str, config: dict, workspace) -> dict:
    """Run one pipeline step; returns its ledger entry (new or existing)."""
    if step not in STEP_FUNCS:
        raise PipelineError(f"unknown step {step!r}; known: {', '.join(STEP_ORDER)}")
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    with ws.lock:
        cfg_hash = ws.save_config(config)
        inputs = {}
        input_ids = []
        for required in STEP_REQUIRES[step]:
            upstream = ws.ledger.latest(required, cfg_hash)
            if upstream is None:
                raise MissingArtifactError(
                    f"missing upstream artifact for {step!r}: run step {required!r} first"
                )
            art_id = upstream["outputs"]["dir"]
            inputs[required] = ws.artifact_dir(art_id)
            input_ids.append(art_id)

        art_id = _artifact_id(step, cfg_hash, input_ids)
        existing = ws.ledger.latest(step, cfg_hash)
        if (
            existing is not None
            and existing["outputs"]["dir"] == art_id
            and ws.artifact_dir(art_id).is_dir()
        ):
            return existing

        out = ws.artifact_dir(art_id)
        if out.exists():
            shutil.rmtree(out)
        tmp = out.with_name(out.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        try:
            STEP_FUNCS[step](config, ws, inputs, tmp)
        except Exception:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        tmp.rename(out)
        entry = {
            "step": step,
            "inputs": input_ids,
            "outputs": {"dir": art_id},
            "config_hash": cfg_hash,
            "timestamp": time.time(),
        }
        ws.ledger.append(entry)
        return entry


def run_all(config: dict, workspace, steps=None) -> list[dict]:
    return [run_step(s, config, workspace) for s in (steps or STEP_ORDER)]


def replay(workspace) -> list[dict]:
    """Delete all derived artifacts and re-run every recorded step with its
    recorded config, in order."""
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    recorded = ws.ledger.entries()
    if not recorded:
        raise PipelineError("nothing to replay: the ledger is empty")
    plans = []
    for entry in recorded:
        cfg_path = ws.root / "configs" / f"{entry['config_hash']}.json"
        if not cfg_path.is_file():
            raise PipelineError(f"recorded config {entry['config_hash']} is missing")
        plans.append((entry["step"], json.loads(cfg_path.read_text())))
    shutil.rmtree(ws.root / "artifacts")
    (ws.root / "artifacts").mkdir()
    ws.ledger.path.unlink()
    return [run_step(step, cfg, ws) for step, cfg in plans]


def report_path(workspace, config: dict) -> Path:
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    entry = ws.ledger.latest("report", config_hash(config))
    if entry is None:
        raise MissingArtifactError("no report artifact yet: run step 'report' first")
    return ws.artifact_dir(entry["outputs"]["dir"])


def serve_labels(config: dict, workspace, store_path=None) -> None:
    """Start the interactive labeling HTTP service over the generated pools."""
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    cfg_hash = config_hash(config)
    upstream = ws.ledger.latest("generate", cfg_hash)
    if upstream is None:
        raise MissingArtifactError(
            "missing upstream artifact for 'label-serve': run step 'generate' first"
        )
    gen_dir = ws.artifact_dir(upstream["outputs"]["dir"])
    pools = [
        DatasetManifest.load(gen_dir / "classes" / cls / "pool.jsonl")
        for cls in _generative_classes(config)
    ]
    pool = dataset.concat(pools)
    store = LabelStore(store_path or ws.root / "labels.jsonl")
    labeling.serve(pool, store, config["labeling"]["port"])
