"""Experiment drivers: cross-validation, the masked-vs-whole feature
ablation, and the training-fraction sweep.

Every run writes an immutable ``config.lock.json`` snapshot and a
``report.json`` into its output directory. Reports contain no timestamps
and are serialized with sorted keys, so rerunning an experiment with the
same config and inputs produces byte-identical files. Per-unit training
seeds are derived from (master seed, split index, fraction), which makes
splits, ablation arms and sweep points independent but reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import rng
from .dataset import Manifest, SplitSpec, load_manifest, make_splits, subsample_train
from .errors import (
    ConfigError,
    MissingFeature,
    MissingReport,
    ProvenanceMismatch,
)
from .featurestore import (
    MASKING_MASKED,
    MASKING_WHOLE,
    FeatureStore,
    read_feature_file,
)
from .metrics import aggregate_splits, evaluate
from .mlphead import EpochLog, TrainConfig, predict_batch, train, write_training_log

log = logging.getLogger(__name__)

MODES = ("cv", "ablation", "sweep")

# Domain tags so derived seed streams cannot collide.
_TAG_TRAIN = 1
_TAG_SUBSAMPLE = 2


@dataclass
class ExperimentConfig:
    manifest: str
    features_masked: str
    features_whole: str | None = None
    n_splits: int = 5
    train_ratio: float = 0.8
    seed: int = 0
    k: int = 2
    fractions: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    out_dir: str = "runs/experiment"
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        train_d = d.pop("train", {})
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(train_d) - known
        if unknown:
            raise ConfigError(f"unknown train options: {sorted(unknown)}")
        cfg_fields = {f.name for f in fields(cls)}
        unknown = set(d) - cfg_fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "manifest" not in d or "features_masked" not in d:
            raise ConfigError("config needs at least 'manifest' and 'features_masked'")
        if "fractions" in d:
            d["fractions"] = tuple(float(f) for f in d["fractions"])
        try:
            train_cfg = TrainConfig(**train_d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train options: {exc}") from None
        return cls(train=train_cfg, **d)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            payload = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc.msg})") from None
        if not isinstance(payload, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
        return cls.from_dict(payload)

    def validate(self, mode: str) -> None:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r} (want one of {MODES})")
        if not Path(self.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if not Path(self.features_masked).is_file():
            raise ConfigError(f"feature file not found: {self.features_masked}")
        if mode == "ablation":
            if not self.features_whole:
                raise ConfigError("ablation needs 'features_whole'")
            if not Path(self.features_whole).is_file():
                raise ConfigError(f"feature file not found: {self.features_whole}")
        if self.n_splits < 1:
            raise ConfigError("n_splits must be >= 1")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError("train_ratio must be in (0, 1)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.fractions or any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ConfigError("fractions must lie in (0, 1]")


def _fraction_key(fraction: float) -> int:
    return int(round(fraction * 10_000))


def train_seed(master_seed: int, split_index: int, fraction: float) -> int:
    return rng.derive_seed(_TAG_TRAIN, master_seed, split_index, _fraction_key(fraction))


def subsample_seed(master_seed: int, split_index: int) -> int:
    return rng.derive_seed(_TAG_SUBSAMPLE, master_seed, split_index)


def splits_digest(splits: list[SplitSpec]) -> str:
    payload = [[list(s.train_ids), list(s.val_ids)] for s in splits]
    return hashlib.sha256(json.dumps(payload).encode("utf-8")).hexdigest()


def _check_coverage(store: FeatureStore, manifest: Manifest) -> None:
    for rec in manifest:
        if rec.id not in store:
            raise MissingFeature(rec.id)


def _check_provenance(store: FeatureStore, expected: str, path: str) -> None:
    # Untagged files (no sidecar) are accepted; an explicit contradicting tag
    # is not, to keep the ablation arms from being swapped by accident.
    if store.masking is not None and store.masking != expected:
        raise ProvenanceMismatch(
            f"{path} is tagged {store.masking!r} but was passed as the "
            f"{expected!r} arm")


def _run_one(store: FeatureStore, split: SplitSpec, labels: dict[str, int],
             base_train: TrainConfig, seed: int) -> tuple[dict, list[EpochLog]]:
    cfg = replace(base_train, seed=seed)
    params, epoch_log = train(store, split, labels, cfg)
    preds = predict_batch(params, store.matrix(list(split.val_ids)).astype(float))
    truth = [labels[rid] for rid in split.val_ids]
    report = evaluate(truth, preds.tolist())
    entry = {
        "split_index": split.split_index,
        "fraction": split.fraction,
        "train_seed": seed,
        "n_train": len(split.train_ids),
        "n_val": len(split.val_ids),
        "weighted_f1": report.weighted_f1,
        "metrics": report.to_dict(),
    }
    return entry, epoch_log


def _run_arm(store: FeatureStore, splits: list[SplitSpec], labels: dict[str, int],
             config: ExperimentConfig) -> tuple[dict, dict[str, list[EpochLog]]]:
    per_split = []
    logs: dict[str, list[EpochLog]] = {}
    for split in splits:
        seed = train_seed(config.seed, split.split_index, 1.0)
        entry, epoch_log = _run_one(store, split, labels, config.train, seed)
        per_split.append(entry)
        logs[f"split{split.split_index}"] = epoch_log
    mean, std = aggregate_splits([e["weighted_f1"] for e in per_split])
    arm = {
        "per_split": per_split,
        "aggregate": {"mean": mean, "std": std},
        "splits_sha256": splits_digest(splits),
    }
    return arm, logs


def run_cv(config: ExperimentConfig) -> dict:
    """Train and evaluate once per split on the masked features."""
    config.validate("cv")
    manifest = load_manifest(config.manifest)
    labels = manifest.labels()
    splits = make_splits(manifest, config.n_splits, config.train_ratio, config.seed)
    store = read_feature_file(config.features_masked)
    _check_coverage(store, manifest)
    arm, logs = _run_arm(store, splits, labels, config)
    report = {
        "mode": "cv",
        "config": config.to_dict(),
        "splits_sha256": arm["splits_sha256"],
        "per_split": arm["per_split"],
        "aggregate": arm["aggregate"],
    }
    _write_outputs(config, report, {"cv": logs})
    return report


def run_ablation(config: ExperimentConfig) -> dict:
    """Identical CV runs on masked vs whole-image features, shared splits."""
    config.validate("ablation")
    manifest = load_manifest(config.manifest)
    labels = manifest.labels()
    splits = make_splits(manifest, config.n_splits, config.train_ratio, config.seed)

    arms = {}
    all_logs = {}
    for arm_name, path, expected in (
        ("masked", config.features_masked, MASKING_MASKED),
        ("whole_image", config.features_whole, MASKING_WHOLE),
    ):
        store = read_feature_file(path)
        _check_provenance(store, expected, path)
        _check_coverage(store, manifest)
        arm, logs = _run_arm(store, splits, labels, config)
        arms[arm_name] = arm
        all_logs[arm_name] = logs

    if arms["masked"]["splits_sha256"] != arms["whole_image"]["splits_sha256"]:
        raise ConfigError("ablation arms diverged on split assignments")
    report = {
        "mode": "ablation",
        "config": config.to_dict(),
        "splits_sha256": arms["masked"]["splits_sha256"],
        "arms": arms,
    }
    _write_outputs(config, report, all_logs)
    return report


def run_fraction_sweep(config: ExperimentConfig) -> dict:
    """Retrain at decreasing train fractions; validation folds stay fixed.

    Subsampling seeds do not depend on the fraction, so the fraction subsets
    are nested, and the fraction-1.0 point reproduces :func:`run_cv`
    exactly (same derived training seeds).
    """
    config.validate("sweep")
    manifest = load_manifest(config.manifest)
    labels = manifest.labels()
    splits = make_splits(manifest, config.n_splits, config.train_ratio, config.seed)
    store = read_feature_file(config.features_masked)
    _check_coverage(store, manifest)

    per_fraction = []
    all_logs: dict[str, dict[str, list[EpochLog]]] = {}
    for fraction in sorted(set(config.fractions)):
        entries = []
        logs: dict[str, list[EpochLog]] = {}
        for split in splits:
            sub = subsample_train(split, fraction,
                                  subsample_seed(config.seed, split.split_index))
            seed = train_seed(config.seed, split.split_index, fraction)
            entry, epoch_log = _run_one(store, sub, labels, config.train, seed)
            entries.append(entry)
            logs[f"split{split.split_index}"] = epoch_log
        mean, std = aggregate_splits([e["weighted_f1"] for e in entries])
        per_fraction.append({
            "fraction": fraction,
            "per_split": entries,
            "mean": mean,
            "std": std,
        })
        all_logs[f"fraction{_fraction_key(fraction):05d}"] = logs

    report = {
        "mode": "sweep",
        "config": config.to_dict(),
        "splits_sha256": splits_digest(splits),
        "per_fraction": per_fraction,
    }
    _write_outputs(config, report, all_logs)
    return report


def _write_outputs(config: ExperimentConfig, report: dict,
                   logs: dict[str, dict[str, list[EpochLog]]]) -> None:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.lock.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log_dir = out / "logs"
    log_dir.mkdir(exist_ok=True)
    for group, group_logs in logs.items():
        for unit, epoch_log in group_logs.items():
            write_training_log(epoch_log, log_dir / f"{group}-{unit}.csv")
    log.info("experiment outputs written to %s", out)


def load_report(experiment_dir: str | Path) -> dict:
    p = Path(experiment_dir) / "report.json"
    if not p.is_file():
        raise MissingReport(f"no report.json in {experiment_dir}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MissingReport(f"{p}: invalid JSON ({exc.msg})") from None


def _fmt(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def render_report(experiment_dir: str | Path) -> list[Path]:
    """Write a human-readable summary (and plot-ready CSV for sweeps)."""
    out = Path(experiment_dir)
    report = load_report(out)
    written = []
    lines = []
    mode = report.get("mode")
    if mode == "cv":
        agg = report["aggregate"]
        lines += [
            "| features | weighted F1 |",
            "| --- | --- |",
            f"| masked | {_fmt(agg['mean'], agg['std'])} |",
        ]
    elif mode == "ablation":
        lines += ["| features | weighted F1 |", "| --- | --- |"]
        for arm_name in ("masked", "whole_image"):
            agg = report["arms"][arm_name]["aggregate"]
            lines.append(f"| {arm_name} | {_fmt(agg['mean'], agg['std'])} |")
    elif mode == "sweep":
        lines += ["| train fraction | weighted F1 |", "| --- | --- |"]
        rows = sorted(report["per_fraction"], key=lambda r: r["fraction"])
        for row in rows:
            lines.append(f"| {row['fraction']:.0%} | {_fmt(row['mean'], row['std'])} |")
        csv_path = out / "sweep.csv"
        with csv_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fraction", "mean", "std"])
            for row in rows:
                writer.writerow([row["fraction"], repr(row["mean"]), repr(row["std"])])
        written.append(csv_path)
    else:
        raise MissingReport(f"report has unknown mode {mode!r}")
    md_path = out / "summary.md"
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.insert(0, md_path)
    return written
