"""Command-line entry point: supernet training, search, subnet training,
evaluation, neuron censuses and the macro-architecture ablation.

Every command writes its artifacts under a run directory together with the
resolved configuration (``config.json``) and a ``manifest.json`` listing
artifact hashes. Rerunning a command with ``--config <run>/config.json``
reproduces it.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .archspace import VARIANTS, Genotype, GenotypeError, MacroArch, ann_variant, assemble, build_network
from .blocks import BlockError, BlockKind
from .datasets import (
    AugmentConfig,
    DatasetFormatError,
    ImageDataset,
    channel_stats,
    data_root,
    find_cifar10,
    load_cifar_binary,
    load_idx,
    make_augment_fn,
    normalize,
    split_train_val,
    stratified_subset,
    synthetic_images,
)
from .evosearch import SearchConfig, search_supernet
from .spikeledger import report, report_csv
from .supernet import SuperNet, train_supernet
from .training import (
    DivergenceError,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)

log = logging.getLogger("spikenas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class DataSection:
    dataset: str = "cifar10"  # cifar10 | idx | synthetic
    root: str | None = None
    per_class: int | None = None  # stratified subset of the training data
    test_per_class: int | None = None
    train_ratio: float = 0.8  # train/val split of the training data for supernet and search
    synthetic_size: int = 2000
    augment: bool = True


@dataclass
class MacroSection:
    variant: str = "SNN_1"
    stem: str = "standard32"
    channels: int = 16
    voting_k: int = 10


@dataclass
class TrainSection:
    timesteps: int = 8
    epochs: int = 600
    batch_size: int = 96
    lr: float = 1e-3
    cutout: int = 16
    crop_flip: bool = True
    spike_reg: float = 0.0
    mode: str = "snn"


@dataclass
class SearchSection:
    lam: float = -0.08
    rounds: int = 10
    mutation_ratio: float = 0.2
    num_mutation: int = 10
    num_crossover: int = 10
    top_k: int = 10
    pool_size: int = 20
    fitness: str = "exp"


@dataclass
class RunConfig:
    seed: int | None = None
    preset: str = "full"
    genotype: str | None = None
    fill: str = "SCB_k3"  # block used in every slot by ablate-macro
    variants: list[str] = field(default_factory=lambda: ["SNN_1", "SNN_2", "SNN_3", "SNN_4"])
    data: DataSection = field(default_factory=DataSection)
    macro: MacroSection = field(default_factory=MacroSection)
    train: TrainSection = field(default_factory=TrainSection)
    search: SearchSection = field(default_factory=SearchSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        apply_overrides(cfg, d)
        return cfg


PRESETS = {
    "full": {},
    "desk": {
        "macro": {"channels": 8},
        "train": {"timesteps": 4, "epochs": 50, "batch_size": 64},
        "data": {"per_class": 200, "test_per_class": 100},
    },
}

SECTIONS = {"data": DataSection, "macro": MacroSection, "train": TrainSection, "search": SearchSection}


def _coerce(value, current, name):
    if isinstance(value, str) and not isinstance(current, str):
        if isinstance(current, bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ConfigError(f"{name}: expected a boolean, got {value!r}")
            return value.lower() in ("true", "1")
        if isinstance(current, list):
            return [v for v in value.split(",") if v]
        if value.lower() in ("none", "null"):
            return None
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            if current is None:  # optional string fields
                return value
            raise ConfigError(f"{name}: cannot parse {value!r}") from exc
    return value


def apply_overrides(cfg: RunConfig, overrides: dict, prefix: str = "") -> None:
    """Merge a (nested) mapping into ``cfg``; unknown keys are a config error."""
    for key, value in overrides.items():
        name = f"{prefix}{key}"
        if key in SECTIONS and isinstance(value, dict):
            section = getattr(cfg, key)
            valid = {f.name for f in dataclasses.fields(section)}
            for k, v in value.items():
                if k not in valid:
                    raise ConfigError(f"unknown config key {name}.{k}")
                setattr(section, k, _coerce(v, getattr(section, k), f"{name}.{k}"))
        elif key in {f.name for f in dataclasses.fields(RunConfig)} and key not in SECTIONS:
            setattr(cfg, key, _coerce(value, getattr(cfg, key), name))
        else:
            raise ConfigError(f"unknown config key {name}")


def _set_dotted(cfg: RunConfig, dotted: str):
    if "=" not in dotted:
        raise ConfigError(f"--set expects key=value, got {dotted!r}")
    key, value = dotted.split("=", 1)
    parts = key.split(".")
    if len(parts) == 1:
        apply_overrides(cfg, {parts[0]: value})
    elif len(parts) == 2:
        apply_overrides(cfg, {parts[0]: {parts[1]: value}})
    else:
        raise ConfigError(f"bad config key {key!r}")


# flag name -> (section, key)
FLAG_MAP = {
    "seed": (None, "seed"),
    "genotype": (None, "genotype"),
    "fill": (None, "fill"),
    "dataset": ("data", "dataset"),
    "data": ("data", "root"),
    "per_class": ("data", "per_class"),
    "variant": ("macro", "variant"),
    "stem": ("macro", "stem"),
    "channels": ("macro", "channels"),
    "timesteps": ("train", "timesteps"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr"),
    "spike_reg": ("train", "spike_reg"),
    "mode": ("train", "mode"),
    "lam": ("search", "lam"),
    "rounds": ("search", "rounds"),
    "pool_size": ("search", "pool_size"),
}


def resolve_config(args) -> RunConfig:
    """Preset, then ``--config`` file, then individual flags and ``--set`` pairs."""
    cfg = RunConfig()
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
            file_cfg.pop("command", None)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    preset = args.preset or file_cfg.get("preset") or "full"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {tuple(PRESETS)}")
    apply_overrides(cfg, PRESETS[preset])
    apply_overrides(cfg, file_cfg)
    cfg.preset = preset
    for flag, (section, key) in FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            apply_overrides(cfg, {key: value})
        else:
            apply_overrides(cfg, {section: {key: value}})
    if getattr(args, "variants", None):
        cfg.variants = [v for v in args.variants.split(",") if v]
    for dotted in getattr(args, "set", None) or []:
        _set_dotted(cfg, dotted)
    return cfg


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    try:
        return TrainConfig(timesteps=t.timesteps, epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                           cutout=t.cutout, crop_flip=t.crop_flip, spike_reg=t.spike_reg, mode=t.mode,
                           seed=cfg.seed if cfg.seed is not None else 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def search_config(cfg: RunConfig) -> SearchConfig:
    try:
        return SearchConfig(seed=cfg.seed if cfg.seed is not None else 0, **asdict(cfg.search))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def macro_arch(cfg: RunConfig, num_classes: int, variant: str | None = None) -> MacroArch:
    m = cfg.macro
    try:
        return MacroArch(variant or m.variant, m.stem, m.channels, num_classes, m.voting_k)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _require_seed(cfg: RunConfig, command: str):
    if cfg.seed is None:
        raise ConfigError(f"{command} requires --seed")


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def _fit_size(ds: ImageDataset, size: int) -> ImageDataset:
    h = ds.images.shape[-1]
    if h == size:
        return ds
    if h > size:
        raise DataError(f"images are {h}x{h}, larger than the {size}x{size} input of the stem")
    lo = (size - h) // 2
    pad = ((0, 0), (0, 0), (lo, size - h - lo), (lo, size - h - lo))
    return dataclasses.replace(ds, images=np.pad(ds.images, pad))


def load_data(cfg: RunConfig, size: int = 32) -> tuple[ImageDataset, ImageDataset]:
    """Return normalized ``(train, test)`` datasets according to ``cfg.data``."""
    d = cfg.data
    seed = cfg.seed if cfg.seed is not None else 0
    if d.dataset == "synthetic":
        train_set = synthetic_images(d.synthetic_size, size=size, seed=seed)
        test_set = synthetic_images(max(d.synthetic_size // 5, 10), size=size, seed=seed + 10_000)
        test_set = dataclasses.replace(test_set, split="test")
    elif d.dataset == "cifar10":
        found = find_cifar10(d.root)
        if found is None:
            root = data_root(d.root)
            raise DataError(f"CIFAR-10 binary batches not found under {root or '<unset>'}; "
                            "pass --data or set SPIKENAS_DATA")
        train_files, test_files = found
        if not test_files:
            raise DataError(f"test_batch.bin missing next to {train_files[0]}")
        train_set = load_cifar_binary(train_files, split="train")
        test_set = load_cifar_binary(test_files, split="test")
    elif d.dataset == "idx":
        root = data_root(d.root)
        if root is None or not root.is_dir():
            raise DataError("IDX dataset directory not found; pass --data or set SPIKENAS_DATA")
        try:
            train_set = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte", "idx")
            test_set = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", "idx")
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from exc
        test_set = dataclasses.replace(test_set, split="test")
    else:
        raise ConfigError(f"unknown dataset {d.dataset!r}")
    if d.per_class:
        train_set = stratified_subset(train_set, d.per_class, seed)
    if d.test_per_class:
        test_set = stratified_subset(test_set, d.test_per_class, seed)
    train_set, test_set = _fit_size(train_set, size), _fit_size(test_set, size)
    mean, std = channel_stats(train_set)
    return normalize(train_set, mean, std), normalize(test_set, mean, std)


def augment_fn(cfg: RunConfig):
    t = cfg.train
    if not cfg.data.augment or (not t.crop_flip and not t.cutout):
        return None
    return make_augment_fn(AugmentConfig(crop=t.crop_flip, flip=t.crop_flip, cutout=t.cutout))


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------


class RunDir:
    def __init__(self, path, command: str, cfg: RunConfig):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.artifacts: list[str] = []
        self.results: dict = {}
        self.write_json("config.json", {"command": command, **cfg.to_dict()})

    def file(self, name: str) -> Path:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.path / name

    def write_json(self, name: str, obj) -> Path:
        p = self.file(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.file(name)
        p.write_text(text)
        return p

    def finish(self):
        entries = {}
        for name in self.artifacts:
            p = self.path / name
            if p.exists():
                entries[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {"command": self.command, "version": __version__, "seed": self.cfg.seed,
                    "artifacts": entries, "results": self.results}
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _rows_csv(path: Path, rows: list[dict]):
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_census(cfg: RunConfig, out: str | None, fmt: str = "csv", stdout=None) -> list[dict]:
    macro = macro_arch(cfg, 10)
    genotype = cfg.genotype or ",".join([cfg.fill] * macro.num_slots)
    try:
        plan = assemble(macro, Genotype.parse(genotype))
    except (GenotypeError, BlockError) as exc:
        raise ConfigError(str(exc)) from exc
    size = macro.input_size
    hwc = size * size * macro.channels
    rows = [{"layer": r["layer"], "neurons": r["neurons"]} for r in plan.census_table()]
    total = plan.census(include_head=False)
    rows.append({"layer": "total", "neurons": total})
    rows.append({"layer": "total_per_HWC", "neurons": round(total / hwc, 6)})
    text = json.dumps(rows, indent=2) + "\n" if fmt == "json" else _csv_text(rows)
    (stdout or sys.stdout).write(text)
    if out:
        run = RunDir(out, "census", cfg)
        run.write_text(f"census.{fmt}", text)
        run.results = {"census": total, "per_hwc": total / hwc}
        run.finish()
    return rows


def _csv_text(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_train_supernet(cfg: RunConfig, out: str) -> SuperNet:
    _require_seed(cfg, "train-supernet")
    tcfg = train_config(cfg)
    train_all, _ = load_data(cfg, macro_arch(cfg, 10).input_size)
    train_set, val_set = split_train_val(train_all, cfg.data.train_ratio, cfg.seed)
    macro = macro_arch(cfg, train_all.num_classes)
    run = RunDir(out, "train-supernet", cfg)
    supernet = SuperNet(macro, np.random.default_rng(cfg.seed))
    history = train_supernet(supernet, train_set, tcfg, augment_fn(cfg))
    _rows_csv(run.file("history.csv"), [{k: repr(float(v)) if k != "epoch" else v for k, v in r.items()}
                                        for r in history])
    supernet.save(run.file("supernet.npz"))
    run.write_json("n_avg.json", {"n_avg": supernet.n_avg, "paths": supernet.samples_seen})
    run.results = {"n_avg": supernet.n_avg, "val_size": len(val_set)}
    run.finish()
    print(f"N_avg = {supernet.n_avg:.1f} spikes/sample")
    return supernet


def cmd_search(cfg: RunConfig, out: str, supernet_path: str):
    _require_seed(cfg, "search")
    try:
        supernet = SuperNet.load(supernet_path)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load super-network {supernet_path}: {exc}") from exc
    m = cfg.macro
    sm = supernet.macro
    if (m.variant, m.stem, m.channels, m.voting_k) != (sm.variant, sm.stem, sm.channels, sm.voting_k):
        raise ConfigError(f"config macro ({m.variant}, {m.stem}, C={m.channels}) does not match the "
                          f"super-network ({sm.variant}, {sm.stem}, C={sm.channels})")
    train_all, _ = load_data(cfg, sm.input_size)
    _, val_set = split_train_val(train_all, cfg.data.train_ratio, cfg.seed)
    scfg = search_config(cfg)
    run = RunDir(out, "search", cfg)
    result = search_supernet(supernet, val_set, scfg, cfg.train.timesteps)
    result.write_log(run.file("search_log.jsonl"))
    run.write_text("winner.txt", str(result.best.genotype) + "\n")
    run.results = {"winner": str(result.best.genotype), "fitness": result.best.fitness,
                   "accuracy": result.best.accuracy, "spikes": result.best.spikes,
                   "evaluations": result.evaluations, "n_avg": supernet.n_avg}
    run.finish()
    print(f"winner {result.best.genotype} fitness {result.best.fitness:.4f} "
          f"acc {result.best.accuracy:.4f} spikes {result.best.spikes:.0f} ({result.evaluations} evaluations)")
    return result


def _parse_genotype(cfg: RunConfig, macro: MacroArch) -> Genotype:
    text = cfg.genotype or ",".join([cfg.fill] * macro.num_slots)
    if Path(text).is_file():
        text = Path(text).read_text().strip()
    try:
        return Genotype.parse(text)
    except (GenotypeError, BlockError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def build_model(cfg: RunConfig, num_classes: int, variant: str | None = None):
    macro = macro_arch(cfg, num_classes, variant)
    genotype = _parse_genotype(cfg, macro)
    try:
        plan = assemble(macro, genotype)
    except (GenotypeError, BlockError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.train.mode == "ann":
        plan = ann_variant(plan)
    return build_network(plan, np.random.default_rng(cfg.seed if cfg.seed is not None else 0))


def train_and_evaluate(cfg: RunConfig, train_set, test_set, variant: str | None = None):
    net = build_model(cfg, train_set.num_classes, variant)
    tcfg = train_config(cfg)
    history = train(net, train_set, tcfg, test_set, augment_fn(cfg))
    acc, ledger = evaluate(net, test_set, tcfg.timesteps)
    return net, history, acc, ledger


def _model_meta(cfg: RunConfig, net) -> dict:
    return {"kind": "model", "config": cfg.to_dict(), "genotype": str(net.plan.genotype),
            "num_classes": net.plan.macro.num_classes}


def cmd_train(cfg: RunConfig, out: str):
    _require_seed(cfg, "train")
    if cfg.genotype and Path(cfg.genotype).is_file():
        # record the architecture itself so the run does not depend on the file
        cfg.genotype = str(_parse_genotype(cfg, macro_arch(cfg, 10)))
    train_set, test_set = load_data(cfg, macro_arch(cfg, 10).input_size)
    run = RunDir(out, "train", cfg)
    net, history, acc, ledger = train_and_evaluate(cfg, train_set, test_set)
    write_history(history, run.file("history.csv"))
    save_checkpoint(net, run.file("model.npz"), _model_meta(cfg, net), None)
    run.write_text("spikes.csv", report_csv(report(ledger)))
    run.results = {"accuracy": acc, "spikes_per_sample": ledger.spikes_per_sample(),
                   "genotype": str(net.plan.genotype), "parameters": net.parameter_count()}
    run.finish()
    print(f"test accuracy {acc:.4f}, {ledger.spikes_per_sample():.0f} spikes/sample")
    return net, history


def load_model(path):
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("kind") != "model":
        raise ConfigError(f"{path} is not a trained-model checkpoint")
    cfg = RunConfig.from_dict(meta["config"])
    cfg.genotype = meta["genotype"]
    net = build_model(cfg, meta["num_classes"])
    load_checkpoint(net, path)
    return net, cfg


def cmd_eval(cfg_overrides: dict, out: str | None, checkpoint: str, fmt: str = "csv"):
    net, cfg = load_model(checkpoint)
    apply_overrides(cfg, cfg_overrides)
    _, test_set = load_data(cfg, net.plan.macro.input_size)
    timesteps = 1 if cfg.train.mode == "ann" else cfg.train.timesteps
    acc, ledger = evaluate(net, test_set, timesteps)
    rows = report(ledger)
    text = report_csv(rows) if fmt == "csv" else json.dumps(rows, indent=2) + "\n"
    if out:
        run = RunDir(out, "eval", cfg)
        run.write_text(f"spikes.{fmt}", text)
        run.results = {"accuracy": acc, "spikes_per_sample": ledger.spikes_per_sample()}
        run.finish()
    else:
        sys.stdout.write(text)
    print(f"accuracy {acc:.4f}, {ledger.spikes_per_sample():.1f} spikes/sample")
    return acc, ledger


def cmd_ablate_macro(cfg: RunConfig, out: str):
    """Train every macro variant with the same block in all slots; compare accuracy and spikes."""
    _require_seed(cfg, "ablate-macro")
    for v in cfg.variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown macro variant {v!r}")
    try:
        BlockKind.parse(cfg.fill)
    except (BlockError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    train_set, test_set = load_data(cfg, macro_arch(cfg, 10).input_size)
    run = RunDir(out, "ablate-macro", cfg)
    rows = []
    for variant in cfg.variants:
        vcfg = dataclasses.replace(cfg, genotype=None)
        net, history, acc, ledger = train_and_evaluate(vcfg, train_set, test_set, variant)
        write_history(history, run.file(f"history_{variant}.csv"))
        run.write_text(f"layers_{variant}.csv", report_csv(report(ledger)))
        rows.append({"variant": variant, "accuracy": acc, "spikes_per_sample": ledger.spikes_per_sample(),
                     "neurons": net.plan.census(include_head=False), "parameters": net.parameter_count()})
        log.info("%s: acc %.4f spikes %.0f", variant, acc, ledger.spikes_per_sample())
    _rows_csv(run.file("ablation.csv"), rows)
    run.results = {"rows": rows}
    run.finish()
    for r in rows:
        print(f"{r['variant']:<8} acc {r['accuracy']:.4f}  spikes/sample {r['spikes_per_sample']:.0f}")
    return rows


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", help="JSON run config (e.g. a previous run's config.json)")
    p.add_argument("--preset", choices=tuple(PRESETS), help="defaults to 'full'")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=out_required, help="run directory")
    p.add_argument("--dataset", choices=("cifar10", "idx", "synthetic"))
    p.add_argument("--data", help="dataset root (overrides SPIKENAS_DATA)")
    p.add_argument("--per-class", type=int, help="stratified training subset size per class")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--stem")
    p.add_argument("--channels", type=int)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=("snn", "ann"))
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikenas", description="Spiking-network architecture search and training on numpy.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-supernet", help="train the weight-sharing super-network")
    _common(p)

    p = sub.add_parser("search", help="evolutionary search on a trained super-network")
    _common(p)
    p.add_argument("--supernet", required=True, help="supernet.npz from train-supernet")
    p.add_argument("--lam", type=float, help="spike-aware fitness exponent (<= 0)")
    p.add_argument("--rounds", type=int)
    p.add_argument("--pool-size", type=int)

    p = sub.add_parser("train", help="train a network from scratch")
    _common(p)
    p.add_argument("--genotype", help="comma-separated blocks, or a winner.txt file")
    p.add_argument("--fill", help="block for every slot when no genotype is given")
    p.add_argument("--spike-reg", type=float)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.add_argument("--data")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("census", help="analytic neuron census of an architecture")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--stem")
    p.add_argument("--channels", type=int)
    p.add_argument("--genotype")
    p.add_argument("--fill")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--config")
    p.add_argument("--preset", choices=tuple(PRESETS))

    p = sub.add_parser("ablate-macro", help="compare macro variants with one block type in every slot")
    _common(p)
    p.add_argument("--fill")
    p.add_argument("--variants", help="comma-separated, default SNN_1,SNN_2,SNN_3,SNN_4")
    p.add_argument("--spike-reg", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            overrides = {"data": {"root": args.data}} if args.data else {}
            cmd_eval(overrides, args.out, args.checkpoint, args.format)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "census":
            cmd_census(cfg, args.out, args.format)
        elif args.command == "train-supernet":
            cmd_train_supernet(cfg, args.out)
        elif args.command == "search":
            cmd_search(cfg, args.out, args.supernet)
        elif args.command == "train":
            cmd_train(cfg, args.out)
        elif args.command == "ablate-macro":
            cmd_ablate_macro(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DatasetFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
