"""Run configuration: a JSON file validated against the documented keys.

Unknown keys are rejected (typos should fail loudly, not silently fall
back to defaults). See configs/desk.json for the CI-scale defaults and
configs/paper.json for the full-scale recipe.
"""

import hashlib
import json
from dataclasses import dataclass, field

from .dataset import SynthConfig
from .defense import DEFAULT_POLICY_THRESHOLD, FineTuneConfig
from .errors import ConfigError
from .model import EarlyStopConfig, ModelConfig, TrainConfig
from .signals import DEFAULT_FADING_TAPS, ModulationScheme


def _take(d: dict, context: str, known: dict):
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}; known keys: {sorted(known)}")
    out = {}
    for key, default in known.items():
        out[key] = d.get(key, default)
    return out


_MISSING = object()


@dataclass
class AttackSection:
    epsilons: tuple = (0.025, 0.05, 0.075, 0.1)


@dataclass
class ExplainerSection:
    num_samples: int = 256
    background_cap: int = 5000
    ig_steps: int = 256


@dataclass
class DefenseSection:
    policy_threshold: float = DEFAULT_POLICY_THRESHOLD
    fine_tune: FineTuneConfig = field(default_factory=FineTuneConfig)


@dataclass
class RunConfig:
    output_dir: str = "runs/out"
    master_seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackSection = field(default_factory=AttackSection)
    explainer: ExplainerSection = field(default_factory=ExplainerSection)
    defense: DefenseSection = field(default_factory=DefenseSection)

    @property
    def schemes(self) -> tuple:
        return tuple(self.synth.schemes)

    def describe(self) -> dict:
        return {
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "synth": self.synth.describe(),
            "model": self.model.describe(),
            "train": {
                "learning_rate": self.train.learning_rate,
                "batch_size": self.train.batch_size,
                "epochs": self.train.epochs,
                "validation_fraction": self.train.validation_fraction,
                "early_stopping": {
                    "enabled": self.train.early_stopping.enabled,
                    "patience": self.train.early_stopping.patience,
                    "monitor": self.train.early_stopping.monitor,
                },
                "seed": self.train.seed,
            },
            "attack": {"epsilons": list(self.attack.epsilons)},
            "explainer": {
                "num_samples": self.explainer.num_samples,
                "background_cap": self.explainer.background_cap,
                "ig_steps": self.explainer.ig_steps,
            },
            "defense": {
                "policy_threshold": self.defense.policy_threshold,
                "fine_tune": {
                    "epochs": self.defense.fine_tune.epochs,
                    "batch_size": self.defense.fine_tune.batch_size,
                    "fc1_units": self.defense.fine_tune.fc1_units,
                    "patience": self.defense.fine_tune.patience,
                    "learning_rate": self.defense.fine_tune.learning_rate,
                },
            },
        }

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()[:16]


def _parse_schemes(names) -> tuple:
    out = []
    for n in names:
        try:
            out.append(ModulationScheme[n] if isinstance(n, str) else ModulationScheme(n))
        except KeyError:
            valid = [s.name for s in ModulationScheme]
            raise ConfigError(f"unknown modulation scheme {n!r}; valid: {valid}") from None
    if len(set(out)) != len(out):
        raise ConfigError("duplicate schemes in config")
    return tuple(out)


def from_dict(raw: dict) -> RunConfig:
    top = _take(raw, "config", {
        "output_dir": "runs/out",
        "master_seed": 0,
        "synth": {},
        "model": {},
        "train": {},
        "attack": {},
        "explainer": {},
        "defense": {},
    })

    s = _take(top["synth"], "synth", {
        "schemes": [m.name for m in ModulationScheme],
        "snr_grid": list(range(-20, 20, 2)),
        "split_sizes": {"tiny_train": 7700, "tiny_test": 330, "adv_data": 6600},
        "frame_len": 128,
        "freq_offset_std": 1e-4,
        "srate_offset_std": 1e-4,
        "fading_taps": [[m, d] for m, d in DEFAULT_FADING_TAPS],
    })
    split_sizes = _take(s["split_sizes"], "synth.split_sizes",
                        {"tiny_train": 7700, "tiny_test": 330, "adv_data": 6600})
    schemes = _parse_schemes(s["schemes"])
    synth = SynthConfig(
        schemes=schemes,
        snr_grid=tuple(int(v) for v in s["snr_grid"]),
        split_sizes=split_sizes,
        frame_len=int(s["frame_len"]),
        freq_offset_std=float(s["freq_offset_std"]),
        srate_offset_std=float(s["srate_offset_std"]),
        fading_taps=tuple((float(m), int(d)) for m, d in s["fading_taps"]),
        master_seed=int(top["master_seed"]),
    )

    m = _take(top["model"], "model", {
        "conv_kernels": 128, "conv_width": 8, "lstm_units": 128, "fc1_units": 256,
        "num_classes": _MISSING,
    })
    num_classes = len(schemes) if m["num_classes"] is _MISSING else int(m["num_classes"])
    if num_classes != len(schemes):
        raise ConfigError(f"model.num_classes={num_classes} but synth.schemes has {len(schemes)} entries")
    model = ModelConfig(
        conv_kernels=int(m["conv_kernels"]),
        conv_width=int(m["conv_width"]),
        lstm_units=int(m["lstm_units"]),
        fc1_units=int(m["fc1_units"]),
        num_classes=num_classes,
    )

    t = _take(top["train"], "train", {
        "learning_rate": 0.001, "batch_size": 200, "epochs": 200,
        "validation_fraction": 0.1, "early_stopping": {}, "seed": _MISSING,
    })
    es = _take(t["early_stopping"], "train.early_stopping",
               {"enabled": False, "patience": 5, "monitor": "val_loss"})
    train = TrainConfig(
        learning_rate=float(t["learning_rate"]),
        batch_size=int(t["batch_size"]),
        epochs=int(t["epochs"]),
        validation_fraction=float(t["validation_fraction"]),
        early_stopping=EarlyStopConfig(bool(es["enabled"]), int(es["patience"]), str(es["monitor"])),
        seed=int(top["master_seed"]) if t["seed"] is _MISSING else int(t["seed"]),
    )

    a = _take(top["attack"], "attack", {"epsilons": [0.025, 0.05, 0.075, 0.1]})
    epsilons = tuple(float(e) for e in a["epsilons"])
    if len(epsilons) == 0:
        raise ConfigError("attack.epsilons must be non-empty")
    if any(e < 0 for e in epsilons):
        raise ConfigError("attack.epsilons must be >= 0")

    e = _take(top["explainer"], "explainer",
              {"num_samples": 256, "background_cap": 5000, "ig_steps": 256})
    explainer = ExplainerSection(int(e["num_samples"]), int(e["background_cap"]), int(e["ig_steps"]))
    if explainer.num_samples < 1:
        raise ConfigError("explainer.num_samples must be >= 1")

    d = _take(top["defense"], "defense",
              {"policy_threshold": DEFAULT_POLICY_THRESHOLD, "fine_tune": {}})
    ft = _take(d["fine_tune"], "defense.fine_tune", {
        "epochs": 50, "batch_size": 20, "fc1_units": 128, "patience": 5,
        "learning_rate": 0.001, "seed": _MISSING,
    })
    fine = FineTuneConfig(
        epochs=int(ft["epochs"]),
        batch_size=int(ft["batch_size"]),
        fc1_units=int(ft["fc1_units"]),
        patience=int(ft["patience"]),
        learning_rate=float(ft["learning_rate"]),
        seed=int(top["master_seed"]) if ft["seed"] is _MISSING else int(ft["seed"]),
    )

    return RunConfig(
        output_dir=str(top["output_dir"]),
        master_seed=int(top["master_seed"]),
        synth=synth,
        model=model,
        train=train,
        attack=AttackSection(epsilons),
        explainer=explainer,
        defense=DefenseSection(float(d["policy_threshold"]), fine),
    )


def from_file(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return from_dict(raw)
