"""Pipeline configuration: schema, defaults, validation.

Configs are plain JSON. Unknown keys are rejected at every level so typos
fail loudly. Epoch count and fold count resolve per dataset when left null.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .spike import NEURON_KINDS, NeuronConfig

DATASET_EPOCHS = {"tvsum": 50, "summe": 40, "videoxum": 10, "qfvs": 20}
DEFAULT_EPOCHS = 30
DATASET_FOLDS = {"qfvs": 4}
DEFAULT_FOLDS = 5
N_CHANNELS = 4  # spiking extractor + one reasoner channel per temporal graph


def _take(section: str, d: dict, allowed) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in config section '{section}'")
    return d


@dataclass
class SnnConfig:
    layers: int = 2
    standardize: bool = True
    surrogate_width: float = 0.5

    def validate(self):
        if self.layers < 0:
            raise ConfigError("snn.layers must be >= 0")
        if self.surrogate_width <= 0:
            raise ConfigError("snn.surrogate_width must be > 0")


@dataclass
class ReasonerConfig:
    window: int = 10
    tau_cos: float = 0.5
    layers: int = 2
    hidden_dim: int | None = None  # filter-projection width; null means feature dim

    def validate(self):
        if self.window < 1:
            raise ConfigError("reasoner.window must be >= 1")
        if not 0.0 < self.tau_cos < 1.0:
            raise ConfigError("reasoner.tau_cos must be in (0, 1)")
        if self.layers < 0:
            raise ConfigError("reasoner.layers must be >= 0")


@dataclass
class FusionConfig:
    orders: tuple = (1, 2, 3)
    mu0: float = 0.15
    sigma0_sq: float = 10.0
    sigmay_inv: float = 0.0

    def validate(self):
        if not self.orders or any(int(m) < 1 for m in self.orders):
            raise ConfigError("fusion.orders must be positive integers")
        if self.sigma0_sq <= 0:
            raise ConfigError("fusion.sigma0_sq must be > 0")
        if self.sigmay_inv < 0:
            raise ConfigError("fusion.sigmay_inv must be >= 0")


@dataclass
class SummaryConfig:
    budget_fraction: float = 0.15
    kts_penalty: float | None = None      # null: dim * log(T)
    kts_max_segments: int | None = None   # null: max(1, T // 20)

    def validate(self):
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ConfigError("summary.budget_fraction must be in (0, 1]")


@dataclass
class TextConfig:
    gate_dim: int = 64

    def validate(self):
        if self.gate_dim < 1:
            raise ConfigError("text.gate_dim must be >= 1")


@dataclass
class OptimizerConfig:
    lr: float = 0.001
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    dropout: float = 0.4
    epochs: int | None = None       # null: per-dataset table, else 30
    batch_videos: int = 1           # videos accumulated per optimizer step
    seed: int = 0

    def validate(self):
        if self.lr < 0:
            raise ConfigError("optimizer.lr must be >= 0")
        if len(self.betas) != 2 or not all(0 < b < 1 for b in self.betas):
            raise ConfigError("optimizer.betas must be two values in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("optimizer.dropout must be in [0, 1)")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("optimizer.epochs must be >= 0")
        if self.batch_videos < 1:
            raise ConfigError("optimizer.batch_videos must be >= 1")


@dataclass
class SplitConfig:
    n_folds: int | None = None  # null: 5, or 4 for the qfvs protocol
    fold_index: int = 0

    def validate(self):
        if self.n_folds is not None and self.n_folds < 2:
            raise ConfigError("split.n_folds must be >= 2")
        if self.fold_index < 0:
            raise ConfigError("split.fold_index must be >= 0")


@dataclass
class PipelineConfig:
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    snn: SnnConfig = field(default_factory=SnnConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    summary: SummaryConfig = field(default_factory=SummaryConfig)
    text: TextConfig = field(default_factory=TextConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def validate(self):
        for section in (self.snn, self.reasoner, self.fusion, self.summary,
                        self.text, self.optimizer, self.split):
            section.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion"]["orders"] = list(self.fusion.orders)
        d["optimizer"]["betas"] = list(self.optimizer.betas)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        sections = _take("<root>", raw, ["neuron", "snn", "reasoner", "fusion",
                                         "summary", "text", "optimizer", "split"])
        cfg = cls()

        neuron_raw = _take("neuron", sections.get("neuron", {}), [
            "kind", "c_m", "g_l", "e_l", "threshold", "v_reset", "refractory_steps",
            "qif_a", "qif_vc", "eif_delta", "eif_vt"])
        if neuron_raw.get("kind", "LIF") not in NEURON_KINDS:
            raise ConfigError(f"neuron.kind must be one of {NEURON_KINDS}")
        try:
            cfg.neuron = NeuronConfig(**neuron_raw)
        except Exception as e:
            raise ConfigError(f"neuron: {e}") from None

        cfg.snn = SnnConfig(**_take("snn", sections.get("snn", {}),
                                    ["layers", "standardize", "surrogate_width"]))
        cfg.reasoner = ReasonerConfig(**_take("reasoner", sections.get("reasoner", {}),
                                              ["window", "tau_cos", "layers", "hidden_dim"]))
        fusion_raw = dict(_take("fusion", sections.get("fusion", {}),
                                ["orders", "mu0", "sigma0_sq", "sigmay_inv"]))
        if "orders" in fusion_raw:
            fusion_raw["orders"] = tuple(int(m) for m in fusion_raw["orders"])
        cfg.fusion = FusionConfig(**fusion_raw)
        cfg.summary = SummaryConfig(**_take("summary", sections.get("summary", {}),
                                            ["budget_fraction", "kts_penalty",
                                             "kts_max_segments"]))
        cfg.text = TextConfig(**_take("text", sections.get("text", {}), ["gate_dim"]))
        opt_raw = dict(_take("optimizer", sections.get("optimizer", {}),
                             ["lr", "betas", "eps", "weight_decay", "dropout",
                              "epochs", "batch_videos", "seed"]))
        if "betas" in opt_raw:
            opt_raw["betas"] = tuple(float(b) for b in opt_raw["betas"])
        cfg.optimizer = OptimizerConfig(**opt_raw)
        cfg.split = SplitConfig(**_take("split", sections.get("split", {}),
                                        ["n_folds", "fold_index"]))
        return cfg.validate()


def load_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return PipelineConfig.from_dict(raw)


def resolve_epochs(cfg: PipelineConfig, dataset: str) -> int:
    if cfg.optimizer.epochs is not None:
        return cfg.optimizer.epochs
    return DATASET_EPOCHS.get(dataset.lower(), DEFAULT_EPOCHS)


def resolve_folds(cfg: PipelineConfig, dataset: str) -> int:
    if cfg.split.n_folds is not None:
        return cfg.split.n_folds
    return DATASET_FOLDS.get(dataset.lower(), DEFAULT_FOLDS)
