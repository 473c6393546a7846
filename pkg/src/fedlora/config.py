"""Experiment configuration: a flat, YAML-serializable description of one run."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import yaml

from . import adapter, model, optim, tasks
from .linalg import ContractViolation

SHARE_A_ONLY = "share_a_only"
SHARE_BOTH = "share_both"
FREEZE_A = "freeze_a"
ALTERNATING = "alternating"

STRATEGIES = (SHARE_A_ONLY, SHARE_BOTH, FREEZE_A, ALTERNATING)


@dataclass
class ExperimentConfig:
    run_id: str = "run"
    n_clients: int = 3
    rank: int = 64
    dim_d: int = 64
    dim_k: int = 64
    layers: int = 2
    activation: str = model.TANH
    scaling_rule: str = adapter.FEDERATED
    alpha: float = 8.0
    fixed_gamma: float = 1.0
    strategy: str = SHARE_A_ONLY
    optimizer: str = optim.SGD
    learning_rate: float = 0.005
    weight_decay: float = 0.0
    reset_optim: bool = False
    rounds: int = 50
    local_steps: int = 10
    batch_size: int = 16
    task: str = tasks.REGRESSION
    classes: int = 4
    partition: str = "iid"
    dirichlet_beta: float = 0.5
    sigma_a: float = 0.0  # 0 means the default 1/sqrt(dim_k)
    master_seed: int = 0
    divergence_threshold: float = 1e6
    n_samples: int = 768
    val_samples: int = 256
    noise_std: float = 0.05

    def resolved_sigma_a(self) -> float:
        return self.sigma_a if self.sigma_a > 0 else 1.0 / self.dim_k**0.5

    def rule(self) -> adapter.ScalingRule:
        if self.scaling_rule == adapter.FIXED:
            return adapter.ScalingRule.fixed(self.fixed_gamma)
        return adapter.ScalingRule(self.scaling_rule, alpha=self.alpha, value=self.fixed_gamma)

    def gamma(self) -> float:
        return adapter.scaling_factor(self.rule(), self.n_clients, self.rank)

    def method(self) -> str:
        return f"{self.strategy}+{self.scaling_rule}"

    def validate(self) -> "ExperimentConfig":
        positive = (
            "n_clients", "rank", "dim_d", "dim_k", "layers", "local_steps",
            "batch_size", "n_samples", "val_samples",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ContractViolation(f"config field {name!r} must be >= 1, got {getattr(self, name)}")
        if self.rounds < 0:
            raise ContractViolation(f"config field 'rounds' must be >= 0, got {self.rounds}")
        if self.learning_rate <= 0:
            raise ContractViolation(f"config field 'learning_rate' must be > 0, got {self.learning_rate}")
        if self.scaling_rule not in adapter.SCALING_VARIANTS:
            raise ContractViolation(f"config field 'scaling_rule' has unknown value {self.scaling_rule!r}")
        if self.strategy not in STRATEGIES:
            raise ContractViolation(f"config field 'strategy' has unknown value {self.strategy!r}")
        if self.optimizer not in (optim.SGD, optim.ADAM):
            raise ContractViolation(f"config field 'optimizer' has unknown value {self.optimizer!r}")
        if self.task not in (tasks.REGRESSION, tasks.CLASSIFICATION):
            raise ContractViolation(f"config field 'task' has unknown value {self.task!r}")
        if self.task == tasks.CLASSIFICATION and self.classes < 2:
            raise ContractViolation(f"config field 'classes' must be >= 2, got {self.classes}")
        if self.partition not in ("iid", "dirichlet"):
            raise ContractViolation(f"config field 'partition' has unknown value {self.partition!r}")
        if self.partition == "dirichlet" and self.dirichlet_beta <= 0:
            raise ContractViolation(f"config field 'dirichlet_beta' must be > 0, got {self.dirichlet_beta}")
        if self.activation not in model.ACTIVATIONS:
            raise ContractViolation(f"config field 'activation' has unknown value {self.activation!r}")
        if self.sigma_a < 0:
            raise ContractViolation(f"config field 'sigma_a' must be >= 0, got {self.sigma_a}")
        self.gamma()  # resolves; raises on bad rule parameters
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        return str(value)
    except (TypeError, ValueError):
        raise ContractViolation(f"config field {name!r} has invalid value {value!r}")


def parse_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from an optional YAML file plus overrides.

    Overrides win over the file; unknown keys in either source are rejected
    by name.
    """
    values: dict = {}
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ContractViolation(f"config file {path} is not a flat key-value document")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})
    return cfg.validate()


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=True)
