"""Experiment configuration: YAML in, validated models out, and a stable hash for provenance."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .benchmarks import BenchmarkProblem, make_problem
from .interpolants import InterpolantSpec, Schedule
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` holds the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemConfig(_Strict):
    name: str = "gaussian_ratio"
    dim: Optional[int] = None
    mean1: Optional[list[float]] = None
    cov1_diag: Optional[list[float]] = None
    target_mi: Optional[float] = None
    param: Optional[float] = None
    noise: Optional[float] = None

    def build(self) -> BenchmarkProblem:
        kw = {k: v for k, v in self.model_dump().items() if k != "name" and v is not None}
        return make_problem(self.name, **kw)


class InterpolantConfig(_Strict):
    kind: Literal["DI", "DDBI"] = "DI"
    schedule: Literal["linear", "variance_preserving"] = "linear"
    gamma: float = 0.1
    eps: float = 1e-4
    delta: float = 1e-3
    std_floor: float = 1e-4

    def build(self) -> InterpolantSpec:
        return InterpolantSpec(Schedule(self.schedule), self.kind, gamma=self.gamma, eps=self.eps,
                               std_floor=self.std_floor, delta=self.delta)


class SamplerConfig(_Strict):
    kind: Literal["uniform", "logit_normal", "variance_importance"] = "variance_importance"
    ln_mean: float = -0.4
    ln_std: float = 1.0
    grid_size: int = Field(64, ge=2)
    grid_samples: int = Field(2048, ge=100)
    var_floor: float = Field(1e-6, gt=0.0)


class SupervisionConfig(_Strict):
    kind: Literal["cia", "fixed"] = "cia"
    rho: float = Field(0.0, ge=0.0, le=1.0)
    d0: float = Field(0.01, gt=0.0, le=1.0)
    anneal_fraction: float = Field(0.5, gt=0.0, le=1.0)


class TrainSection(_Strict):
    method: Literal["secant", "tangent"] = "secant"
    steps: int = Field(2000, ge=0)
    batch_size: int = Field(512, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    hidden_widths: list[int] = Field(default_factory=lambda: [128, 128, 128])
    n_freq: int = Field(4, ge=0)
    weighting: Literal["auto", "variance", "none"] = "auto"
    jvp_direction: Literal["time", "velocity"] = "time"
    lr_schedule: Literal["constant", "cosine"] = "cosine"
    lr_final_fraction: float = Field(0.01, gt=0.0, le=1.0)
    loss_log_every: int = Field(10, ge=1)


class EvalConfig(_Strict):
    metric: Literal["mse", "mi", "nll"] = "mse"
    nfe: list[int] = Field(default_factory=lambda: [1, 2, 5, 10])
    n_samples: int = Field(10_000, ge=1)
    # 1D MSE is scored on an even lattice over [lo, hi]; otherwise on held-out p0/p1 draws
    mse_lo: float = -2.0
    mse_hi: float = 3.0
    mse_points: int = Field(101, ge=2)
    grid_dump: bool = False
    grid_extent: float = 4.0
    grid_resolution: int = Field(101, ge=2)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    seed: int = 0
    output_dir: str = "runs/experiment"
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    interpolant: InterpolantConfig = Field(default_factory=InterpolantConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    supervision: SupervisionConfig = Field(default_factory=SupervisionConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            steps=t.steps, batch_size=t.batch_size, lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps_opt=t.eps_opt,
            seed=self.seed, hidden_widths=list(t.hidden_widths), n_freq=t.n_freq,
            interpolant=self.interpolant.build(), sampler=self.sampler.kind, ln_mean=self.sampler.ln_mean,
            ln_std=self.sampler.ln_std, supervision=self.supervision.kind, rho=self.supervision.rho,
            d0=self.supervision.d0, anneal_fraction=self.supervision.anneal_fraction,
            grid_size=self.sampler.grid_size, grid_samples=self.sampler.grid_samples,
            var_floor=self.sampler.var_floor,
            weighting=t.weighting, jvp_direction=t.jvp_direction, lr_schedule=t.lr_schedule,
            lr_final_fraction=t.lr_final_fraction, loss_log_every=t.loss_log_every,
        )

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with top-level or dotted (``train.steps``) overrides, revalidated."""
        data = self.to_dict()
        for key, value in kw.items():
            node = data
            *head, last = key.split(".")
            for part in head:
                node = node[part]
            node[last] = value
        return from_dict(data)


def _dotted(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_dotted(err["loc"]), err["msg"]) from None


def from_yaml(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"unparseable YAML ({exc})") from None
    return from_dict(data)


def load_config(path) -> ExperimentConfig:
    return from_yaml(Path(path).read_text())


def save_config(config: ExperimentConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_yaml())
