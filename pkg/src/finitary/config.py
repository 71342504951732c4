"""Experiment configuration: TOML file validated by strict pydantic models."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# models ---------------------------------------------------------------------


class PureNoise(Strict):
    name: Literal["pure_noise"]
    d: int = Field(1, ge=1)
    weights: list[float] = [0.5, 0.5]


class Constant(Strict):
    name: Literal["constant"]
    d: int = Field(1, ge=1)
    b0: int = Field(0, ge=0)
    n_states: int = Field(2, ge=1)


class NoisyMajority(Strict):
    name: Literal["noisy_majority"]
    d: int = Field(1, ge=1)
    resample: float = Field(0.3, gt=0, le=1)


class NoisyCopy(Strict):
    name: Literal["noisy_copy"]
    resample: float = Field(0.3, gt=0, le=1)


class ChainPca(Strict):
    name: Literal["chain_pca"]
    P: list[list[float]]


class Ising(Strict):
    name: Literal["ising"]
    d: int = Field(2, ge=1)
    beta: float = Field(ge=0)
    margin_floor: int = Field(64, ge=1)


class Parking(Strict):
    name: Literal["parking"]
    d: int = Field(1, ge=1)
    domain_radius: Optional[int] = Field(None, ge=0)


class Toboggan(Strict):
    name: Literal["toboggan"]
    p: Optional[list[float]] = None
    n_support: int = Field(60, ge=1)


class Multigamma(Strict):
    name: Literal["multigamma"]
    P: list[list[float]]
    m: int = Field(1, ge=1)
    beta: float = Field(gt=0, le=1)
    nu: list[float]


class Renewal(Strict):
    name: Literal["renewal"]
    f: list[float]
    window: int = Field(1, ge=1)


class Scum(Strict):
    name: Literal["scum"]
    kernel: Literal["iid", "markov", "geometric_memory"]
    weights: Optional[list[float]] = None
    P: Optional[list[list[float]]] = None
    eps: float = 0.4
    rho: float = 0.5
    memory: int = Field(10, ge=1)
    window: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _needs(self):
        if self.kernel == "iid" and self.weights is None:
            raise ValueError("scum kernel 'iid' needs weights")
        if self.kernel == "markov" and self.P is None:
            raise ValueError("scum kernel 'markov' needs P")
        return self


ModelConfig = Annotated[
    Union[PureNoise, Constant, NoisyMajority, NoisyCopy, ChainPca, Ising, Parking, Toboggan, Multigamma, Renewal, Scum],
    Field(discriminator="name"),
]


LATTICE_MODELS = {"pure_noise", "constant", "noisy_majority", "noisy_copy", "chain_pca", "ising", "parking"}


# other sections ---------------------------------------------------------------


class Sampler(Strict):
    seed: int = Field(0, ge=0, lt=1 << 64)
    replicas: int = Field(100, ge=1)
    t_max: int = Field(1024, ge=1)
    strategy: Literal["monotone", "exhaustive"] = "monotone"
    unresolved: Literal["abort", "flag"] = "abort"
    region_radius: int = Field(0, ge=0)
    budget: int = Field(1 << 20, ge=1)
    chunk: int = Field(256, ge=1)


class Blowup(Strict):
    event: Literal["threshold", "pattern"]
    scores: Optional[list[float]] = None
    c: Optional[float] = None
    patterns: Optional[list[list[int]]] = None
    eps: list[float]
    radius: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _needs(self):
        if self.event == "threshold" and (self.scores is None or self.c is None):
            raise ValueError("threshold event needs scores and c")
        if self.event == "pattern" and not self.patterns:
            raise ValueError("pattern event needs patterns")
        return self


class Analysis(Strict):
    observable: Literal["spin", "block_sum", "block_mean", "indicator", "value_sum"] = "spin"
    observable_radius: int = Field(0, ge=0)
    symbol: int = 1
    max_symbol: float = 1.0
    kappa_source: Literal["SecondMoment", "Cone", "LeftFinitary", "McDiarmid", "UserSupplied"] = "McDiarmid"
    kappa: Optional[float] = Field(None, ge=0)
    alpha: Optional[float] = Field(None, gt=0, le=1)
    lambdas: list[float] = [0.1, 0.5, 1.0]
    us: list[float] = []
    moment_orders: list[int] = []
    confidence: float = Field(0.95, gt=0, lt=1)
    factorization: bool = False
    max_triples: int = Field(400, ge=1)
    variance: bool = True
    blowup: Optional[Blowup] = None
    min_replicas: int = Field(1000, ge=1)

    @field_validator("moment_orders")
    @classmethod
    def _pos(cls, v):
        if any(p < 1 for p in v):
            raise ValueError("moment orders must be >= 1")
        return v


class KernelEntry(Strict):
    offset: list[int]
    value: float = Field(ge=0)


class Scan(Strict):
    kind: Literal["ising_susceptibility", "toeplitz_block_ratio", "renewal_theta", "return_time"]
    parameter: str
    values: list[float] = Field(min_length=1)
    sizes: list[int] = Field(min_length=1)
    d: int = Field(2, ge=1)
    kernel: list[KernelEntry] = []
    P: Optional[list[list[float]]] = None


class Sharpness(Strict):
    kernel: list[KernelEntry] = []
    from_samples: Optional[str] = None
    L: list[int] = Field(min_length=1)


class Output(Strict):
    samples: str = "samples.jsonl"
    report: str = "report.json"
    margins: str = "margins.csv"
    scan: str = "scan.csv"
    kernel: str = "kernel.csv"
    ratios: str = "ratios.csv"


class ExperimentConfig(Strict):
    model: Optional[ModelConfig] = None
    sampler: Sampler = Sampler()
    analysis: Analysis = Analysis()
    scan: Optional[Scan] = None
    sharpness: Optional[Sharpness] = None
    output: Output = Output()


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return ExperimentConfig.model_validate(data)


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.model_validate(tomllib.loads(text))
