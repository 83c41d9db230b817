"""Request and response bodies for the HTTP service."""

from __future__ import annotations

import dataclasses
import math
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..bigamp import BigAmpOptions
from ..detector import DetectorOptions
from ..harness import PointResult
from ..model import PAPER_GAMMAS, SystemConfig, config_from_mapping


class ConfigModel(BaseModel):
    """System parameters. Give gamma (with d_f, d_v) or K and N directly."""

    model_config = ConfigDict(extra="forbid")

    gamma: Optional[float] = Field(None, gt=0, lt=1)
    d_f: int = Field(2, ge=1)
    d_v: Optional[int] = Field(3, ge=1)
    I: int = Field(200, ge=1)
    K: Optional[int] = None
    N: Optional[int] = None
    J: Optional[int] = None
    M: int = 4
    P: float = 1.0
    beta: Optional[list[float]] = None
    support_mode: str = "per_symbol"
    signature_seed: int = 0

    def to_config(self, gamma: Optional[float] = None) -> SystemConfig:
        values = self.model_dump(exclude_none=True)
        if gamma is not None:
            values["gamma"] = gamma
            values.pop("K", None)
            values.pop("N", None)
        if "K" in values and "N" in values:
            values.setdefault("J", values["N"])
            # The d_v default only makes sense when K and N come from gamma.
            if "d_v" not in self.model_fields_set:
                values.pop("d_v", None)
        if values.get("beta") is not None:
            values["beta"] = tuple(values["beta"])
        return config_from_mapping(values)

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "ConfigModel":
        return cls(
            d_f=cfg.d_f, d_v=cfg.d_v, I=cfg.I, K=cfg.K, N=cfg.N, J=cfg.J, M=cfg.M, P=cfg.P,
            beta=list(cfg.beta), support_mode=cfg.support_mode, signature_seed=cfg.signature_seed,
        )


class BigAmpOptionsModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_max: int = 200
    tau_stop: float = 1e-8
    damp: float = 0.5
    damp_adapt: bool = True
    damp_min: float = 0.05
    damp_max: float = 1.0
    variance_floor: float = 1e-12
    strict_paper_variances: bool = True
    objective: str = "surrogate"
    clip_gains: bool = True
    init: str = "clustered"
    init_jitter: float = 0.01
    max_starts: int = 10
    damp_window: int = 5
    fit_slack: float = 2.0

    def to_options(self) -> BigAmpOptions:
        return BigAmpOptions(**self.model_dump())


class DetectorOptionsModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tau: Optional[float] = Field(None, gt=0)
    literal_first_nonzero: bool = False

    def to_options(self) -> DetectorOptions:
        return DetectorOptions(**self.model_dump())


class TrialRequest(BaseModel):
    config: ConfigModel = ConfigModel(gamma=0.25)
    snr_db: Optional[float] = Field(17.5, description="null runs noiseless")
    seed: int = 0
    bigamp: BigAmpOptionsModel = BigAmpOptionsModel()
    detector: DetectorOptionsModel = DetectorOptionsModel()
    trace: bool = False
    frames: bool = False


class TrialResultModel(BaseModel):
    ber: float
    id_error_rate: float
    iters: int
    converged: bool
    seed: int
    failed: bool
    bit_errors: int
    n_bits: int
    flagged_blocks: int
    per_user_ber: list[float]
    assignment: list[int]
    phases: list[list[float]]
    runtime_s: float


class PointModel(BaseModel):
    gamma: float
    K: int
    N: int
    J: int
    I: int
    snr_db: Optional[float]
    trials: int
    ber: float
    ci95: Optional[float]
    id_error_rate: float
    mean_iters: float
    runtime_s: float
    converged_rate: Optional[float] = None

    @classmethod
    def from_point(cls, p: PointResult) -> "PointModel":
        d = {f.name: getattr(p, f.name) for f in dataclasses.fields(p) if f.name != "trial_results"}
        # JSON has no NaN.
        return cls(**{k: None if isinstance(v, float) and math.isnan(v) else v for k, v in d.items()})

    def to_point(self) -> PointResult:
        d = self.model_dump()
        return PointResult(**{k: math.nan if v is None else v for k, v in d.items()})


class TrialResponse(BaseModel):
    result: TrialResultModel
    point: PointModel
    metadata: dict[str, Any]
    trace: Optional[list[list[float]]] = None
    frames: Optional[list[list[float]]] = Field(None, description="per user, interleaved re/im")


class SweepRequest(BaseModel):
    config: ConfigModel = ConfigModel()
    gammas: Optional[list[float]] = Field(list(PAPER_GAMMAS), description="null sweeps the config's own K and N")
    snr_db: list[Optional[float]] = [17.5]
    trials: int = Field(50, ge=1)
    parallelism: int = Field(1, ge=1)
    seed: int = 0
    bigamp: BigAmpOptionsModel = BigAmpOptionsModel()
    detector: DetectorOptionsModel = DetectorOptionsModel()


class SweepResponse(BaseModel):
    points: list[PointModel]
    metadata: dict[str, Any]


class ValidateResponse(BaseModel):
    valid: bool
    error: Optional[str] = None
    config: Optional[dict[str, Any]] = None
