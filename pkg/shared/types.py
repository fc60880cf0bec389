"""
Shared type definitions for gwldp.

Everything here crosses a file or process boundary: kernel spec documents,
reports, manifests and rate records. In-memory math objects (kernels, trees,
measures) live in the backend modules.
"""

import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ConsistencyClass(str, Enum):
    """Outcome of check_consistency"""
    CONSISTENT = "consistent"
    SUB_CONSISTENT = "sub_consistent"
    NEITHER = "neither"


class RunStatus(str, Enum):
    """Final status of a CLI run"""
    OK = "ok"
    EXHAUSTED = "exhausted"
    OVERFLOW = "overflow"
    BUDGET = "budget_exceeded"
    INVALID = "invalid"


class IrreducibilityReport(BaseModel):
    """Recurrent/transient partition and Perron-Frobenius data of a mean matrix"""
    recurrent: List[str]
    transient: List[str]
    weakly_irreducible: bool
    pf_eigenvalue: float
    left_eigenvector: Dict[str, float] = {}
    right_eigenvector: Dict[str, float] = {}
    critical: bool = False
    transient_offspring_bound: Optional[float] = None

    @model_validator(mode="after")
    def check_partition(self):
        if set(self.recurrent) & set(self.transient):
            raise ValueError("recurrent and transient types overlap")
        if self.weakly_irreducible and not self.recurrent:
            raise ValueError("weakly irreducible report needs recurrent types")
        return self


class SampleReport(BaseModel):
    """A conditioned tree together with its rejection count"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tree: Any
    attempts: int = Field(ge=1)
    rng_seed: int


class EstimateReport(BaseModel):
    """Importance-sampling estimate of P{event, |T| = n}"""
    n: int
    estimate: float = Field(ge=0.0)
    stderr: float = Field(ge=0.0)
    samples: int
    hits: int = 0
    effective_sample_size: float = Field(ge=0.0)
    seed: int
    unreliable: bool = False
    tilted: bool = False

    @model_validator(mode="after")
    def check_ess(self):
        if self.effective_sample_size > self.samples * (1.0 + 1e-9):
            raise ValueError("effective sample size exceeds sample count")
        return self


class ConditionalEstimateReport(BaseModel):
    """Ratio estimate of P{event | |T| = n} sharing samples with its denominator"""
    n: int
    estimate: float = Field(ge=0.0)
    stderr: float = Field(ge=0.0)
    joint: EstimateReport
    size: EstimateReport
    unreliable: bool = False


class DecayPoint(BaseModel):
    """One row of a decay curve: -(1/n) log estimate"""
    n: int
    estimate: float
    stderr: float
    decay: Optional[float]
    finite: bool
    unreliable: bool = False

    @classmethod
    def from_value(cls, n: int, estimate: float, stderr: float, decay: float,
                   unreliable: bool = False) -> "DecayPoint":
        finite = math.isfinite(decay)
        return cls(n=n, estimate=estimate, stderr=stderr, decay=decay if finite else None,
                   finite=finite, unreliable=unreliable)


class RateRecord(BaseModel):
    """A single rate evaluation as written to JSON"""
    name: str
    inputs_hash: str
    rate: Optional[float]
    finite: bool

    @classmethod
    def from_value(cls, name: str, inputs_hash: str, value: float) -> "RateRecord":
        finite = math.isfinite(value)
        return cls(name=name, inputs_hash=inputs_hash, rate=value if finite else None, finite=finite)


COUNT_LAW_PARAMETERS = {"geometric": "q", "poisson": "lambda", "table": "probabilities"}


class CountLawDocument(BaseModel):
    """{kind: table|geometric|poisson, parameters}"""
    kind: Literal["table", "geometric", "poisson"]
    parameters: Dict[str, Any]

    @model_validator(mode="after")
    def check_parameters(self):
        expected = COUNT_LAW_PARAMETERS[self.kind]
        if set(self.parameters) != {expected}:
            raise ValueError(f"{self.kind} law takes the single parameter '{expected}', "
                             f"got {sorted(self.parameters)}")
        return self


class ExplicitEntry(BaseModel):
    children: List[str] = []
    probability: float = Field(ge=0.0)


class KernelDocument(BaseModel):
    form: Literal["explicit", "factored"]
    configs: Optional[Dict[str, List[ExplicitEntry]]] = None
    offspring_law: Optional[CountLawDocument] = None
    transition: Optional[List[List[float]]] = None
    support_bound: Optional[int] = None

    @model_validator(mode="after")
    def check_form(self):
        if self.form == "explicit" and self.configs is None:
            raise ValueError("explicit kernel needs 'configs'")
        if self.form == "factored" and (self.offspring_law is None or self.transition is None):
            raise ValueError("factored kernel needs 'offspring_law' and 'transition'")
        return self


class KernelSpecDocument(BaseModel):
    """Kernel specification as read from JSON"""
    alphabet: List[str]
    root_law: Dict[str, float]
    kernel: KernelDocument

    @field_validator("alphabet")
    @classmethod
    def check_alphabet(cls, v):
        if not v:
            raise ValueError("alphabet must not be empty")
        if len(set(v)) != len(v):
            raise ValueError("alphabet labels must be distinct")
        return v

    @model_validator(mode="after")
    def check_root_law(self):
        unknown = set(self.root_law) - set(self.alphabet)
        if unknown:
            raise ValueError(f"root_law uses unknown labels {sorted(unknown)}")
        if any(p < 0 for p in self.root_law.values()):
            raise ValueError("root_law has a negative entry")
        total = sum(self.root_law.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"root_law sums to {total!r}, not 1")
        return self


class TiltEntry(BaseModel):
    type: str
    children: List[str] = []
    value: float


class TiltDocument(BaseModel):
    """A tilt function g as stored on disk"""
    values: List[TiltEntry] = []
    default: float = 0.0
    count_slope: float = 0.0


class RunManifest(BaseModel):
    """Everything needed to reproduce a run"""
    command: str
    argv: List[str]
    flags: Dict[str, Any]
    seed: Optional[int] = None
    threads: int = 1
    versions: Dict[str, str]
    input_digests: Dict[str, str] = {}
    output_digests: Dict[str, str] = {}
    status: RunStatus = RunStatus.OK
    started_at: str
    wall_clock_seconds: float = 0.0


class VerifyResult(BaseModel):
    """One row of the acceptance table"""
    name: str
    passed: bool
    detail: str
    seconds: float
