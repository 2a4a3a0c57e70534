"""Fitted-model records and their versioned JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import MarginalBasis, bspline_design, row_kron, sum_to_zero_basis
from .model_dsl import Family, ModelSpec, OffsetRule, format_spec, parse_formula

SCHEMA_NAME = "nbgam.fit"
SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class TermInfo:
    """Everything needed to rebuild one smooth's design on new data."""

    label: str
    variables: tuple
    d_groups: tuple
    marginals: list
    column_sums: np.ndarray
    col_offset: int
    penalty_scales: tuple

    @property
    def constraint(self) -> np.ndarray:
        return sum_to_zero_basis(self.column_sums)

    @property
    def n_cols(self) -> int:
        return len(self.column_sums) - 1

    def design(self, columns) -> np.ndarray:
        raw = row_kron([bspline_design(c, m) for c, m in zip(columns, self.marginals)])
        return raw @ self.constraint

    def to_dict(self):
        return {
            "label": self.label,
            "variables": list(self.variables),
            "d_groups": list(self.d_groups),
            "marginals": [m.to_dict() for m in self.marginals],
            "column_sums": self.column_sums.tolist(),
            "col_offset": self.col_offset,
            "penalty_scales": list(self.penalty_scales),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], tuple(d["variables"]), tuple(d["d_groups"]),
                   [MarginalBasis.from_dict(m) for m in d["marginals"]],
                   np.asarray(d["column_sums"], dtype=float), int(d["col_offset"]),
                   tuple(d["penalty_scales"]))


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: np.ndarray
    log_lambdas: np.ndarray
    phi: float
    edf_total: float
    edf_per_term: np.ndarray
    deviance: float
    loglik: float
    aic: float
    gcv: float
    n_obs: int
    converged: bool
    spec: ModelSpec
    coefficient_names: tuple = ()
    lambda_labels: tuple = ()
    terms: tuple = ()
    n_dropped: int = 0
    message: str = ""
    evaluations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_NAME,
            "version": SCHEMA_VERSION,
            "formula": format_spec(self.spec),
            "family": self.spec.family.value,
            "offset": str(self.spec.offset_rule),
            "coefficients": self.coefficients.tolist(),
            "coefficient_names": list(self.coefficient_names),
            "log_lambdas": self.log_lambdas.tolist(),
            "lambda_labels": list(self.lambda_labels),
            "phi": None if math.isinf(self.phi) else self.phi,
            "edf_total": self.edf_total,
            "edf_per_term": self.edf_per_term.tolist(),
            "deviance": self.deviance,
            "loglik": self.loglik,
            "aic": self.aic,
            "gcv": self.gcv,
            "n_obs": self.n_obs,
            "n_dropped": self.n_dropped,
            "converged": self.converged,
            "message": self.message,
            "evaluations": self.evaluations,
            "parametric": list(self.spec.parametric_terms),
            "terms": [t.to_dict() for t in self.terms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("schema") != SCHEMA_NAME:
            raise ValueError("not a fit document")
        if d.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported fit schema version {d.get('version')}")
        spec = parse_formula(d["formula"], Family(d["family"]), OffsetRule.parse(d["offset"]))
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            log_lambdas=np.asarray(d["log_lambdas"], dtype=float),
            phi=math.inf if d["phi"] is None else float(d["phi"]),
            edf_total=float(d["edf_total"]),
            edf_per_term=np.asarray(d["edf_per_term"], dtype=float),
            deviance=float(d["deviance"]),
            loglik=float(d["loglik"]),
            aic=float(d["aic"]),
            gcv=float(d["gcv"]),
            n_obs=int(d["n_obs"]),
            converged=bool(d["converged"]),
            spec=spec,
            coefficient_names=tuple(d["coefficient_names"]),
            lambda_labels=tuple(d["lambda_labels"]),
            terms=tuple(TermInfo.from_dict(t) for t in d["terms"]),
            n_dropped=int(d.get("n_dropped", 0)),
            message=d.get("message", ""),
            evaluations=int(d.get("evaluations", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))
