"""Estimate reports and their lossless JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SCHEMA_VERSION = 1


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "shape": list(obj.shape)}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.asarray(obj["__ndarray__"], dtype=float).reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


@dataclass
class EstimateReport:
    """Fitted parameters plus everything needed to audit the fit.

    ``params`` is a dict view of the parameter estimate: keys ``mu``,
    ``sigma``, ``lam`` and optionally ``beta`` (list).  ``covariance`` is the
    covariance estimate of the parameter vector itself (standard errors are
    its diagonal square roots).  ``weights`` are per-observation weights in
    [0, 1] where the estimator uses them.  ``cutoff`` carries the truncation
    state for TML fits.  ``convergence`` is free-form diagnostics;
    ``initial`` the initial-estimator parameters for chained fits.
    """

    method: str
    params: dict
    covariance: np.ndarray | None = None
    standard_errors: np.ndarray | None = None
    weights: np.ndarray | None = None
    cutoff: dict | None = None
    convergence: dict = field(default_factory=dict)
    objective: float | None = None
    initial: dict | None = None
    seed: int | None = None
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def param_array(self) -> np.ndarray:
        v = [self.params["mu"], self.params["sigma"], self.params["lam"]]
        if "beta" in self.params and self.params["beta"] is not None:
            v.extend(self.params["beta"])
        return np.asarray(v, dtype=float)

    @property
    def converged(self) -> bool:
        return bool(self.convergence.get("converged", True))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "method": self.method,
            "params": _encode(self.params),
            "covariance": _encode(self.covariance),
            "standard_errors": _encode(self.standard_errors),
            "weights": _encode(self.weights),
            "cutoff": _encode(self.cutoff),
            "convergence": _encode(self.convergence),
            "objective": self.objective,
            "initial": _encode(self.initial),
            "seed": self.seed,
            "timings": _encode(self.timings),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "EstimateReport":
        raw = json.loads(text)
        return cls(
            method=raw["method"],
            params=_decode(raw["params"]),
            covariance=_decode(raw["covariance"]),
            standard_errors=_decode(raw["standard_errors"]),
            weights=_decode(raw["weights"]),
            cutoff=_decode(raw["cutoff"]),
            convergence=_decode(raw["convergence"]) or {},
            objective=raw["objective"],
            initial=_decode(raw["initial"]),
            seed=raw["seed"],
            timings=_decode(raw["timings"]) or {},
            schema_version=raw["schema_version"],
        )


def params_dict(params) -> dict:
    """Dict view of GlgParams or AftParams for report storage."""
    out = {"mu": float(params.mu), "sigma": float(params.sigma), "lam": float(params.lam)}
    beta = getattr(params, "beta", None)
    if beta is not None:
        out["beta"] = [float(b) for b in np.asarray(beta).ravel()]
    return out


def attach_covariance(report: EstimateReport, cov: np.ndarray | None):
    if cov is not None:
        cov = np.asarray(cov, dtype=float)
        report.covariance = cov
        diag = np.clip(np.diag(cov), 0.0, None)
        report.standard_errors = np.sqrt(diag)
    return report
