"""Objective evaluation: mel-cepstral distortion and report serialization.

MCD between two coefficient matrices is the frame-mean of

    (10 / ln 10) * sqrt(2 * sum_d (c_ref[d] - c_conv[d])^2)

over a configurable dimension set, defaulting to every coefficient except
the energy dimension 0.  Reports serialize identically to JSON and to a
flat key,value CSV.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

MCD_SCALE = 10.0 / math.log(10.0)


def mcd(reference: np.ndarray, converted: np.ndarray, dims=None) -> float:
    """Mel-cepstral distortion in dB; symmetric, zero iff equal on `dims`."""
    reference = np.asarray(reference, dtype=np.float64)
    converted = np.asarray(converted, dtype=np.float64)
    if reference.shape != converted.shape or reference.ndim != 2:
        raise ValueError(
            f"shape mismatch: {reference.shape} vs {converted.shape}"
        )
    n_dims, n_frames = reference.shape
    if n_frames == 0:
        raise ValueError("cannot evaluate zero frames")
    if dims is None:
        dims = range(1, n_dims)
    dims = list(dims)
    if not dims or min(dims) < 0 or max(dims) >= n_dims:
        raise ValueError(f"dims must be a nonempty subset of [0, {n_dims})")
    diff = reference[dims, :] - converted[dims, :]
    per_frame = np.sqrt(2.0 * (diff * diff).sum(axis=0))
    return float(MCD_SCALE * per_frame.mean())


@dataclass
class EvalReport:
    mcd_db: float
    per_dim_mean_err: np.ndarray
    n_frames: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.per_dim_mean_err = np.asarray(self.per_dim_mean_err, dtype=np.float64)
        if self.mcd_db < 0:
            raise ValueError("mcd_db must be nonnegative")
        if self.n_frames <= 0:
            raise ValueError("n_frames must be positive")


def evaluate(reference: np.ndarray, converted: np.ndarray,
             dims=None, config: dict = None) -> EvalReport:
    reference = np.asarray(reference, dtype=np.float64)
    converted = np.asarray(converted, dtype=np.float64)
    value = mcd(reference, converted, dims)
    return EvalReport(
        mcd_db=value,
        per_dim_mean_err=np.abs(reference - converted).mean(axis=1),
        n_frames=reference.shape[1],
        config=dict(config or {}),
    )


def _as_doc(report: EvalReport) -> dict:
    return {
        "mcd_db": report.mcd_db,
        "per_dim_mean_err": [float(v) for v in report.per_dim_mean_err],
        "n_frames": report.n_frames,
        "config": report.config,
    }


def emit_report(report: EvalReport, path, format: str = "json") -> None:
    """Write a report as JSON or as flat key,value CSV; keys are stable."""
    doc = _as_doc(report)
    if format == "json":
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "value"])
            writer.writerow(["mcd_db", repr(doc["mcd_db"])])
            writer.writerow(["n_frames", doc["n_frames"]])
            for i, v in enumerate(doc["per_dim_mean_err"]):
                writer.writerow([f"per_dim_mean_err.{i}", repr(v)])
            for k in sorted(doc["config"]):
                writer.writerow([f"config.{k}", doc["config"][k]])
    else:
        raise ValueError(f"unknown report format: {format}")


def parse_report(path, format: str = "json") -> EvalReport:
    if format == "json":
        with open(path) as fh:
            doc = json.load(fh)
        return EvalReport(
            mcd_db=doc["mcd_db"],
            per_dim_mean_err=doc["per_dim_mean_err"],
            n_frames=doc["n_frames"],
            config=doc.get("config", {}),
        )
    if format == "csv":
        values = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            for key, value in reader:
                values[key] = value
        errs = []
        i = 0
        while f"per_dim_mean_err.{i}" in values:
            errs.append(float(values[f"per_dim_mean_err.{i}"]))
            i += 1
        config = {
            k[len("config."):]: v for k, v in values.items() if k.startswith("config.")
        }
        return EvalReport(
            mcd_db=float(values["mcd_db"]),
            per_dim_mean_err=errs,
            n_frames=int(values["n_frames"]),
            config=config,
        )
    raise ValueError(f"unknown report format: {format}")
