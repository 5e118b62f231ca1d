"""File formats: TimeRecord CSV + JSON sidecar, FrfEstimate/FitResult JSON.

All writers are atomic (temporary file in the target directory, then
rename). Floats are written with round-trip precision.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .classical import FrfEstimate
from .graybox import FitResult, StartRecord
from .plant import ThetaVector
from .sigproc import TimeRecord

FORMAT_VERSION = 1


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_time_record(path, rec: TimeRecord, bins: Optional[np.ndarray] = None) -> None:
    """``path`` is the CSV; the sidecar goes to ``path`` with suffix ``.json``."""
    path = Path(path)
    cols = [rec.t[None, :], rec.u, rec.y] + ([rec.r] if rec.r is not None else [])
    data = np.vstack(cols).T
    names = ["t"] + [f"u{i + 1}" for i in range(rec.u.shape[0])] + [f"y{i + 1}" for i in range(rec.y.shape[0])]
    if rec.r is not None:
        names += [f"r{i + 1}" for i in range(rec.r.shape[0])]
    lines = [",".join(names)] + [",".join(_fmt(v) for v in row) for row in data]
    atomic_write_text(path, "\n".join(lines) + "\n")
    side = {"format_version": FORMAT_VERSION, "sample_rate": rec.sample_rate,
            "period_samples": rec.period_samples, "n_periods": rec.n_periods,
            "settle_periods": rec.settle_periods, "meta": rec.meta}
    if bins is not None:
        side["excited_bins"] = [int(b) for b in bins]
    dump_json(path.with_suffix(".json"), side)


def read_time_record(path) -> tuple[TimeRecord, Optional[np.ndarray]]:
    path = Path(path)
    side = load_json(path.with_suffix(".json"))
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header) or header[0] != "t":
        raise ValueError(f"{path}: malformed header {header}")
    idx = {p: [i for i, h in enumerate(header) if h[0] == p and h[1:].isdigit()] for p in "uyr"}
    if not idx["u"] or not idx["y"]:
        raise ValueError(f"{path}: need u and y columns")
    r = data[:, idx["r"]].T if idx["r"] else None
    rec = TimeRecord(u=data[:, idx["u"]].T, y=data[:, idx["y"]].T, r=r, sample_rate=side["sample_rate"],
                     period_samples=side["period_samples"], n_periods=side["n_periods"],
                     settle_periods=side.get("settle_periods", 0), meta=side.get("meta", {}))
    bins = side.get("excited_bins")
    return rec, None if bins is None else np.asarray(bins, dtype=int)


def _cplx_pairs(a: np.ndarray) -> list:
    return [float(v) for z in a.ravel() for v in (z.real, z.imag)]


def _from_pairs(vals, shape) -> np.ndarray:
    v = np.asarray(vals, dtype=float)
    return (v[0::2] + 1j * v[1::2]).reshape(shape)


def frf_to_dict(est: FrfEstimate) -> dict:
    lines = []
    for l in range(est.n_lines):
        item = {"freq_hz": float(est.freqs_hz[l]), "valid": bool(est.valid[l]), "G": _cplx_pairs(est.G[l])}
        if est.cov is not None:
            item["cov_valid"] = bool(est.cov_valid[l])
            item["cov"] = _cplx_pairs(est.cov[l])
        lines.append(item)
    return {"format_version": FORMAT_VERSION, "method_tag": est.method_tag, "n_e_used": int(est.n_e_used),
            "n_y": est.n_y, "n_u": est.n_u, "notes": [str(n) for n in est.notes], "lines": lines}


def frf_from_dict(d: dict) -> FrfEstimate:
    n_y, n_u = d["n_y"], d["n_u"]
    lines = d["lines"]
    freqs = 2 * np.pi * np.array([ln["freq_hz"] for ln in lines])
    G = np.array([_from_pairs(ln["G"], (n_y, n_u)) for ln in lines]).reshape(len(lines), n_y, n_u)
    valid = np.array([ln["valid"] for ln in lines], dtype=bool)
    cov = cov_valid = None
    if lines and "cov" in lines[0]:
        k = n_y * n_u
        cov = np.array([_from_pairs(ln["cov"], (k, k)) for ln in lines])
        cov_valid = np.array([ln["cov_valid"] for ln in lines], dtype=bool)
    return FrfEstimate(freqs, G, d.get("method_tag", ""), d.get("n_e_used", 0), valid, cov, cov_valid,
                       notes=list(d.get("notes", [])))


def write_frf(path, est: FrfEstimate) -> None:
    dump_json(path, frf_to_dict(est))


def read_frf(path) -> FrfEstimate:
    return frf_from_dict(load_json(path))


def fit_to_dict(fit: FitResult, theta0: Optional[ThetaVector] = None, extra: Optional[dict] = None) -> dict:
    th = fit.theta_hat.as_dict()
    d = {
        "format_version": FORMAT_VERSION,
        "names": list(fit.names),
        "theta_hat": {n: {"value": th[n], "unit": fit.theta_hat.units(n)} for n in th},
        "cost": fit.cost,
        "starts": [{"x0": s.x0.tolist(), "x": s.x.tolist(), "cost0": s.cost0, "cost": s.cost,
                    "n_iter": s.n_iter, "success": s.success, "message": s.message,
                    "trace": [float(c) for c in s.trace]} for s in fit.starts],
    }
    if theta0 is not None:
        d["theta0"] = theta0.as_dict()
    if extra:
        d.update(extra)
    return d


def fit_from_dict(d: dict) -> FitResult:
    th = {n: v["value"] for n, v in d["theta_hat"].items()}
    groups = {}
    for g in ("k_g", "d_g", "k_e", "d_e", "k_c"):
        keys = sorted((n for n in th if n[:3] == g), key=lambda n: int(n[3:]))
        groups[g] = [th[n] for n in keys]
    theta = ThetaVector(**groups)
    starts = [StartRecord(np.asarray(s["x0"]), np.asarray(s["x"]), s["cost0"], s["cost"], s["n_iter"],
                          s["success"], s["message"], list(s["trace"])) for s in d["starts"]]
    return FitResult(theta, list(d["names"]), d["cost"], starts)


def write_fit(path, fit: FitResult, theta0: Optional[ThetaVector] = None, extra: Optional[dict] = None) -> None:
    dump_json(path, fit_to_dict(fit, theta0, extra))


def read_fit(path) -> FitResult:
    return fit_from_dict(load_json(path))
