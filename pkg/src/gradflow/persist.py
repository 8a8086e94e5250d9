"""Serialization: parameter vectors as little-endian float64 binaries with
JSON sidecars, trajectories as CSV + binary + manifest triples, and run
manifests (run.json) that make every experiment re-runnable."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .derivatives import EvalWork
from .network import Net
from .ode import Trajectory

__all__ = [
    "FORMAT_VERSION",
    "PersistError",
    "save_params",
    "load_params",
    "save_trajectory",
    "load_trajectory",
    "write_run_json",
    "read_run_json",
]

FORMAT_VERSION = 1


class PersistError(ValueError):
    """Stored artifact is malformed, truncated, or inconsistent."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _sidecar(path: Path) -> Path:
    return Path(str(path) + ".json")


def save_params(
    theta: np.ndarray,
    path,
    net: Net | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> None:
    """theta as little-endian float64 bytes plus a JSON sidecar."""
    path = Path(path)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError("theta must be a flat vector")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(theta.astype("<f8").tobytes())
    sidecar = {
        "format_version": FORMAT_VERSION,
        "param_count": int(theta.shape[0]),
        "dtype": "<f8",
        "sha256": _sha256(path),
        "net": net.describe() if net is not None else None,
        "seed": seed,
    }
    if extra:
        sidecar["extra"] = extra
    with open(_sidecar(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path, net: Net | None = None) -> np.ndarray:
    """Load a parameter vector, validating sidecar length, hash, version,
    and (when a net is given) the recorded architecture."""
    path = Path(path)
    side_path = _sidecar(path)
    if not path.exists():
        raise FileNotFoundError(f"parameter file not found: {path}")
    if not side_path.exists():
        raise FileNotFoundError(f"parameter sidecar not found: {side_path}")
    with open(side_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format_version") != FORMAT_VERSION:
        raise PersistError(
            f"unsupported format_version {sidecar.get('format_version')} in {side_path}"
        )
    theta = np.fromfile(path, dtype="<f8")
    if theta.shape[0] != sidecar["param_count"]:
        raise PersistError(
            f"{path} holds {theta.shape[0]} values, sidecar says "
            f"{sidecar['param_count']}"
        )
    if _sha256(path) != sidecar["sha256"]:
        raise PersistError(f"hash mismatch for {path}")
    if net is not None:
        if theta.shape[0] != net.param_count:
            raise PersistError(
                f"{path} holds {theta.shape[0]} values, net expects {net.param_count}"
            )
        if sidecar.get("net") is not None and sidecar["net"] != net.describe():
            raise PersistError(f"stored net shape differs from target net ({path})")
    return theta.astype(np.float64)


def save_trajectory(traj: Trajectory, dirpath) -> None:
    """Trajectory as scalars.csv (t/loss/grad_norm), states.bin, and a
    manifest with file hashes."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    scalars = d / "scalars.csv"
    states = d / "states.bin"
    with open(scalars, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "loss", "grad_norm"])
        for t, lo, gn in zip(traj.times, traj.losses, traj.grad_norms):
            writer.writerow([repr(float(t)), repr(float(lo)), repr(float(gn))])
    with open(states, "wb") as fh:
        fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_snapshots": int(traj.states.shape[0]),
        "param_count": int(traj.states.shape[1]),
        "terminated_by": traj.terminated_by,
        "n_accepted": traj.n_accepted,
        "n_rejected": traj.n_rejected,
        "work": {
            "n_loss": traj.work.n_loss,
            "n_grad": traj.work.n_grad,
            "n_hess": traj.work.n_hess,
        },
        "metadata": traj.metadata,
        "files": {
            "scalars.csv": _sha256(scalars),
            "states.bin": _sha256(states),
        },
    }
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectory(dirpath, net: Net | None = None) -> Trajectory:
    d = Path(dirpath)
    man_path = d / "manifest.json"
    if not man_path.exists():
        raise FileNotFoundError(f"trajectory manifest not found: {man_path}")
    with open(man_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise PersistError(
            f"unsupported format_version {manifest.get('format_version')} in {man_path}"
        )
    for name, digest in manifest["files"].items():
        fpath = d / name
        if not fpath.exists():
            raise FileNotFoundError(f"trajectory component missing: {fpath}")
        if _sha256(fpath) != digest:
            raise PersistError(f"hash mismatch for {fpath}")
    S = manifest["n_snapshots"]
    P = manifest["param_count"]
    if net is not None and P != net.param_count:
        raise PersistError(
            f"trajectory has {P} parameters, net expects {net.param_count}"
        )
    times, losses, grad_norms = [], [], []
    with open(d / "scalars.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["t"]))
            losses.append(float(row["loss"]))
            grad_norms.append(float(row["grad_norm"]))
    states = np.fromfile(d / "states.bin", dtype="<f8")
    if states.shape[0] != S * P:
        raise PersistError(f"states.bin holds {states.shape[0]} values, expected {S * P}")
    if len(times) != S:
        raise PersistError(f"scalars.csv holds {len(times)} rows, expected {S}")
    w = manifest.get("work", {})
    return Trajectory(
        times=np.array(times),
        states=states.reshape(S, P).astype(np.float64),
        losses=np.array(losses),
        grad_norms=np.array(grad_norms),
        work=EvalWork(
            n_loss=w.get("n_loss", 0),
            n_grad=w.get("n_grad", 0),
            n_hess=w.get("n_hess", 0),
        ),
        terminated_by=manifest["terminated_by"],
        n_accepted=manifest.get("n_accepted", 0),
        n_rejected=manifest.get("n_rejected", 0),
        metadata=manifest.get("metadata", {}),
    )


def write_run_json(outdir, payload: dict) -> Path:
    """Resolved experiment record; re-running from this file reproduces all
    non-timing outputs."""
    out = Path(outdir) / "run.json"
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def read_run_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
