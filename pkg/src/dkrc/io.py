"""File formats: trajectory CSVs, manifests, spectrogram exports, model and system JSON."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dkrc import Identification, LatentImageEncoder
from .dynamics import PendulumParams, Trajectory
from .errors import InvalidInputError
from .koopman import EncoderDictionary, IdentificationReport, LinearLiftedSystem
from .neuralnet import network_from_json, network_to_json
from .spectrogram import MelSpectrogram, SpectrogramConfig

SYSTEM_FORMAT_VERSION = 1
TRAJECTORY_HEADER = ["t", "theta", "theta_dot", "torque"]
ROLLOUT_HEADER = ["t", "theta_true", "theta_pred", "thetadot_true", "thetadot_pred"]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else repr(value)
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, two-space indent, lossless floats, trailing newline."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def fmt(x) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------
# trajectories

def write_trajectory_csv(path, traj: Trajectory):
    """One row per state; the final row has an empty torque cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        times = traj.times
        for k, (theta, theta_dot) in enumerate(traj.states):
            torque = fmt(traj.controls[k]) if k < len(traj.controls) else ""
            w.writerow([fmt(times[k]), fmt(theta), fmt(theta_dot), torque])


def read_trajectory_csv(path, dt=None) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRAJECTORY_HEADER:
        raise InvalidInputError(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}")
    body = rows[1:]
    if len(body) < 1:
        raise InvalidInputError(f"{path}: no samples")
    try:
        t = np.array([float(r[0]) for r in body])
        states = np.array([[float(r[1]), float(r[2])] for r in body])
        controls = np.array([float(r[3]) for r in body[:-1]])
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"{path}: malformed row ({exc})") from exc
    if dt is None:
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.001
    return Trajectory(states, controls, t0=float(t[0]), dt=dt)


def write_manifest(path, files, params: PendulumParams, seed, config_hash, extra=None):
    write_json(path, {"files": list(files), "params": params.to_dict(), "seed": seed,
                      "config_hash": config_hash, **(extra or {})})


def read_manifest(path):
    """Returns (manifest dict, list of Trajectory)."""
    manifest = read_json(path)
    try:
        params = PendulumParams(**manifest["params"])
        base = Path(path).parent
        trajs = [read_trajectory_csv(base / f, params.dt) for f in manifest["files"]]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: malformed manifest ({exc})") from exc
    return manifest, trajs


# ----------------------------------------------------------------------------
# matrices, spectrograms, images

def write_matrix_csv(path, M):
    M = np.atleast_2d(M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([fmt(v) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def write_spectrogram(stem, spec: MelSpectrogram, config_hash=None, extra=None):
    """Writes ``<stem>.csv`` (mel bins x frames) and ``<stem>.json`` sidecar."""
    write_matrix_csv(f"{stem}.csv", spec.values)
    write_json(f"{stem}.json", {"config": spec.config.to_dict(), "frame_centers": spec.frame_centers,
                                "shape": list(spec.values.shape), "config_hash": config_hash,
                                **(extra or {})})


def read_spectrogram(stem) -> MelSpectrogram:
    meta = read_json(f"{stem}.json")
    return MelSpectrogram(read_matrix_csv(f"{stem}.csv"), np.array(meta["frame_centers"]),
                          SpectrogramConfig(**meta["config"]))


def write_pgm(path, pixels, comment=None):
    """Plain (P2) 8-bit greymap; row 0 of ``pixels`` is drawn at the bottom (low mel bins down)."""
    img = np.clip(np.round(np.asarray(pixels)[::-1] * 255), 0, 255).astype(int)
    lines = ["P2"]
    if comment:
        lines.append(f"# {comment}")
    lines += [f"{img.shape[1]} {img.shape[0]}", "255"]
    lines += [" ".join(map(str, row)) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path):
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise InvalidInputError(f"{path}: not a P2 greymap")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4:4 + w * h], dtype=float).reshape(h, w) / maxval
    return data[::-1]


# ----------------------------------------------------------------------------
# rollouts and tables

def write_rollout_csv(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROLLOUT_HEADER)
        for k, t in enumerate(result.times):
            w.writerow([fmt(t), fmt(result.truth[0, k]), fmt(result.predicted[0, k]),
                        fmt(result.truth[1, k]), fmt(result.predicted[1, k])])


def write_error_table(stem, table, config_hash=None):
    cols = ["lift_dim", "mode", "mae_theta", "mae_theta_dot", "h1_max_abs", "h1_frobenius",
            "admissible", "n_failed", "seeds"]
    with open(f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in table.rows:
            w.writerow([r["lift_dim"], r["mode"], fmt(r["mae_theta"]), fmt(r["mae_theta_dot"]),
                        fmt(r["h1_max_abs"]), fmt(r["h1_frobenius"]),
                        ";".join("1" if a else "0" for a in r["admissible"]), r["n_failed"],
                        ";".join(map(str, r["seeds"]))])
    write_json(f"{stem}.json", {"rows": table.rows, "metadata": table.metadata, "config_hash": config_hash})


# ----------------------------------------------------------------------------
# identified systems

@dataclass
class SystemArtifact:
    """Everything needed to reload an identified system, mirroring its JSON file."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    report: dict
    dictionary: dict  # descriptor incl. model file names and normalization stats
    dynamics: dict
    mode: str = "raw-only"
    allow_inadmissible: bool = False
    config_hash: str = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        N, n, m = self.A.shape[0], self.C.shape[0], self.B.shape[1]
        return {
            "version": SYSTEM_FORMAT_VERSION,
            "A": self.A, "B": self.B, "C": self.C, "D": np.zeros((n, m)),
            "N": N, "n": n, "m": m, "mode": self.mode,
            "dictionary": self.dictionary, "report": self.report, "dynamics": self.dynamics,
            "allow_inadmissible": self.allow_inadmissible, "config_hash": self.config_hash,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != SYSTEM_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported system file version {d.get('version')!r}")
        try:
            art = cls(np.array(d["A"], dtype=float).reshape(d["N"], d["N"]),
                      np.array(d["B"], dtype=float).reshape(d["N"], d["m"]),
                      np.array(d["C"], dtype=float).reshape(d["n"], d["N"]),
                      d["report"], d["dictionary"], d["dynamics"], d["mode"], d["allow_inadmissible"],
                      d["config_hash"], d.get("extra", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed system file: {exc}") from exc
        if np.any(np.array(d["D"], dtype=float) != 0):
            raise InvalidInputError("D must be zero")
        return art

    def system(self) -> LinearLiftedSystem:
        return LinearLiftedSystem(self.A, self.B, self.C)


def save_identification(out_dir, ident: Identification, params: PendulumParams, config_hash=None,
                        allow_inadmissible=False, stem="system") -> SystemArtifact:
    """Writes system JSON, A/B/C CSVs, the AE model file and (latent mode) the CAE model file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = ident.dictionary
    ae_file = f"{stem}_ae_model.json"
    write_json(out / ae_file, network_to_json(d.net, {"mean": d.mean, "std": d.std, "state_dim": d.state_dim,
                                                       "config_hash": config_hash}))
    descriptor = {**d.describe(), "ae_model": ae_file, "cae_model": None}
    mode = ident.report.metadata.get("mode", "raw-only")
    if ident.latent_encoder is not None and mode == "raw+latent":
        cae_file = f"{stem}_cae_model.json"
        write_json(out / cae_file, network_to_json(ident.latent_encoder.cae,
                                                   {**ident.latent_encoder.describe(), "config_hash": config_hash}))
        descriptor["cae_model"] = cae_file
    art = SystemArtifact(ident.system.A, ident.system.B, ident.system.C, ident.report.to_dict(), descriptor,
                         params.to_dict(), mode, allow_inadmissible, config_hash,
                         {"matrix_files": {name: f"{stem}_{name}.csv" for name in "ABC"}})
    write_json(out / f"{stem}.json", art.to_dict())
    for name in "ABC":
        write_matrix_csv(out / f"{stem}_{name}.csv", getattr(art, name))
    write_json(out / f"{stem}_report.json", {**ident.report.to_dict(), "config_hash": config_hash})
    return art


def load_system(path):
    """Returns ``(SystemArtifact, LinearLiftedSystem, EncoderDictionary)``."""
    path = Path(path)
    try:
        art = SystemArtifact.from_dict(read_json(path))
        desc = art.dictionary
        ae = read_json(path.parent / desc["ae_model"])
        net = network_from_json(ae)
        context_fn = None
        if desc.get("cae_model"):
            cae_json = read_json(path.parent / desc["cae_model"])
            meta = cae_json["metadata"]
            encoder = LatentImageEncoder(network_from_json(cae_json), SpectrogramConfig(**meta["spectrogram"]),
                                         meta["image_frames"], meta["value_range"], meta["channel"],
                                         PendulumParams(**meta["dynamics"]))
            context_fn = encoder.context
        dictionary = EncoderDictionary(net, desc["mean"], desc["std"], desc["state_dim"], context_fn)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"cannot load system {path}: {exc}") from exc
    return art, art.system(), dictionary


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
