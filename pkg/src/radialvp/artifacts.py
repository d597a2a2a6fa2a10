"""Reading and writing run artifacts: CSV series, snapshots, trajectories and JSON reports."""

import csv
import json
import math
import os
import re

import numpy as np

from .dynamics import Trajectory
from .phase import Ensemble

DIAGNOSTICS = "diagnostics.csv"
TRAJECTORIES = "trajectories.csv"
HISTORY = "field_history.npz"
SUMMARY = "summary.json"
CONFIG = "config.toml"
ASYMPTOTICS = "asymptotics.json"
SNAPSHOT_COLUMNS = ("r", "w", "ell", "weight")
TRAJECTORY_COLUMNS = ("index", "time", "r", "w", "ell", "m")
_SNAPSHOT = re.compile(r"^snapshot_(.+)\.csv$")


class ArtifactError(FileNotFoundError):
    pass


def fmt(x):
    """Shortest round-trip decimal text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(v) for v in row])


def read_csv(path):
    """Columns of a numeric CSV as a dict of float arrays (header order kept)."""
    if not os.path.exists(path):
        raise ArtifactError(f"missing artifact: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def snapshot_name(t):
    return f"snapshot_{fmt(float(t))}.csv"


def write_snapshot(directory, t, e):
    path = os.path.join(directory, snapshot_name(t))
    write_csv(path, SNAPSHOT_COLUMNS, zip(e.r, e.w, e.ell, e.weight))
    return path


def list_snapshots(directory):
    """Sorted ``(time, path)`` pairs of the snapshot files in ``directory``."""
    out = []
    for name in os.listdir(directory):
        match = _SNAPSHOT.match(name)
        if match:
            out.append((float(match.group(1)), os.path.join(directory, name)))
    return sorted(out)


def read_snapshot(path, model, time):
    cols = read_csv(path)
    missing = [c for c in SNAPSHOT_COLUMNS if c not in cols]
    if missing:
        raise ArtifactError(f"{path}: missing columns {missing}")
    return Ensemble(cols["r"], cols["w"], cols["ell"], cols["weight"], model=model, time=float(time))


def write_trajectories(path, trajectories):
    rows = (
        (tr.index, t, r, w, tr.ell, m)
        for tr in trajectories
        for t, r, w, m in zip(tr.times, tr.r, tr.w, tr.m)
    )
    write_csv(path, TRAJECTORY_COLUMNS, rows)


def read_trajectories(path):
    cols = read_csv(path)
    index = cols["index"].astype(int)
    out = []
    for i in np.unique(index):
        k = index == i
        out.append(Trajectory(cols["time"][k], cols["r"][k], cols["w"][k], float(cols["ell"][k][0]),
                              cols["m"][k], int(i)))
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no infinities; keep them readable and parseable
        if math.isnan(x) or math.isinf(x):
            return repr(x)
        return x
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    if not os.path.exists(path):
        raise ArtifactError(f"missing artifact: {path}")
    with open(path) as fh:
        return json.load(fh)
