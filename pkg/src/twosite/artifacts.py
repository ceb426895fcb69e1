"""Deterministic CSV/JSON artifact writers and the per-run manifest.

Data files must be byte-identical across runs of the same configuration:
floats are rendered in fixed 17-significant-digit scientific notation and no
timestamps enter data files.  The manifest records how to reproduce a run
(command, configuration snapshot, parameter-file digest) and is the only
artifact carrying wall-clock information.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__

FLOAT_FMT = "{:.16e}"


def fmt(value):
    """Fixed-width rendering of one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return FLOAT_FMT.format(float(value))


def write_csv(path, columns):
    """Write named columns (dict preserving order) as deterministic CSV."""
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[k])) for k in names]
    n = len(arrays[0])
    for k, a in zip(names, arrays):
        if len(a) != n:
            raise ValueError(f"column {k!r} has length {len(a)}, expected {n}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(fmt(a[i]) for a in arrays) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Reproducibility record emitted once per CLI run."""

    command: str
    argv: list
    config: dict
    params_path: str
    params_sha256: str
    outputs: list = field(default_factory=list)
    seed: int | None = None
    workers: int | None = None
    version: str = __version__
    wall_time_s: float = 0.0
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def add_output(self, path):
        self.outputs.append(str(path))
        return path

    def write(self, path):
        self.wall_time_s = time.perf_counter() - self._t0
        payload = {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "params_path": self.params_path,
            "params_sha256": self.params_sha256,
            "outputs": sorted(self.outputs),
            "seed": self.seed,
            "workers": self.workers,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
        }
        return write_json(path, payload)
