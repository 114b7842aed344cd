"""Plain-text container for simulated truth and measurements.

A header of ``# key: value`` lines is followed by one whitespace-separated
record per run and sampling instant::

    run k t_k x_1 ... x_n z_1 ... z_m

Floats are written with 17 significant digits, which round-trips binary64
exactly, so filtering a file reproduces the in-memory results bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = "cddfekf-dataset 1"
HEADER_KEYS = ("model", "gamma", "seed", "sample_period", "horizon", "runs", "n", "m", "turn_rate_units")


@dataclass(frozen=True)
class Dataset:
    meta: dict
    times: np.ndarray  # (K,)
    states: np.ndarray  # (runs, K, n)
    z: np.ndarray  # (runs, K, m)

    @property
    def gamma(self) -> float:
        return float(self.meta["gamma"])


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_dataset(path, meta: dict, times: np.ndarray, states: np.ndarray, z: np.ndarray) -> Path:
    states = np.asarray(states, dtype=float)
    z = np.asarray(z, dtype=float)
    runs, k_count, n = states.shape
    m = z.shape[-1]
    meta = dict(meta, runs=runs, n=n, m=m)
    lines = [f"# {MAGIC}"]
    for key in HEADER_KEYS:
        if key in meta:
            value = meta[key]
            lines.append(f"# {key}: {_fmt(value) if isinstance(value, float) else value}")
    lines.append("# columns: run k t " + " ".join(f"x{i + 1}" for i in range(n)) + " " + " ".join(f"z{i + 1}" for i in range(m)))
    for r in range(runs):
        for k in range(k_count):
            values = [_fmt(times[k])] + [_fmt(v) for v in states[r, k]] + [_fmt(v) for v in z[r, k]]
            lines.append(f"{r} {k + 1} " + " ".join(values))
    p = Path(path)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def read_dataset(path) -> Dataset:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {p}: {exc.strerror}", "data") from None
    meta = {}
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if lineno == 1:
                if body != MAGIC:
                    raise ConfigError("not a cddfekf dataset", "data", lineno)
                continue
            key, sep, value = body.partition(":")
            if sep and key.strip() in HEADER_KEYS:
                meta[key.strip()] = value.strip()
            continue
        try:
            records.append([float(v) for v in line.split()])
        except ValueError:
            raise ConfigError("malformed record", "data", lineno) from None
    missing = [k for k in ("gamma", "runs", "n", "m") if k not in meta]
    if missing:
        raise ConfigError(f"dataset header lacks {', '.join(missing)}", "data")
    runs, n, m = int(meta["runs"]), int(meta["n"]), int(meta["m"])
    arr = np.array(records, dtype=float).reshape(-1, 3 + n + m) if records else np.zeros((0, 3 + n + m))
    if runs == 0 or arr.shape[0] % runs:
        raise ConfigError("record count does not match the number of runs", "data")
    k_count = arr.shape[0] // runs
    arr = arr.reshape(runs, k_count, 3 + n + m)
    meta["gamma"] = float(meta["gamma"])
    return Dataset(meta, arr[0, :, 2].copy(), arr[:, :, 3 : 3 + n].copy(), arr[:, :, 3 + n :].copy())
