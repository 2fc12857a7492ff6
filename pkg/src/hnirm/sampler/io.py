"""Sample files: one long-format CSV per family plus a JSON manifest.

Each family file has columns ``draw,unit,i,j,value`` (0-based). ``unit`` is
the school for school-level families and the group for group-level ones;
pair families list the upper triangle only; ``j`` is empty for
vector families and both indices are empty for per-school scalars.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from ..exceptions import ValidationError
from .chain import PosteriorSamples
from .config import config_from_mapping

SCALAR = ("sigma_d2", "sigma_z2")
VECTOR = ("beta", "gamma", "sigma_beta2")
PAIR = ("mu", "sigma_delta2", "delta", "item_dist")
RAGGED_VECTOR = ("theta",)
RAGGED_PAIR = ("person_dist",)
POSITIONS = ("W",)
RAGGED_POSITIONS = ("Z",)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(values) -> list[str]:
    return [repr(float(v)) for v in np.asarray(values).ravel()]


def _rows_for(name, arr):
    """Yield (draw, unit, i, j) index columns and a flat value array."""
    S = arr.shape[0]
    if name in SCALAR:
        draw, unit = np.meshgrid(np.arange(S), np.arange(arr.shape[1]), indexing="ij")
        return draw.ravel(), unit.ravel(), None, None, arr.ravel()
    if name in VECTOR:
        draw, unit, i = np.meshgrid(np.arange(S), np.arange(arr.shape[1]), np.arange(arr.shape[2]), indexing="ij")
        return draw.ravel(), unit.ravel(), i.ravel(), None, arr.ravel()
    if name in PAIR:
        iu = np.triu_indices(arr.shape[2], 1)
        vals = arr[:, :, iu[0], iu[1]]
        draw, unit, k = np.meshgrid(np.arange(S), np.arange(arr.shape[1]), np.arange(iu[0].size), indexing="ij")
        return draw.ravel(), unit.ravel(), iu[0][k.ravel()], iu[1][k.ravel()], vals.ravel()
    if name in POSITIONS:
        draw, unit, i, j = np.meshgrid(*(np.arange(s) for s in arr.shape), indexing="ij")
        return draw.ravel(), unit.ravel(), i.ravel(), j.ravel(), arr.ravel()
    raise KeyError(name)


def _write_family(path, cols) -> None:
    draw, unit, i, j, vals = cols
    text_vals = _fmt(vals)
    empty = [""] * len(text_vals)
    ii = empty if i is None else [str(v) for v in i]
    jj = empty if j is None else [str(v) for v in j]
    lines = ["draw,unit,i,j,value"]
    lines += [f"{a},{b},{c},{d},{v}" for a, b, c, d, v in zip(draw.tolist(), unit.tolist(), ii, jj, text_vals)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _ragged_cols(name, arrays):
    parts = []
    for m, arr in enumerate(arrays):
        S = arr.shape[0]
        if name in RAGGED_VECTOR:
            draw, i = np.meshgrid(np.arange(S), np.arange(arr.shape[1]), indexing="ij")
            parts.append((draw.ravel(), np.full(draw.size, m), i.ravel(), None, arr.ravel()))
        elif name in RAGGED_PAIR:
            iu = np.triu_indices(arr.shape[1], 1)
            draw, k = np.meshgrid(np.arange(S), np.arange(iu[0].size), indexing="ij")
            parts.append((draw.ravel(), np.full(draw.size, m), iu[0][k.ravel()], iu[1][k.ravel()],
                          arr[:, iu[0], iu[1]].ravel()))
        else:
            draw, i, a = np.meshgrid(np.arange(S), np.arange(arr.shape[1]), np.arange(arr.shape[2]), indexing="ij")
            parts.append((draw.ravel(), np.full(draw.size, m), i.ravel(), a.ravel(), arr.ravel()))
    # order rows by draw, then school, so files read draw by draw
    draw = np.concatenate([p[0] for p in parts])
    unit = np.concatenate([p[1] for p in parts])
    i = np.concatenate([p[2] for p in parts])
    j = None if parts[0][3] is None else np.concatenate([p[3] for p in parts])
    vals = np.concatenate([p[4] for p in parts])
    order = np.lexsort((np.arange(draw.size), unit, draw))
    return draw[order], unit[order], i[order], None if j is None else j[order], vals[order]


def write_samples(samples: PosteriorSamples, directory, inputs=(), extra: dict | None = None) -> dict:
    """Write every stored family and ``manifest.json`` into ``directory``.

    Returns the manifest dictionary.
    """
    from .. import __version__

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    families = []
    for name, arr in samples.draws.items():
        if isinstance(arr, list):
            cols = _ragged_cols(name, arr)
        else:
            cols = _rows_for(name, arr)
        _write_family(out / f"{name}.csv", cols)
        families.append(name)
    for name, arr in samples.means.items():
        _write_family(out / f"{name}_mean.csv", _rows_for(name, arr[None]))
    manifest = {
        "software": "hnirm",
        "version": __version__,
        "seed": samples.config.seed,
        "config": samples.config.to_flat(),
        "n_draws": samples.n_draws,
        "families": sorted(families),
        "school_ids": list(samples.school_ids),
        "item_ids": list(samples.item_ids),
        "group_labels": list(samples.group_labels),
        "group_of_school": [int(g) for g in samples.group_of_school],
        "n_respondents": [int(a.shape[1]) for a in samples.draws["theta"]],
        "acceptance": samples.acceptance,
        "acceptance_all_iterations": samples.acceptance_total,
        "final_jumps": None if samples.final_jumps is None else np.asarray(samples.final_jumps).tolist(),
        "wall_time_seconds": samples.wall_time,
        "inputs": {str(p): sha256_file(p) for p in inputs},
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ValidationError(f"{path} not found")
    return json.loads(path.read_text(encoding="utf-8"))


def _read_csv(path):
    if not path.exists():
        raise ValidationError(f"{path} not found")
    raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=float, filling_values=-1, ndmin=2)
    return raw[:, 0].astype(int), raw[:, 1].astype(int), raw[:, 2].astype(int), raw[:, 3].astype(int), raw[:, 4]


def load_samples(directory) -> PosteriorSamples:
    """Read a sample directory written by ``write_samples``."""
    directory = Path(directory)
    man = read_manifest(directory)
    S = int(man["n_draws"])
    M = len(man["school_ids"])
    p = len(man["item_ids"])
    G = len(man["group_labels"])
    ns = man["n_respondents"]
    draws: dict = {}
    for name in man["families"]:
        draw, unit, i, j, v = _read_csv(directory / f"{name}.csv")
        if name in SCALAR:
            arr = np.zeros((S, M))
            arr[draw, unit] = v
        elif name in VECTOR:
            arr = np.zeros((S, G if name != "beta" else M, p))
            arr[draw, unit, i] = v
        elif name in PAIR:
            lead = G if name in ("mu", "sigma_delta2") else M
            arr = np.zeros((S, lead, p, p))
            arr[draw, unit, i, j] = v
            arr[draw, unit, j, i] = v
            if name == "sigma_delta2":
                idx = np.arange(p)
                arr[:, :, idx, idx] = 1.0
        elif name in RAGGED_VECTOR:
            arr = [np.zeros((S, n)) for n in ns]
            for m in range(M):
                sel = unit == m
                arr[m][draw[sel], i[sel]] = v[sel]
        elif name in RAGGED_PAIR:
            arr = [np.zeros((S, n, n)) for n in ns]
            for m in range(M):
                sel = unit == m
                arr[m][draw[sel], i[sel], j[sel]] = v[sel]
                arr[m][draw[sel], j[sel], i[sel]] = v[sel]
        elif name in POSITIONS:
            dim = int(j.max()) + 1
            arr = np.zeros((S, M, p, dim))
            arr[draw, unit, i, j] = v
        elif name in RAGGED_POSITIONS:
            dim = int(j.max()) + 1
            arr = [np.zeros((S, n, dim)) for n in ns]
            for m in range(M):
                sel = unit == m
                arr[m][draw[sel], i[sel], j[sel]] = v[sel]
        else:
            continue
        draws[name] = arr
    means = {}
    for name in ("delta", "item_dist"):
        path = directory / f"{name}_mean.csv"
        if path.exists():
            _, unit, i, j, v = _read_csv(path)
            arr = np.zeros((M, p, p))
            arr[unit, i, j] = v
            arr[unit, j, i] = v
            means[name] = arr
    config = config_from_mapping(man["config"])
    return PosteriorSamples(
        school_ids=list(man["school_ids"]),
        item_ids=list(man["item_ids"]),
        group_labels=tuple(man["group_labels"]),
        group_of_school=np.array(man["group_of_school"], dtype=np.int64),
        config=config,
        draws=draws,
        means=means,
        acceptance=dict(man.get("acceptance", {})),
        acceptance_total=dict(man.get("acceptance_all_iterations", {})),
        final_jumps=None if man.get("final_jumps") is None else np.array(man["final_jumps"]),
        wall_time=float(man.get("wall_time_seconds", 0.0)),
    )
