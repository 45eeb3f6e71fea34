"""Field and table serialization.

Binary layout (little endian): a 16-byte header ``magic, N, n, m`` made of
four bytes of magic followed by three ``uint32``, then float64 payload.
``m == 0`` marks a field without tau axis.  Payload and CSV rows are both
row-major over ``(tau, y2, y1)``: ``y1`` varies fastest.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .torus import PeriodicField, TorusGrid

FIELD_MAGIC = b"HRDF"
TABLE_MAGIC = b"HRDT"
_HEADER = struct.Struct("<4sIII")


def _to_storage(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    # internal ij order (tau, y1, y2) -> storage order (tau, y2, y1)
    if grid.dim == 2:
        return np.swapaxes(values, -1, -2)
    return values


def write_field_binary(path, field: PeriodicField) -> None:
    g = field.grid
    header = _HEADER.pack(FIELD_MAGIC, g.dim, g.n, g.m or 0)
    payload = np.ascontiguousarray(_to_storage(field.values, g), dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_field_binary(path) -> PeriodicField:
    raw = Path(path).read_bytes()
    magic, dim, n, m = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: not a field file (magic {magic!r})")
    grid = TorusGrid(dim, n, m or None)
    store_shape = ((m,) if m else ()) + (n,) * dim
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != int(np.prod(store_shape)):
        raise ValueError(f"{path}: payload size {data.size} does not match header")
    return PeriodicField(grid, _to_storage(data.reshape(store_shape), grid).copy())


def write_field_csv(path, field: PeriodicField) -> None:
    g = field.grid
    vals = _to_storage(field.values, g)
    taus = g.tau_nodes() if g.has_tau else None
    s = np.arange(g.n) / g.n
    cols = (["tau"] if g.has_tau else []) + [f"y{j + 1}" for j in range(g.dim)] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for idx in np.ndindex(vals.shape):
            # storage index is (tau?, y2?, y1)
            coords = []
            off = 0
            if g.has_tau:
                coords.append(taus[idx[0]])
                off = 1
            ys = [s[i] for i in reversed(idx[off:])]  # back to y1, y2
            w.writerow([repr(float(c)) for c in coords + ys] + [repr(float(vals[idx]))])


def read_field_csv(path) -> PeriodicField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols, body = rows[0], np.array(rows[1:], dtype=float)
    has_tau = cols[0] == "tau"
    dim = len(cols) - 1 - int(has_tau)
    n = round(len(body) ** (1 / dim)) if not has_tau else None
    m = None
    if has_tau:
        m = len(np.unique(body[:, 0]))
        n = round((len(body) // m) ** (1 / dim))
    grid = TorusGrid(dim, n, m)
    store_shape = ((m,) if has_tau else ()) + (n,) * dim
    vals = body[:, -1].reshape(store_shape)
    return PeriodicField(grid, _to_storage(vals, grid).copy())


def write_table(path, values: np.ndarray, manifest: dict) -> None:
    """Write an effective-coefficient table and its JSON manifest.

    The header reuses the field layout with ``N`` = number of table axes,
    ``n`` = number of scalar entries and ``m`` = trailing component count.
    """
    values = np.asarray(values, dtype="<f8")
    header = _HEADER.pack(TABLE_MAGIC, values.ndim, values.size, values.shape[-1] if values.ndim else 1)
    Path(path).write_bytes(header + np.ascontiguousarray(values).tobytes())
    man = dict(manifest, shape=list(values.shape))
    Path(str(path) + ".json").write_text(json.dumps(man, indent=2, sort_keys=True))


def read_table(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    magic, ndim, size, _ = _HEADER.unpack_from(raw)
    if magic != TABLE_MAGIC:
        raise ValueError(f"{path}: not a table file (magic {magic!r})")
    manifest = json.loads(Path(str(path) + ".json").read_text())
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != size:
        raise ValueError(f"{path}: truncated table payload")
    return data.reshape(manifest["shape"]).copy(), manifest


def write_series_csv(path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
