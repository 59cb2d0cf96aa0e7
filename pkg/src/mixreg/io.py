"""Reading and writing matrices, atlases and fitted models.

Binary matrix layout (little-endian)::

    bytes 0-7    b"MOREMAT1"
    bytes 8-15   uint64 rows
    bytes 16-23  uint64 cols
    bytes 24-    rows*cols float64 values, row-major

Model files are JSON manifests with the parameter matrices embedded as
base64-encoded binary matrices (or referenced as sibling ``.bin`` files).
"""

from __future__ import annotations

import base64
import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .baseline import RidgeModel
from .dataset import AtlasMap
from .exceptions import FormatError, MixRegError, ModelFormatError
from .model import MixtureModel

MAGIC = b"MOREMAT1"
_HEADER = struct.Struct("<8sQQ")
MODEL_FORMAT_VERSION = "1"


def _format_for(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise FormatError(f"unknown matrix format {fmt!r}")
        return fmt
    return "bin" if str(path).endswith(".bin") else "csv"


def matrix_to_bytes(matrix) -> bytes:
    a = np.ascontiguousarray(matrix, dtype="<f8")
    if a.ndim != 2:
        raise FormatError(f"only 2-D matrices can be written, got {a.ndim}-D")
    return _HEADER.pack(MAGIC, a.shape[0], a.shape[1]) + a.tobytes()


def matrix_from_bytes(blob: bytes, source="<bytes>") -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(blob)} bytes, offset 0)")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at offset 0")
    expected = _HEADER.size + 8 * rows * cols
    if len(blob) < expected:
        raise FormatError(
            f"{source}: truncated payload at offset {len(blob)}, expected {expected} bytes"
        )
    if len(blob) > expected:
        raise FormatError(f"{source}: {len(blob) - expected} trailing bytes after offset {expected}")
    values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    values = values.astype(float).reshape(rows, cols)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FormatError(f"{source}: non-finite value at offset {_HEADER.size + 8 * bad}")
    return values


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_csv_matrix(path, header=False):
    """Parse a numeric CSV; returns ``(matrix, ids)``.

    A first column whose first data cell is not a number is treated as row
    ids (``ids`` is ``None`` otherwise).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise FormatError(f"{path}: empty matrix (no data rows)")

    has_ids = not _is_number(rows[0][1][0].strip())
    width = len(rows[0][1])
    ids = [] if has_ids else None
    values = []
    for line, row in rows:
        if len(row) != width:
            raise FormatError(f"{path}:{line}: expected {width} fields, found {len(row)}")
        cells = row[1:] if has_ids else row
        if has_ids:
            ids.append(row[0].strip())
        parsed = []
        for col, cell in enumerate(cells, start=2 if has_ids else 1):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"{path}:{line}: non-numeric cell {cell!r} in column {col}") from None
            if not np.isfinite(v):
                raise FormatError(f"{path}:{line}: non-finite value {cell!r} in column {col}")
            parsed.append(v)
        values.append(parsed)
    matrix = np.array(values, dtype=float)
    if matrix.shape[1] == 0:
        raise FormatError(f"{path}: no numeric columns")
    return matrix, ids


def load_matrix_with_ids(path, fmt=None, header=False):
    """Load a matrix and any row ids stored with it (CSV only)."""
    path = Path(path)
    if _format_for(path, fmt) == "bin":
        return matrix_from_bytes(path.read_bytes(), str(path)), None
    return read_csv_matrix(path, header)


def load_matrix(path, fmt=None, header=False) -> np.ndarray:
    """Load a matrix from CSV or the binary layout (chosen by ``fmt`` or extension)."""
    return load_matrix_with_ids(path, fmt, header)[0]


def matrix_to_csv(matrix, ids=None, header=None) -> str:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for i, row in enumerate(matrix):
        cells = [repr(float(v)) for v in row]
        writer.writerow(([ids[i]] if ids is not None else []) + cells)
    return buf.getvalue()


def save_matrix(path, matrix, fmt=None, ids=None):
    """Write a matrix; CSV output keeps round-trip precision (17 significant digits)."""
    path = Path(path)
    if _format_for(path, fmt) == "bin":
        path.write_bytes(matrix_to_bytes(matrix))
    else:
        path.write_text(matrix_to_csv(matrix, ids))


def load_atlas(path) -> AtlasMap:
    """Read a ``dim_index,region_label`` CSV (header row optional)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if rows and not rows[0][1][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    if not rows:
        raise FormatError(f"{path}: atlas has no rows")
    labels = {}
    for line, row in rows:
        if len(row) != 2:
            raise FormatError(f"{path}:{line}: expected 2 fields (dim_index, region_label)")
        try:
            dim = int(row[0])
        except ValueError:
            raise FormatError(f"{path}:{line}: dimension index {row[0]!r} is not an integer") from None
        if dim in labels:
            raise FormatError(f"{path}:{line}: duplicate dimension index {dim}")
        labels[dim] = row[1].strip()
    missing = sorted(set(range(len(labels))) - set(labels))
    if missing or min(labels) < 0:
        raise FormatError(f"{path}: dimension indices must cover 0..{len(labels) - 1}; missing {missing[:5]}")
    return AtlasMap.from_labels([labels[d] for d in range(len(labels))])


def save_atlas(path, atlas: AtlasMap):
    lines = ["dim_index,region_label"]
    lines += [f"{d},{atlas.region_labels[r]}" for d, r in enumerate(atlas.dim_to_region)]
    Path(path).write_text("\n".join(lines) + "\n")


def _embed(matrix) -> dict:
    return {"encoding": "base64", "data": base64.b64encode(matrix_to_bytes(matrix)).decode("ascii")}


def model_to_json(model) -> str:
    """Serialize a :class:`MixtureModel` or :class:`RidgeModel` to a JSON string."""
    if isinstance(model, MixtureModel):
        k, m, n = model.weights.shape
        manifest = {
            "format_version": MODEL_FORMAT_VERSION,
            "type": "mixture",
            "k": k,
            "n": n,
            "m": m,
            "variance_floor": model.variance_floor,
            "matrices": {
                "weights": _embed(model.weights.reshape(k * m, n)),
                "variances": _embed(model.variances),
                "gating": _embed(model.gating),
            },
        }
    elif isinstance(model, RidgeModel):
        m, n = model.weights.shape
        manifest = {
            "format_version": MODEL_FORMAT_VERSION,
            "type": "ridge",
            "n": n,
            "m": m,
            "lambda": model.lam,
            "matrices": {"weights": _embed(model.weights)},
        }
    else:
        raise ModelFormatError(f"cannot serialize {type(model).__name__}")
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def save_model(path, model):
    Path(path).write_text(model_to_json(model))


def _matrix(manifest, name, base: Path, shape):
    try:
        entry = manifest["matrices"][name]
    except (KeyError, TypeError):
        raise ModelFormatError(f"model file lacks matrix {name!r}") from None
    try:
        if "file" in entry:
            blob = (base / entry["file"]).read_bytes()
        elif entry.get("encoding") == "base64":
            blob = base64.b64decode(entry["data"], validate=True)
        else:
            raise ModelFormatError(f"matrix {name!r} has no data or file reference")
        arr = matrix_from_bytes(blob, f"matrix {name!r}")
    except (OSError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"matrix {name!r}: {exc}") from exc
    if arr.shape != shape:
        raise ModelFormatError(f"matrix {name!r} has shape {arr.shape}, manifest says {shape}")
    return arr


def model_from_json(text: str, base_dir="."):
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ModelFormatError("model manifest must be a JSON object")
    version = manifest.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION!r})")
    base = Path(base_dir)
    kind = manifest.get("type")
    try:
        if kind == "mixture":
            k, n, m = int(manifest["k"]), int(manifest["n"]), int(manifest["m"])
            floor = float(manifest["variance_floor"])
            weights = _matrix(manifest, "weights", base, (k * m, n)).reshape(k, m, n)
            variances = _matrix(manifest, "variances", base, (k, m))
            gating = _matrix(manifest, "gating", base, (k, n))
            if np.any(variances < floor):
                raise ModelFormatError(f"variances below the variance floor {floor:g}")
            return MixtureModel(weights, variances, gating, floor)
        if kind == "ridge":
            n, m = int(manifest["n"]), int(manifest["m"])
            weights = _matrix(manifest, "weights", base, (m, n))
            return RidgeModel(weights, float(manifest["lambda"]))
    except KeyError as exc:
        raise ModelFormatError(f"model manifest lacks field {exc}") from None
    except ModelFormatError:
        raise
    except MixRegError as exc:
        raise ModelFormatError(f"model violates an invariant: {exc}") from exc
    raise ModelFormatError(f"unknown model type {kind!r}")


def load_model(path):
    """Load a mixture or ridge model, dispatching on the manifest's type tag."""
    path = Path(path)
    return model_from_json(path.read_text(), path.parent)
