"""File formats: binary cubes, run configs, result CSVs, covariance blobs.

Every CSV has a header row and prints floats with 9 significant digits.
"""

from __future__ import annotations

import csv
import dataclasses
import struct
from pathlib import Path

import numpy as np

from scmunmix.core import HsiCube, ScmConfig, ScmError, ShapeError

CUBE_MAGIC = b"SCMC"
CUBE_VERSION = 1
_CUBE_HEADER = struct.Struct("<4sHIII")
COV_INDEX = "covariances.idx"


def fmt(x) -> str:
    return f"{float(x):.9g}"


# --------------------------------------------------------------------------
# cubes

def write_cube(path, cube: HsiCube) -> None:
    """Header then float32 LE samples, raster row-major with bands fastest."""
    payload = np.ascontiguousarray(cube.data, dtype="<f4")
    with Path(path).open("wb") as fh:
        fh.write(_CUBE_HEADER.pack(CUBE_MAGIC, CUBE_VERSION, cube.height, cube.width, cube.bands))
        fh.write(payload.tobytes())


def read_cube(path) -> HsiCube:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CUBE_HEADER.size:
        raise ScmError(f"{path}: truncated cube header")
    magic, version, h, w, b = _CUBE_HEADER.unpack_from(raw)
    if magic != CUBE_MAGIC:
        raise ScmError(f"{path}: bad magic {magic!r}, expected {CUBE_MAGIC!r}")
    if version != CUBE_VERSION:
        raise ScmError(f"{path}: unsupported cube version {version}")
    expected = h * w * b * 4
    body = raw[_CUBE_HEADER.size:]
    if len(body) != expected:
        raise ScmError(f"{path}: payload has {len(body)} bytes, header implies {expected}")
    data = np.frombuffer(body, dtype="<f4").astype(float).reshape(h * w, b)
    return HsiCube(h, w, b, data)


_ENVI_DTYPES = {4: "f4", 5: "f8"}


def read_envi(header_path, data_path=None) -> HsiCube:
    """Minimal ENVI reader: BSQ/BIL/BIP, data type 4 or 5, either byte order."""
    header_path = Path(header_path)
    text = header_path.read_text()
    if not text.lstrip().startswith("ENVI"):
        raise ScmError(f"{header_path}: line 1: not an ENVI header")
    fields = {}
    key, buf = None, []
    for line in text.splitlines()[1:]:
        if key is not None:
            buf.append(line)
            if "}" in line:
                fields[key] = " ".join(buf)
                key, buf = None, []
            continue
        if "=" not in line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        if v.startswith("{") and "}" not in v:
            key, buf = k.lower(), [v]
        else:
            fields[k.lower()] = v
    try:
        w, h, b = (int(fields[k]) for k in ("samples", "lines", "bands"))
        dtype = _ENVI_DTYPES[int(fields["data type"])]
    except KeyError as exc:
        raise ScmError(f"{header_path}: missing or unsupported field {exc}") from exc
    order = ">" if int(fields.get("byte order", "0")) == 1 else "<"
    interleave = fields.get("interleave", "bsq").lower()
    offset = int(fields.get("header offset", "0"))
    if data_path is None:
        data_path = header_path.with_suffix("")
        if not data_path.exists():
            for suffix in (".img", ".dat", ".raw"):
                if header_path.with_suffix(suffix).exists():
                    data_path = header_path.with_suffix(suffix)
                    break
    raw = np.fromfile(data_path, dtype=order + dtype, offset=offset)
    if raw.size != h * w * b:
        raise ScmError(f"{data_path}: expected {h * w * b} samples, found {raw.size}")
    if interleave == "bsq":
        img = raw.reshape(b, h, w).transpose(1, 2, 0)
    elif interleave == "bil":
        img = raw.reshape(h, b, w).transpose(0, 2, 1)
    elif interleave == "bip":
        img = raw.reshape(h, w, b)
    else:
        raise ScmError(f"{header_path}: unknown interleave {interleave!r}")
    return HsiCube(h, w, b, img.reshape(h * w, b).astype(float))


# --------------------------------------------------------------------------
# run configs

def _parse_value(name: str, text: str, kind):
    if name == "segmentation":
        if text.lower() == "none":
            return None
        return tuple(int(t) for t in text.replace(",", " ").split())
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def parse_config_values(text: str, source: str = "<config>") -> dict:
    """The keys actually present in a config text, with typed values."""
    kinds = {f.name: f.type for f in dataclasses.fields(ScmConfig)}
    casts = {"int": int, "float": float, "bool": bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScmError(f"{source}: line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ScmError(f"{source}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise ScmError(f"{source}: line {lineno}: duplicate key {key!r}")
        kind = casts.get(str(kinds[key]), str)
        try:
            values[key] = _parse_value(key, val, kind)
        except ValueError as exc:
            raise ScmError(f"{source}: line {lineno}: bad value for {key}: {exc}") from exc
    return values


def parse_config(text: str, source: str = "<config>", base: ScmConfig | None = None
                 ) -> ScmConfig:
    """``key = value`` lines; '#' starts a comment; unknown keys are rejected.

    Keys missing from the text keep their value in ``base`` (defaults if None).
    """
    values = parse_config_values(text, source)
    try:
        return (base or ScmConfig()).with_(**values)
    except ScmError as exc:
        raise ScmError(f"{source}: {exc}") from exc


def format_config(config: ScmConfig) -> str:
    lines = []
    for name in ScmConfig.field_names():
        v = getattr(config, name)
        if name == "segmentation":
            s = "none" if v is None else " ".join(str(int(t)) for t in v)
        elif isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{name} = {s}")
    return "\n".join(lines) + "\n"


def read_config(path, base: ScmConfig | None = None) -> ScmConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path), base)


def write_config(path, config: ScmConfig) -> None:
    Path(path).write_text(format_config(config))


# --------------------------------------------------------------------------
# CSV tables

def write_csv_stream(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        write_csv_stream(fh, header, rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ScmError(f"{path}: empty CSV")
    return rows[0], [r for r in rows[1:] if r]


def _float_matrix(path, header, rows, ncols, skip=0) -> np.ndarray:
    out = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != ncols:
            raise ScmError(f"{path}: line {lineno}: expected {ncols} columns, got {len(row)}")
        try:
            out.append([float(c) for c in row[skip:]])
        except ValueError as exc:
            raise ScmError(f"{path}: line {lineno}: {exc}") from exc
    return np.array(out, dtype=float).reshape(len(out), ncols - skip)


def write_endmembers(path, R: np.ndarray, names=None) -> None:
    """One row per band: ``band`` then one column per endmember."""
    R = np.asarray(R, dtype=float)
    names = names or [f"endmember_{j + 1}" for j in range(R.shape[0])]
    write_csv(path, ["band"] + list(names), ([i] + list(col) for i, col in enumerate(R.T)))


def read_endmembers(path) -> tuple[np.ndarray, list[str]]:
    """Inverse of ``write_endmembers``: the M x B matrix and the column names."""
    header, rows = read_csv(path)
    if not header or header[0] != "band":
        raise ScmError(f"{path}: line 1: first column must be 'band'")
    return _float_matrix(path, header, rows, len(header), skip=1).T, header[1:]


def write_abundances(path, A: np.ndarray) -> None:
    A = np.asarray(A, dtype=float)
    write_csv(path, [f"endmember_{j + 1}" for j in range(A.shape[1])], A.tolist())


def read_abundances(path) -> np.ndarray:
    header, rows = read_csv(path)
    return _float_matrix(path, header, rows, len(header))


# --------------------------------------------------------------------------
# covariances

def write_covariances(directory, covariances, noise_std: float) -> None:
    """One float32 LE blob per endmember (B x B row-major) plus a text index."""
    directory = Path(directory)
    lines = ["# endmember file bands", f"noise_std = {fmt(noise_std)}"]
    for j, c in enumerate(covariances, start=1):
        c = np.asarray(c, dtype="<f4")
        name = f"covariance_{j}.bin"
        (directory / name).write_bytes(np.ascontiguousarray(c).tobytes())
        lines.append(f"{j} {name} {c.shape[0]}")
    (directory / COV_INDEX).write_text("\n".join(lines) + "\n")


def read_covariances(directory) -> tuple[list[np.ndarray], float]:
    directory = Path(directory)
    index = directory / COV_INDEX
    covs, noise = [], None
    for lineno, line in enumerate(index.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("noise_std"):
            noise = float(line.split("=", 1)[1])
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ScmError(f"{index}: line {lineno}: expected 'endmember file bands'")
        b = int(parts[2])
        blob = np.frombuffer((directory / parts[1]).read_bytes(), dtype="<f4")
        if blob.size != b * b:
            raise ShapeError(f"{parts[1]} samples", b * b, blob.size)
        covs.append(blob.astype(float).reshape(b, b))
    if noise is None:
        raise ScmError(f"{index}: missing noise_std line")
    return covs, noise


# --------------------------------------------------------------------------
# key = value text (metadata, diagnostics)

def write_kv(path, mapping: dict) -> None:
    lines = []
    for k, v in mapping.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (float, np.floating)):
            v = fmt(v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict:
    path = Path(path)
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScmError(f"{path}: line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out
