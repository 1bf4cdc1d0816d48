"""Point-cloud files, model normalisation and synthetic corruption.

Random draws use ``numpy.random.Generator(PCG64(seed))``; Gaussian noise is
``Generator.standard_normal``, so corrupted clouds are reproducible for a
given seed and numpy's stable PCG64 stream.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class PointCloudParseError(ValueError):
    """Malformed point-cloud input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.reason = message
        self.offset = offset


class PlyParseError(PointCloudParseError):
    pass


class CsvParseError(PointCloudParseError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[1] if pts.ndim == 2 and pts.shape[1] in (2, 3) else 3)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError("points must be an (N, 2) or (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        labels = None
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (pts.shape[0],):
                raise ValueError("labels need one entry per point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]


# --- PLY -------------------------------------------------------------------

_PLY_TYPES = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}
_INT_CODES = set("bBhHiI")
_ENDIAN = {"binary_little_endian": "<", "binary_big_endian": ">"}


@dataclass
class _Element:
    name: str
    count: int
    # (name, struct code) or (name, (count code, item code)) for list properties
    props: list


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyParseError("missing 'ply' magic", 0)
    end = re.search(rb"(?:\r\n|\n|\r)end_header[ \t]*(?:\r\n|\n|\r)", data)
    if end is None:
        raise PlyParseError("header has no end_header line", len(data))
    body_start = end.end()
    fmt = None
    elements: list[_Element] = []
    for m in re.finditer(rb"[^\r\n]*", data[: end.start()]):
        raw, line_at = m.group(0), m.start()
        try:
            words = raw.decode("ascii").split()
        except UnicodeDecodeError:
            raise PlyParseError("non-ASCII byte in header", line_at) from None
        if not words or words[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        key = words[0]
        if key == "format":
            if len(words) != 3 or words[1] not in ("ascii", *_ENDIAN):
                raise PlyParseError(f"unsupported format line {raw!r}", line_at)
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyParseError(f"bad element line {raw!r}", line_at)
            elements.append(_Element(words[1], int(words[2]), []))
        elif key == "property":
            if not elements:
                raise PlyParseError("property before any element", line_at)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PlyParseError(f"unsupported list property types {raw!r}", line_at)
                if _PLY_TYPES[words[2]] not in _INT_CODES:
                    raise PlyParseError("list count type must be integral", line_at)
                elements[-1].props.append((words[4], (_PLY_TYPES[words[2]], _PLY_TYPES[words[3]])))
            elif len(words) == 3:
                if words[1] not in _PLY_TYPES:
                    raise PlyParseError(f"unsupported property type {words[1]!r}", line_at)
                elements[-1].props.append((words[2], _PLY_TYPES[words[1]]))
            else:
                raise PlyParseError(f"bad property line {raw!r}", line_at)
        else:
            raise PlyParseError(f"unknown header keyword {key!r}", line_at)
    if fmt is None:
        raise PlyParseError("header has no format line", 0)
    return fmt, elements, body_start


def _vertex_columns(el: _Element, offset: int) -> list[int]:
    names = [p[0] for p in el.props]
    cols = []
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PlyParseError(f"vertex element lacks property {axis!r}", offset)
        i = names.index(axis)
        if isinstance(el.props[i][1], tuple):
            raise PlyParseError(f"vertex property {axis!r} is a list", offset)
        cols.append(i)
    return cols


def _ascii_lines(data: bytes, start: int):
    """Yield (offset, tokens) for non-blank body lines."""
    for m in re.finditer(rb"[^\r\n]*(?:\r\n|\n|\r|$)", data[start:]):
        if not m.group(0):
            break
        tokens = m.group(0).split()
        if tokens:
            yield start + m.start(), tokens


def _parse_ascii_body(data, elements, body_start):
    lines = _ascii_lines(data, body_start)
    for el in elements:
        if el.name == "vertex":
            cols = _vertex_columns(el, body_start)
            scalar_only = all(not isinstance(p[1], tuple) for p in el.props)
            out = []
            for i in range(el.count):
                try:
                    at, tokens = next(lines)
                except StopIteration:
                    raise PlyParseError(f"truncated body: vertex {i} of {el.count} missing", len(data)) from None
                if scalar_only and len(tokens) != len(el.props):
                    raise PlyParseError(
                        f"vertex {i} has {len(tokens)} values, expected {len(el.props)}", at
                    )
                if len(tokens) < len(el.props):
                    raise PlyParseError(f"vertex {i} has too few values", at)
                try:
                    xyz = [float(tokens[c]) for c in cols]
                except ValueError:
                    raise PlyParseError(f"non-numeric coordinate in vertex {i}", at) from None
                if not np.all(np.isfinite(xyz)):
                    raise PlyParseError(f"non-finite coordinate in vertex {i}", at)
                out.append(xyz)
            return np.array(out, dtype=float).reshape(-1, 3)
        for _ in range(el.count):
            if next(lines, None) is None:
                raise PlyParseError(f"truncated body in element {el.name!r}", len(data))
    raise PlyParseError("no vertex element", body_start)


def _parse_binary_body(data, elements, body_start, endian):
    pos = body_start
    for el in elements:
        if all(not isinstance(p[1], tuple) for p in el.props):
            dtype = np.dtype([(f"f{i}", endian + p[1]) for i, p in enumerate(el.props)])
            need = dtype.itemsize * el.count
            if el.name == "vertex":
                cols = _vertex_columns(el, pos)
                if len(data) - pos < need:
                    got = (len(data) - pos) // max(dtype.itemsize, 1)
                    raise PlyParseError(
                        f"truncated body: vertex {got} of {el.count} incomplete",
                        len(data),
                    )
                rec = np.frombuffer(data, dtype=dtype, count=el.count, offset=pos)
                out = np.column_stack([rec[f"f{c}"].astype(float) for c in cols]) if el.count else np.empty((0, 3))
                bad = np.flatnonzero(~np.all(np.isfinite(out), axis=1))
                if bad.size:
                    raise PlyParseError(f"non-finite coordinate in vertex {bad[0]}", pos + bad[0] * dtype.itemsize)
                return out
            if len(data) - pos < need:
                raise PlyParseError(f"truncated body in element {el.name!r}", len(data))
            pos += need
            continue
        if el.name == "vertex":
            raise PlyParseError("list properties on the vertex element are not supported", pos)
        for _ in range(el.count):
            for _, code in el.props:
                if isinstance(code, tuple):
                    csize = struct.calcsize(code[0])
                    if len(data) - pos < csize:
                        raise PlyParseError(f"truncated list in element {el.name!r}", pos)
                    (cnt,) = struct.unpack_from(endian + code[0], data, pos)
                    if cnt < 0:
                        raise PlyParseError("negative list length", pos)
                    pos += csize + cnt * struct.calcsize(code[1])
                else:
                    pos += struct.calcsize(code)
                if pos > len(data):
                    raise PlyParseError(f"truncated body in element {el.name!r}", len(data))
    raise PlyParseError("no vertex element", body_start)


def parse_ply(data: bytes) -> PointCloud:
    """Vertex positions (x, y, z) of an ASCII or binary PLY file, in file order.

    Faces and other elements are skipped.  Every failure raises
    ``PlyParseError`` with the byte offset of the offending input.
    """
    data = bytes(data)
    fmt, elements, body_start = _parse_header(data)
    if fmt == "ascii":
        pts = _parse_ascii_body(data, elements, body_start)
    else:
        pts = _parse_binary_body(data, elements, body_start, _ENDIAN[fmt])
    return PointCloud(pts.reshape(-1, 3))


def serialize_ply(cloud: PointCloud, binary: bool = False) -> bytes:
    pts = cloud.points
    if cloud.n == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    ).encode("ascii")
    if binary:
        return header + pts.astype("<f8").tobytes()
    body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist())
    return header + body.encode("ascii")


# --- CSV -------------------------------------------------------------------

def parse_csv(data: bytes) -> PointCloud:
    """One point per line, two or three comma-separated reals; blank lines ignored."""
    data = bytes(data)
    rows = []
    width = None
    pos = 0
    for raw in data.splitlines(keepends=True):
        at = pos
        pos += len(raw)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError as exc:
            raise CsvParseError("non-ASCII byte", at + exc.start) from None
        if not line:
            continue
        fields = line.split(",")
        if len(fields) not in (2, 3):
            raise CsvParseError(f"expected 2 or 3 fields, got {len(fields)}", at)
        if width is not None and len(fields) != width:
            raise CsvParseError(f"row has {len(fields)} fields, earlier rows have {width}", at)
        width = len(fields)
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise CsvParseError("non-numeric field", at) from None
        if not all(np.isfinite(vals)):
            raise CsvParseError("non-finite value", at)
        rows.append(vals)
    if not rows:
        return PointCloud(np.empty((0, 3)))
    return PointCloud(np.array(rows))


def serialize_csv(cloud: PointCloud) -> bytes:
    return "".join(",".join(repr(v) for v in row) + "\n" for row in cloud.points.tolist()).encode("ascii")


def load_cloud(path) -> PointCloud:
    """Dispatch on file suffix (``.ply`` or ``.csv``)."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if path.lower().endswith(".ply"):
        return parse_ply(data)
    if path.lower().endswith(".csv"):
        return parse_csv(data)
    raise ValueError(f"unsupported point-cloud file type: {path}")


# --- model preparation -----------------------------------------------------

def normalize_model(cloud: PointCloud) -> PointCloud:
    """Centroid to the origin, then uniform scaling so that max |y| = 1."""
    if len(cloud) == 0:
        raise ValueError("cannot normalise an empty cloud")
    pts = cloud.points - cloud.points.mean(axis=0)
    extent = np.abs(pts[:, 1]).max()
    if not extent > 0:
        raise ValueError("cloud has zero extent along y")
    return PointCloud(pts / extent, cloud.labels)


@dataclass(frozen=True)
class CorruptionSpec:
    delta: float = 0.0
    # (axis, bound): points with coordinate[axis] >= bound become outliers
    outlier_predicate: tuple[int, float] | None = None
    outlier_translation: tuple | None = None
    subsample_n: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        if (self.outlier_predicate is None) != (self.outlier_translation is None):
            raise ValueError("outlier predicate and translation go together")
        if self.subsample_n is not None and self.subsample_n < 1:
            raise ValueError("subsample_n must be positive")


class Corruption(NamedTuple):
    observations: PointCloud
    outlier_indices: list


def corrupt(cloud: PointCloud, spec: CorruptionSpec) -> Corruption:
    """Subsample, add per-coordinate Gaussian noise, then shift predicate points.

    Correspondence is by position; ``observations.labels`` holds the index of
    each observation's source point in ``cloud``.  The outlier predicate is
    evaluated on the clean input coordinates.
    """
    rng = np.random.default_rng(spec.seed)
    N = len(cloud)
    idx = np.arange(N)
    if spec.subsample_n is not None:
        if spec.subsample_n > N:
            raise ValueError(f"cannot subsample {spec.subsample_n} of {N} points")
        idx = np.sort(rng.choice(N, size=spec.subsample_n, replace=False))
    clean = cloud.points[idx]
    obs = clean + spec.delta * rng.standard_normal(clean.shape)
    outliers: list = []
    if spec.outlier_predicate is not None:
        axis, bound = spec.outlier_predicate
        mask = clean[:, axis] >= bound
        obs[mask] += np.asarray(spec.outlier_translation, dtype=float)
        outliers = [int(i) for i in np.flatnonzero(mask)]
    return Corruption(PointCloud(obs, idx), outliers)


def _ellipsoid_surface(rng, count, center, radii):
    v = rng.standard_normal((count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(center) + v * np.asarray(radii)


def synthetic_bunny(n_points: int = 944, seed: int = 0) -> PointCloud:
    """Asymmetric stand-in for the Stanford bunny: body, head and two upright ears.

    After ``normalize_model`` the ears are exactly the points with ``y >= 0.6``.
    """
    rng = np.random.default_rng(seed)
    n_ear = max(1, round(0.076 * n_points))
    n_head = round(0.21 * n_points)
    n_body = n_points - n_head - 2 * n_ear
    parts = [
        _ellipsoid_surface(rng, n_body, (0.0, 0.0, 0.0), (1.0, 0.7, 0.8)),
        _ellipsoid_surface(rng, n_head, (0.8, 0.6, 0.1), (0.45, 0.42, 0.4)),
        _ellipsoid_surface(rng, n_ear, (0.75, 1.7, 0.2), (0.08, 0.25, 0.1)),
        _ellipsoid_surface(rng, n_ear, (0.6, 1.65, -0.15), (0.08, 0.25, 0.1)),
    ]
    return PointCloud(np.vstack(parts))
