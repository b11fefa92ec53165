"""Point-cloud data model and PLY file I/O with color-encoded labels.

A cloud is an ordered array of 3D points (gravity aligned, +z up) with an
optional per-point integer labeling. Point order is significant: the point
index is the deterministic tie-break key used throughout the package.

Labels are written to PLY as RGB colors through an invertible palette
(:func:`label_to_color` / :func:`color_to_label`); label 0 is reserved for
ground / unlabeled points and is the only label that maps to black.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError, PlyError

# Odd multiplier (Knuth's 32-bit golden-ratio constant); odd => invertible
# mod 2^24, so the palette is a bijection on 24-bit label space.
_PALETTE_MULTIPLIER = 2654435761
_LABEL_SPACE = 1 << 24
_PALETTE_INVERSE = pow(_PALETTE_MULTIPLIER % _LABEL_SPACE, -1, _LABEL_SPACE)


def label_to_color(label: int) -> tuple[int, int, int]:
    """Map a non-negative label to a deterministic, injective RGB triple.

    Label 0 (ground/unlabeled) is the only label colored black. Labels must
    be below 2^24.
    """
    if label < 0 or label >= _LABEL_SPACE:
        raise ParameterError(f"label {label} outside palette range [0, 2^24)")
    if label == 0:
        return (0, 0, 0)
    h = (label * _PALETTE_MULTIPLIER) % _LABEL_SPACE
    if h == 0:
        # Unreachable for 0 < label < 2^24 (odd multiplier is a bijection);
        # kept so the "avoid black" remap is explicit.
        h = ((label + 1) * _PALETTE_MULTIPLIER) % _LABEL_SPACE
    return ((h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF)


def color_to_label(rgb: tuple[int, int, int]) -> int:
    """Exact inverse of :func:`label_to_color` (total on 24-bit color space)."""
    r, g, b = rgb
    v = ((int(r) & 0xFF) << 16) | ((int(g) & 0xFF) << 8) | (int(b) & 0xFF)
    if v == 0:
        return 0
    return (v * _PALETTE_INVERSE) % _LABEL_SPACE


def colors_for_labels(labels: np.ndarray) -> np.ndarray:
    """Vectorized palette: (n,) labels -> (n, 3) uint8 colors."""
    labels = np.asarray(labels, dtype=np.uint64)
    if labels.size and labels.max() >= _LABEL_SPACE:
        bad = int(labels.argmax())
        raise ParameterError(f"label {int(labels[bad])} outside palette range [0, 2^24)")
    h = (labels * np.uint64(_PALETTE_MULTIPLIER)) & np.uint64(_LABEL_SPACE - 1)
    h[labels == 0] = 0
    out = np.empty((labels.shape[0], 3), dtype=np.uint8)
    out[:, 0] = (h >> np.uint64(16)) & np.uint64(0xFF)
    out[:, 1] = (h >> np.uint64(8)) & np.uint64(0xFF)
    out[:, 2] = h & np.uint64(0xFF)
    return out


def labels_for_colors(rgb: np.ndarray, mode: str = "palette") -> np.ndarray:
    """Vectorized inverse palette: (n, 3) uint8 colors -> (n,) int64 labels.

    mode="palette" applies the exact palette inverse. mode="distinct" gives
    every unique RGB triple its own label, numbered from 1 in order of first
    appearance by point index, with black reserved for label 0 (for clouds
    whose ground truth uses one arbitrary color per cluster).
    """
    rgb = np.asarray(rgb, dtype=np.uint64)
    codes = (rgb[:, 0] << np.uint64(16)) | (rgb[:, 1] << np.uint64(8)) | rgb[:, 2]
    if mode == "palette":
        labels = (codes * np.uint64(_PALETTE_INVERSE)) & np.uint64(_LABEL_SPACE - 1)
        labels[codes == 0] = 0
        return labels.astype(np.int64)
    if mode == "distinct":
        uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        ids = np.empty(uniq.shape[0], dtype=np.int64)
        next_id = 1
        for pos in order:
            if uniq[pos] == 0:
                ids[pos] = 0
            else:
                ids[pos] = next_id
                next_id += 1
        return ids[inverse]
    raise ParameterError(f"unknown color mode {mode!r} (expected 'palette' or 'distinct')")


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with an optional per-point label array.

    Immutable after construction; the backing arrays are marked read-only so
    a cloud can be shared freely across threads.
    """

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"points must have shape (n, 3), got {pts.shape}")
        finite = np.isfinite(pts).all(axis=1)
        if not finite.all():
            raise DataError(f"non-finite coordinate at point index {int(np.flatnonzero(~finite)[0])}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
            if lab.shape != (pts.shape[0],):
                raise DataError(
                    f"labels length {lab.shape} does not match {pts.shape[0]} points"
                )
            if lab.size and lab.min() < 0:
                raise DataError(f"negative label at point index {int(np.flatnonzero(lab < 0)[0])}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]


_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_INT_TYPES = {"char", "int8", "uchar", "uint8", "short", "int16", "ushort",
              "uint16", "int", "int32", "uint", "uint32"}


def _parse_header(raw: bytes, path: Path):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyError(f"{path}: not a PLY file (missing 'ply'/'end_header')")
    nl = raw.find(b"\n", end)
    if nl < 0:
        raise PlyError(f"{path}: header not terminated by newline")
    header = raw[:nl].decode("ascii", errors="replace").splitlines()
    body = raw[nl + 1:]

    fmt = None
    elements: list[dict] = []
    for line in header[1:]:
        stripped = line.strip()
        if not stripped or stripped.startswith(("comment", "obj_info")):
            continue
        parts = stripped.split()
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"{path}: unsupported format line: {stripped!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"{path}: malformed element line: {stripped!r}")
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise PlyError(f"{path}: property before any element: {stripped!r}")
            if parts[1] == "list":
                elements[-1]["props"].append(("list", tuple(parts[2:])))
            elif len(parts) == 3 and parts[1] in _SCALAR_TYPES:
                elements[-1]["props"].append((parts[1], parts[2]))
            else:
                raise PlyError(f"{path}: malformed property line: {stripped!r}")
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError(f"{path}: unrecognized header line: {stripped!r}")
    if fmt is None:
        raise PlyError(f"{path}: header has no format line")
    return fmt, elements, body


def _vertex_layout(elem: dict, path: Path):
    names, types = [], []
    for type_name, prop_name in elem["props"]:
        if type_name == "list":
            raise PlyError(f"{path}: list property in vertex element is not supported")
        names.append(prop_name)
        types.append(type_name)
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise PlyError(f"{path}: vertex element lacks property {coord!r}")
    return names, types


def load_ply(path, color_mode: str = "palette") -> PointCloud:
    """Read an ascii or binary_little_endian PLY vertex cloud.

    Labels are populated when the vertex element carries an integer ``label``
    property (takes precedence) or red/green/blue colors; colors decode via
    the exact palette inverse, or one-label-per-unique-color when
    ``color_mode="distinct"``. Unknown scalar properties are skipped.
    """
    path = Path(path)
    raw = path.read_bytes()
    fmt, elements, body = _parse_header(raw, path)

    vertex_idx = next((i for i, e in enumerate(elements) if e["name"] == "vertex"), None)
    if vertex_idx is None:
        raise PlyError(f"{path}: no vertex element in header")
    vert = elements[vertex_idx]
    n = vert["count"]
    names, types = _vertex_layout(vert, path)

    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        skip = sum(e["count"] for e in elements[:vertex_idx])
        rows = [ln for ln in lines[skip:] if ln.strip()][:n]
        if len(rows) < n:
            raise PlyError(
                f"{path}: truncated body: header declares {n} vertices, found {len(rows)}"
            )
        if n:
            data = _parse_ascii_rows(rows, len(names), path)
            columns = {name: data[:, i] for i, name in enumerate(names)}
        else:
            columns = {name: np.empty(0) for name in names}
    else:
        dtype = np.dtype([(nm, "<" + _SCALAR_TYPES[tp]) for nm, tp in zip(names, types)])
        offset = 0
        for e in elements[:vertex_idx]:
            for type_name, _ in e["props"]:
                if type_name == "list":
                    raise PlyError(
                        f"{path}: cannot skip element {e['name']!r} with list property"
                    )
            offset += e["count"] * sum(np.dtype(_SCALAR_TYPES[t]).itemsize for t, _ in e["props"])
        need = offset + n * dtype.itemsize
        if len(body) < need:
            raise PlyError(
                f"{path}: truncated body: header declares {n} vertices "
                f"({need - offset} bytes), found {len(body) - offset} bytes"
            )
        rec = np.frombuffer(body, dtype=dtype, count=n, offset=offset)
        columns = {name: rec[name] for name in names}

    points = np.column_stack([
        np.asarray(columns["x"], dtype=np.float64),
        np.asarray(columns["y"], dtype=np.float64),
        np.asarray(columns["z"], dtype=np.float64),
    ]) if n else np.empty((0, 3))
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        raise DataError(f"{path}: non-finite coordinate at point index {int(np.flatnonzero(~finite)[0])}")

    labels = None
    type_of = dict(zip(names, types))
    if "label" in columns and type_of["label"] in _INT_TYPES:
        labels = np.asarray(columns["label"], dtype=np.int64)
        if labels.size and labels.min() < 0:
            raise DataError(f"{path}: negative label at point index {int(labels.argmin())}")
    elif all(c in columns for c in ("red", "green", "blue")):
        rgb = np.column_stack([
            np.asarray(columns["red"]).astype(np.uint8),
            np.asarray(columns["green"]).astype(np.uint8),
            np.asarray(columns["blue"]).astype(np.uint8),
        ])
        labels = labels_for_colors(rgb, mode=color_mode)
    return PointCloud(points, labels)


def _parse_ascii_rows(rows: list[str], ncols: int, path: Path) -> np.ndarray:
    try:
        data = np.loadtxt(io.StringIO("\n".join(rows)), dtype=np.float64, ndmin=2)
    except ValueError:
        data = None
    if data is None or data.shape[1] < ncols:
        for i, row in enumerate(rows):  # slow path only to name the bad line
            fields = row.split()
            if len(fields) < ncols:
                raise PlyError(f"{path}: vertex row {i} has {len(fields)} fields, expected {ncols}")
            try:
                [float(f) for f in fields[:ncols]]
            except ValueError:
                raise PlyError(f"{path}: vertex row {i} is not numeric: {row!r}") from None
        raise PlyError(f"{path}: malformed ascii vertex data")
    return data


def save_ply(cloud: PointCloud, labeling: np.ndarray, path, binary: bool = False) -> None:
    """Write points plus palette colors; byte-exact for a given input and format.

    Binary mode stores coordinates as little-endian doubles, so load_ply
    round-trips them bit-exactly; ascii mode keeps 9 significant digits.
    """
    labeling = np.asarray(labeling, dtype=np.int64)
    if labeling.shape != (cloud.n,):
        raise DataError(f"labeling length {labeling.shape} does not match {cloud.n} points")
    rgb = colors_for_labels(labeling)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {cloud.n}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    path = Path(path)
    if binary:
        rec = np.empty(cloud.n, dtype=np.dtype([
            ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
            ("red", "u1"), ("green", "u1"), ("blue", "u1"),
        ]))
        rec["x"], rec["y"], rec["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
        rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rec.tobytes())
    else:
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([cloud.points, rgb.astype(np.float64)]),
                   fmt="%.9g %.9g %.9g %d %d %d")
        with open(path, "w", newline="\n") as fh:
            fh.write(header)
            fh.write(buf.getvalue())
