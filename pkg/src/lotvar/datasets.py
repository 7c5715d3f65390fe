"""Dataset manifests and CSV (de)serialization.

On-disk layout: a JSON manifest references per-element CSV files. Measures
are CSVs with header ``w,x1,...,xd``; networks add a square edges CSV;
images are raw intensity grids that parse into pixel-coordinate measures.
Floats are written with shortest round-trip repr, so emit(parse(...)) is
bit-exact for finite doubles.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ParseError
from .measures import (
    EmpiricalMeasure,
    MeasureNetwork,
    validate_measure,
    validate_network,
)

FORMAT_VERSION = 1
KINDS = ("measure", "network", "image")


@dataclass(frozen=True)
class ManifestElement:
    id: str
    kind: str
    path: str
    edges: Optional[str] = None
    group: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    format_version: int
    ambient_dim: int
    elements: List[ManifestElement]
    normalize: bool = False


@dataclass(frozen=True)
class ParsedDataset:
    manifest: DatasetManifest
    elements: list = field(default_factory=list)

    @property
    def ids(self):
        return [el.id for el in self.manifest.elements]

    @property
    def groups(self):
        return [el.group if el.group is not None else el.id for el in self.manifest.elements]


def _float_cells(line: str, path, lineno) -> List[float]:
    out = []
    for cell in line.split(","):
        try:
            out.append(float(cell))
        except ValueError:
            raise ParseError(f"not a number: {cell.strip()!r}", path, lineno) from None
    return out


def read_measure_csv(path, ambient_dim: int, normalize: bool) -> EmpiricalMeasure:
    """Read a ``w,x1,...,xd`` CSV into a validated measure."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ParseError(str(exc), path) from None
    if not lines:
        raise ParseError("empty measure file", path)
    header = [c.strip() for c in lines[0].split(",")]
    expected = ["w"] + [f"x{i + 1}" for i in range(ambient_dim)]
    if header != expected:
        raise ParseError(
            f"header {header} != expected {expected}", path, 1
        )
    rows = [_float_cells(ln, path, i + 2) for i, ln in enumerate(lines[1:])]
    for i, row in enumerate(rows):
        if len(row) != ambient_dim + 1:
            raise ParseError(
                f"expected {ambient_dim + 1} columns, got {len(row)}", path, i + 2
            )
    arr = np.array(rows, dtype=np.float64)
    return validate_measure(arr[:, 0], arr[:, 1:], renormalize=normalize)


def read_edges_csv(path, n: int) -> np.ndarray:
    """Read an n x n edge matrix (no header)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ParseError(str(exc), path) from None
    rows = [_float_cells(ln, path, i + 1) for i, ln in enumerate(lines)]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ParseError(f"edge matrix must be {n}x{n}", path)
    return np.array(rows, dtype=np.float64)


def read_image_csv(path) -> EmpiricalMeasure:
    """Read an intensity grid; nonzero pixels become weighted atoms at their
    (row, column) coordinates, intensities normalized to total mass 1."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ParseError(str(exc), path) from None
    rows = [_float_cells(ln, path, i + 1) for i, ln in enumerate(lines)]
    width = len(rows[0]) if rows else 0
    if width == 0 or any(len(r) != width for r in rows):
        raise ParseError("image grid must be rectangular", path)
    img = np.array(rows, dtype=np.float64)
    ii, jj = np.nonzero(img)
    if ii.size == 0:
        raise ParseError("image has no nonzero pixels", path)
    pts = np.stack([ii, jj], axis=1).astype(np.float64)
    return validate_measure(img[ii, jj], pts, renormalize=True)


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(str(exc), path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path) from None
    for key in ("format_version", "ambient_dim", "elements"):
        if key not in raw:
            raise ParseError(f"manifest missing key {key!r}", path)
    if raw["format_version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {raw['format_version']}", path)
    elements = []
    seen = set()
    for i, el in enumerate(raw["elements"]):
        for key in ("id", "kind", "path"):
            if key not in el:
                raise ParseError(f"element {i} missing key {key!r}", path)
        if el["kind"] not in KINDS:
            raise ParseError(f"element {el['id']!r} has unknown kind {el['kind']!r}", path)
        if el["id"] in seen:
            raise ParseError(f"duplicate element id {el['id']!r}", path)
        seen.add(el["id"])
        if el["kind"] == "network" and "edges" not in el:
            raise ParseError(f"network element {el['id']!r} missing 'edges'", path)
        elements.append(
            ManifestElement(
                id=el["id"],
                kind=el["kind"],
                path=el["path"],
                edges=el.get("edges"),
                group=el.get("group"),
            )
        )
    kinds = {el.kind for el in elements}
    if len(kinds) > 1:
        raise ParseError(f"mixed element kinds {sorted(kinds)} in one manifest", path)
    return DatasetManifest(
        format_version=raw["format_version"],
        ambient_dim=int(raw["ambient_dim"]),
        elements=elements,
        normalize=bool(raw.get("normalize", False)),
    )


def load_dataset(manifest_path) -> ParsedDataset:
    """Parse a manifest and every file it references into validated objects."""
    manifest = load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for el in manifest.elements:
        path = os.path.join(root, el.path)
        if el.kind == "measure":
            out.append(read_measure_csv(path, manifest.ambient_dim, manifest.normalize))
        elif el.kind == "image":
            if manifest.ambient_dim != 2:
                raise ParseError("image elements require ambient_dim = 2", manifest_path)
            out.append(read_image_csv(path))
        else:
            base = read_measure_csv(path, manifest.ambient_dim, manifest.normalize)
            edges = read_edges_csv(os.path.join(root, el.edges), base.n)
            out.append(validate_network(base.weights, base.points, edges))
    return ParsedDataset(manifest=manifest, elements=out)


def parse_dataset(manifest_path) -> list:
    """Validated measures or networks, in manifest order."""
    return load_dataset(manifest_path).elements


def _fmt(x: float) -> str:
    return repr(float(x))


def write_measure_csv(path, measure: EmpiricalMeasure) -> None:
    d = measure.dim
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("w," + ",".join(f"x{i + 1}" for i in range(d)) + "\n")
        for w, p in zip(measure.weights, measure.points):
            fh.write(_fmt(w) + "," + ",".join(_fmt(v) for v in p) + "\n")


def write_edges_csv(path, edges) -> None:
    edges = np.asarray(edges)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in edges:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_matrix_csv(path_or_handle, matrix, header: Optional[List[str]] = None) -> None:
    matrix = np.asarray(matrix)
    own = isinstance(path_or_handle, (str, os.PathLike))
    fh = open(path_or_handle, "w", encoding="utf-8", newline="\n") if own else path_or_handle
    try:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(matrix):
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def write_manifest(path, elements: List[ManifestElement], ambient_dim: int, normalize: bool = False) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "ambient_dim": ambient_dim,
        "normalize": normalize,
        "elements": [
            {
                k: v
                for k, v in (
                    ("id", el.id),
                    ("kind", el.kind),
                    ("path", el.path),
                    ("edges", el.edges),
                    ("group", el.group),
                )
                if v is not None
            }
            for el in elements
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_dataset(directory, parsed: ParsedDataset, manifest_name: str = "manifest.json") -> str:
    """Write a parsed dataset back to disk; inverse of :func:`load_dataset`."""
    os.makedirs(directory, exist_ok=True)
    elements = []
    for el, obj in zip(parsed.manifest.elements, parsed.elements):
        if isinstance(obj, MeasureNetwork):
            node_path = f"{el.id}_nodes.csv"
            edge_path = f"{el.id}_edges.csv"
            write_measure_csv(os.path.join(directory, node_path), obj.base)
            write_edges_csv(os.path.join(directory, edge_path), obj.edges)
            elements.append(
                ManifestElement(el.id, "network", node_path, edges=edge_path, group=el.group)
            )
        else:
            node_path = f"{el.id}.csv"
            write_measure_csv(os.path.join(directory, node_path), obj)
            elements.append(ManifestElement(el.id, "measure", node_path, group=el.group))
    out = os.path.join(directory, manifest_name)
    write_manifest(out, elements, parsed.manifest.ambient_dim, normalize=False)
    return out
