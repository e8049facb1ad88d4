"""CSV ingestion and output, flat key = value files, and the ternary SVG."""

from __future__ import annotations

import csv
import math
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, NegativeInput, NotComposition, ParseError, SchemaError
from .simplex import CompositionDataset, as_composition

LOAD_TOL = 1e-6


@dataclass(frozen=True)
class TableSchema:
    x_cols: Sequence[str]
    y_cols: Sequence[str]
    id_col: str | None = None
    close_rows: bool = False

    def __post_init__(self):
        x, y = tuple(self.x_cols), tuple(self.y_cols)
        if not x or not y:
            raise SchemaError("predictor and outcome column lists must be non-empty")
        if set(x) & set(y):
            raise SchemaError(f"columns used as both predictor and outcome: {sorted(set(x) & set(y))}")
        if self.id_col is not None and self.id_col in x + y:
            raise SchemaError(f"id column {self.id_col!r} is also a data column")
        object.__setattr__(self, "x_cols", x)
        object.__setattr__(self, "y_cols", y)

    @classmethod
    def from_strings(cls, x_cols: str, y_cols: str, id_col: str | None = None, close_rows=False):
        split = lambda s: [c.strip() for c in s.split(",") if c.strip()]  # noqa: E731
        return cls(split(x_cols), split(y_cols), id_col or None, close_rows)


def _rows_to_matrix(rows, cols, labels, path, tol, close_rows, side):
    out = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows):
        for j, c in enumerate(cols):
            cell = row[c]
            try:
                out[i, j] = float(cell)
            except (TypeError, ValueError):
                raise ParseError(
                    f"{path}: row {labels[i]} column {c!r}: cannot parse {cell!r} as a number"
                ) from None
            if not math.isfinite(out[i, j]):
                raise ParseError(f"{path}: row {labels[i]} column {c!r}: non-finite value {cell!r}")
        if np.any(out[i] < 0):
            raise NegativeInput(f"{path}: row {labels[i]} has a negative {side} value")
        s = out[i].sum()
        if close_rows:
            if s <= 0:
                raise NotComposition(f"{path}: row {labels[i]} {side} parts are all zero")
            out[i] /= s
        elif abs(s - 1.0) > tol:
            raise NotComposition(f"{path}: row {labels[i]} {side} parts sum to {s!r}, not 1")
        else:
            out[i] = as_composition(out[i], tol)
    return out


def _read_rows(path, cols, id_col):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for c in list(cols) + ([id_col] if id_col else []):
            if c not in header:
                raise SchemaError(f"{path}: missing column {c!r}")
        rows = list(reader)
    labels = [r[id_col] for r in rows] if id_col else [str(i + 1) for i in range(len(rows))]
    return rows, labels


def load_dataset(path, schema: TableSchema, tol: float = LOAD_TOL) -> CompositionDataset:
    """Read paired compositions from a CSV with a header row.

    Rows whose parts sum to within ``tol`` of one are re-closed; rows
    further off are rejected unless ``schema.close_rows`` asks for closure
    (for counts or percentages).
    """
    rows, labels = _read_rows(path, list(schema.x_cols) + list(schema.y_cols), schema.id_col)
    X = _rows_to_matrix(rows, schema.x_cols, labels, path, tol, schema.close_rows, "predictor")
    Y = _rows_to_matrix(rows, schema.y_cols, labels, path, tol, schema.close_rows, "outcome")
    return CompositionDataset(X, Y, labels, schema.x_cols, schema.y_cols)


def load_predictors(path, x_cols, id_col=None, close_rows=False, tol: float = LOAD_TOL):
    """Predictor compositions only, for prediction on new data: ``(X, labels)``."""
    rows, labels = _read_rows(path, x_cols, id_col)
    return _rows_to_matrix(rows, x_cols, labels, path, tol, close_rows, "predictor"), labels


def fmt(v) -> str:
    """Full-precision decimal (17 significant digits, round-trips a double)."""
    return f"{float(v):.17g}"


def write_dataset(path, data: CompositionDataset, id_col: str = "id") -> TableSchema:
    x_names = list(data.x_names or [f"x{j + 1}" for j in range(data.D_s)])
    y_names = list(data.y_names or [f"y{k + 1}" for k in range(data.D_r)])
    labels = data.labels or [str(i + 1) for i in range(data.N)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_col] + x_names + y_names)
        for i in range(data.N):
            w.writerow([labels[i]] + [fmt(v) for v in data.X[i]] + [fmt(v) for v in data.Y[i]])
    return TableSchema(x_names, y_names, id_col)


def write_matrix(path, M, row_names: Sequence[str], col_names: Sequence[str], corner: str = "") -> None:
    M = np.asarray(M, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner] + list(col_names))
        for name, row in zip(row_names, M):
            w.writerow([name] + [fmt(v) for v in row])


def read_matrix(path):
    """Inverse of :func:`write_matrix`: ``(M, row_names, col_names)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty matrix file")
    cols = rows[0][1:]
    names, vals = [], []
    for ln, r in enumerate(rows[1:], start=2):
        names.append(r[0])
        try:
            vals.append([float(v) for v in r[1:]])
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-numeric entry") from None
        if len(vals[-1]) != len(cols):
            raise ParseError(f"{path}: line {ln}: expected {len(cols)} values")
    return np.array(vals), names, cols


def write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# key = value files


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{ln}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{ln}: duplicate key {key!r}")
        out[key] = val
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(), str(path))


def write_kv(path, items: Mapping) -> None:
    lines = []
    for k, v in items.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, (float, np.floating)):
            v = repr(float(v))
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {
        "version.compreg": __version__,
        "version.numpy": np.__version__,
        "version.scipy": scipy.__version__,
        "version.python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# ternary SVG


def ternary_svg(
    points: Mapping[str, Sequence[float]],
    regions: Mapping[str, np.ndarray] | None = None,
    part_names: Sequence[str] = ("1", "2", "3"),
    size: int = 480,
    grid: int = 10,
) -> str:
    """Minimal ternary diagram: frame, gridlines, labelled points, region polygons.

    ``points`` maps labels to 3-part compositions; ``regions`` maps labels
    to polygons already in ternary (x, y) coordinates.
    """
    from .inference import ternary_xy

    pad = 40
    scale = size - 2 * pad
    height = np.sqrt(3) / 2

    def px(xy):
        x, y = xy
        return pad + x * scale, pad + (height - y) * scale

    def poly(pts):
        return " ".join(f"{a:.3f},{b:.3f}" for a, b in (px(p) for p in pts))

    corners = ternary_xy(np.eye(3))
    svg_h = int(height * scale + 2 * pad)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{svg_h}" '
        f'viewBox="0 0 {size} {svg_h}">',
        '<g fill="none" stroke="#ccc" stroke-width="0.5">',
    ]
    for t in range(1, grid):
        f = t / grid
        for k in range(3):
            a = np.zeros(3)
            b = np.zeros(3)
            a[k] = b[k] = f
            a[(k + 1) % 3] = 1 - f
            b[(k + 2) % 3] = 1 - f
            (x1, y1), (x2, y2) = px(ternary_xy(a)), px(ternary_xy(b))
            out.append(f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}"/>')
    out.append("</g>")
    out.append(f'<polygon points="{poly(corners)}" fill="none" stroke="black" stroke-width="1"/>')
    offsets = [(-12, 18), (4, 18), (-4, -8)]
    for (x, y), name, (dx, dy) in zip((px(c) for c in corners), part_names, offsets):
        out.append(f'<text x="{x + dx:.3f}" y="{y + dy:.3f}" font-size="12">{name}</text>')
    for label, reg in (regions or {}).items():
        reg = np.asarray(reg)
        if len(reg) >= 3:
            out.append(
                f'<polygon points="{poly(reg)}" fill="#3b6fb6" fill-opacity="0.25" '
                f'stroke="#3b6fb6" data-row="{label}"/>'
            )
        elif len(reg) == 2:
            (x1, y1), (x2, y2) = px(reg[0]), px(reg[1])
            out.append(
                f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
                f'stroke="#3b6fb6" data-row="{label}"/>'
            )
    for label, comp in points.items():
        x, y = px(ternary_xy(np.asarray(comp, dtype=float)))
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="2.5" fill="black"/>')
        out.append(f'<text x="{x + 4:.3f}" y="{y - 4:.3f}" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


__all__ = [
    "TableSchema",
    "load_dataset",
    "load_predictors",
    "write_dataset",
    "write_matrix",
    "read_matrix",
    "write_table",
    "parse_kv",
    "read_kv",
    "write_kv",
    "ternary_svg",
]
