"""Field and diagnostics I/O: lossless CSV grids, JSON reports.

Field files carry the grid metadata in comment headers and one row per
inside node (indices, coordinates, classification, value).  Values are
written with repr-exact precision so import(export(u)) is bit-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import GridMismatch, ParseError
from .grid import ScalarField

_FMT = "%.17g"


def export_field(field, path):
    dom = field.domain
    d = dom.dim
    flats = dom.inside_flat
    pts = dom.points_of_flat(flats)
    idx = np.empty((len(flats), d), dtype=np.int64)
    rem = flats
    for j in range(d):
        idx[:, j] = rem // dom.strides[j]
        rem = rem - idx[:, j] * dom.strides[j]
    cls = dom.class_flat[flats]
    vals = field.values[flats]
    coord_names = []
    for k in range(dom.n):
        coord_names += [f"x{k + 1}", f"y{k + 1}"]
    with open(path, "w") as fh:
        fh.write("# acma-field v1\n")
        fh.write(f"# n={dom.n} h={_FMT % dom.h}\n")
        fh.write("# lo=" + ",".join(_FMT % v for v in dom.lo) + "\n")
        fh.write("# hi=" + ",".join(_FMT % v for v in dom.hi) + "\n")
        fh.write("# shape=" + ",".join(str(s) for s in dom.shape) + "\n")
        fh.write(
            "# columns: "
            + ",".join([f"i{j + 1}" for j in range(d)] + coord_names
                       + ["class", "value"])
            + "\n"
        )
        for r in range(len(flats)):
            row = (
                [str(idx[r, j]) for j in range(d)]
                + [_FMT % pts[r, j] for j in range(d)]
                + [str(int(cls[r])), _FMT % vals[r]]
            )
            fh.write(",".join(row) + "\n")


def _parse_header(lines):
    meta = {}
    for lineno, line in lines:
        body = line[1:].strip()
        if "=" not in body:
            continue
        for part in body.split():
            if "=" not in part:
                continue
            key, val = part.split("=", 1)
            meta[key] = val
    return meta


def import_field(path, domain):
    """Read a field file onto an existing grid; metadata must match exactly."""
    header, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                header.append((lineno, line))
            else:
                rows.append((lineno, line))
    meta = _parse_header(header)
    if "n" not in meta or "h" not in meta:
        raise ParseError("missing grid metadata header", line=1)
    if int(meta["n"]) != domain.n:
        raise GridMismatch(f"file has n={meta['n']}, grid has n={domain.n}")
    if abs(float(meta["h"]) - domain.h) > 1e-12 * max(1.0, domain.h):
        raise GridMismatch(f"file has h={meta['h']}, grid has h={domain.h}")
    for key, ref in (("lo", domain.lo), ("hi", domain.hi)):
        vals = np.array([float(v) for v in meta[key].split(",")])
        if len(vals) != domain.dim or np.abs(vals - ref).max() > 1e-12:
            raise GridMismatch(f"file {key} does not match the grid")
    shape = tuple(int(s) for s in meta["shape"].split(","))
    if shape != tuple(domain.shape):
        raise GridMismatch(f"file shape {shape} != grid shape {domain.shape}")

    d = domain.dim
    values = np.full(int(np.prod(domain.shape)), np.nan)
    seen = np.zeros(len(domain.inside_flat), dtype=bool)
    for lineno, line in rows:
        parts = line.split(",")
        if len(parts) != 2 * d + 2:
            raise ParseError(f"expected {2 * d + 2} columns", line=lineno)
        try:
            idx = [int(p) for p in parts[:d]]
            val = float(parts[-1])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not np.isfinite(val):
            raise ParseError(f"non-finite value {parts[-1]}", line=lineno)
        flat = int(sum(i * s for i, s in zip(idx, domain.strides)))
        if flat < 0 or flat >= values.size or domain.class_flat[flat] == 0:
            raise ParseError("row indexes a non-inside node", line=lineno)
        values[flat] = val
        seen[domain.pos[flat]] = True
    if not seen.all():
        raise ParseError(
            f"{int((~seen).sum())} inside nodes missing from the file"
        )
    return ScalarField(domain, values)


def export_disk(disk, path):
    """Disk samples as CSV: parameter (rho, theta, Re z, Im z) + image point."""
    nr, nt = len(disk.rho), len(disk.theta)
    d = disk.points.shape[-1]
    with open(path, "w") as fh:
        fh.write("# acma-disk v1\n")
        fh.write(f"# radius={_FMT % disk.radius} residual={_FMT % disk.residual}\n")
        fh.write("# center=" + ",".join(_FMT % v for v in disk.center) + "\n")
        fh.write(
            "# columns: rho,theta,re_z,im_z,"
            + ",".join(f"p{j + 1}" for j in range(d))
            + "\n"
        )
        for i in range(nr):
            for j in range(nt):
                z = disk.radius * disk.rho[i] * np.exp(1j * disk.theta[j])
                row = [
                    _FMT % disk.rho[i],
                    _FMT % disk.theta[j],
                    _FMT % z.real,
                    _FMT % z.imag,
                ] + [_FMT % disk.points[i, j, k] for k in range(d)]
                fh.write(",".join(row) + "\n")


def export_spectra(kernel, A, path):
    """Per-point eigenvalue range of an A-matrix field (diagnostics)."""
    lam_min, lam_max = kernel.eig_range(A)
    pts = kernel.domain.interior_points()
    d = kernel.domain.dim
    with open(path, "w") as fh:
        fh.write("# acma-spectra v1\n")
        fh.write(
            "# columns: "
            + ",".join(f"p{j + 1}" for j in range(d))
            + ",lambda_min,lambda_max\n"
        )
        for r in range(len(pts)):
            fh.write(
                ",".join([_FMT % pts[r, j] for j in range(d)]
                         + [_FMT % lam_min[r], _FMT % lam_max[r]])
                + "\n"
            )


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
