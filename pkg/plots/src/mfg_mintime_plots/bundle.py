"""Read-only access to a result bundle directory.

The bundle contract is the CSV/key-value layout documented in the main
package (docs/FORMATS.md).  Tables load lazily; unknown columns are
ignored with a warning, missing files and malformed headers are errors.
"""

from __future__ import annotations

import csv
import os
import warnings


class BundleError(Exception):
    """Missing or malformed bundle content."""


class MissingFileError(BundleError):
    """A documented bundle file is absent."""


EXPECTED_HEADERS = {
    "density.csv": ["t", "i", "j", "density"],
    "value_function.csv": ["t", "i", "j", "phi"],
    "domain.csv": ["i", "j", "x", "y", "inside", "target", "signed_distance"],
    "gaps.csv": ["iteration", "gap"],
}


def _read_table(path, expected, known_extra=()):
    if not os.path.isfile(path):
        raise MissingFileError(f"missing bundle file: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise BundleError(f"empty table: {path}") from None
        missing = [c for c in expected if c not in header]
        if missing:
            raise BundleError(
                f"malformed header in {path}: missing columns {missing}"
            )
        extra = [c for c in header if c not in expected and c not in known_extra]
        if extra:
            warnings.warn(f"{os.path.basename(path)}: ignoring columns {extra}",
                          stacklevel=3)
        idx = [header.index(c) for c in expected]
        rows = []
        for row in reader:
            rows.append([float(row[k]) for k in idx])
    return rows


def _read_keyvalues(path):
    if not os.path.isfile(path):
        raise MissingFileError(f"missing bundle file: {path}")
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or "=" not in line:
                continue
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


class Bundle:
    """Lazily loaded view of one result-bundle directory."""

    def __init__(self, path):
        self.path = path
        if not os.path.isdir(path):
            raise MissingFileError(f"bundle directory not found: {path}")
        self.manifest = _read_keyvalues(os.path.join(path, "manifest.txt"))
        self._cache = {}

    def _table(self, name):
        if name not in self._cache:
            self._cache[name] = _read_table(
                os.path.join(self.path, name), EXPECTED_HEADERS[name]
            )
        return self._cache[name]

    @property
    def dim(self):
        return int(self.manifest.get("dim", 2))

    @property
    def grid_shape(self):
        nx = int(self.manifest["nx"])
        ny = int(self.manifest["ny"])
        return (nx, ny) if self.dim == 2 else (nx,)

    @property
    def cell_size(self):
        return float(self.manifest["cell_size"])

    @property
    def origin(self):
        return (float(self.manifest["origin_x"]),
                float(self.manifest["origin_y"]))

    def density_slices(self):
        """{time: dense grid} reconstructed from the long-form table."""
        import numpy as np

        rows = self._table("density.csv")
        out = {}
        for t, i, j, v in rows:
            grid = out.setdefault(t, np.zeros(self.grid_shape))
            if self.dim == 2:
                grid[int(i), int(j)] = v
            else:
                grid[int(i)] = v
        return out

    def value_slices(self):
        import numpy as np

        rows = self._table("value_function.csv")
        out = {}
        for t, i, j, v in rows:
            grid = out.setdefault(t, np.full(self.grid_shape, np.nan))
            if self.dim == 2:
                grid[int(i), int(j)] = v
            else:
                grid[int(i)] = v
        return out

    def domain_masks(self):
        import numpy as np

        rows = self._table("domain.csv")
        inside = np.zeros(self.grid_shape, dtype=bool)
        target = np.zeros(self.grid_shape, dtype=bool)
        for i, j, _x, _y, ins, tgt, _sd in rows:
            key = (int(i), int(j)) if self.dim == 2 else int(i)
            inside[key] = bool(ins)
            target[key] = bool(tgt)
        return inside, target

    def gap_history(self):
        rows = self._table("gaps.csv")
        return [(int(it), g) for it, g in rows]

    def residuals(self):
        return _read_keyvalues(os.path.join(self.path, "residual_report.txt"))

    def trajectories(self, limit=None):
        """List of (t, x, y) arrays for the exported sample paths."""
        import numpy as np

        man = os.path.join(self.path, "trajectories", "manifest.csv")
        if not os.path.isfile(man):
            return []
        out = []
        with open(man, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            for row in reader:
                fp = os.path.join(self.path, "trajectories", row["file"])
                tab = _read_table(fp, ["t", "x", "y"],
                  known_extra=("u_x", "u_y", "on_target"))
                out.append(np.asarray(tab))
                if limit and len(out) >= limit:
                    break
        return out

    def axis_coordinates(self):
        import numpy as np

        ox, oy = self.origin
        h = self.cell_size
        xs = ox + h * np.arange(self.grid_shape[0])
        if self.dim == 1:
            return xs, None
        ys = oy + h * np.arange(self.grid_shape[1])
        return xs, ys
