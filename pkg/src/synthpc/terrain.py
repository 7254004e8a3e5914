"""DSM heightfields: ASCII-grid I/O, bilinear upsampling, fine detail, triangulation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from synthpc.geometry2d import distance_to_polylines
from synthpc.mesh import SceneMesh, SemanticClass
from synthpc.rng import derive_seed, hash_uniform


class HeightfieldParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Heightfield:
    """Regular elevation grid; ``elevations[j, i]`` sits at ``origin + (i, j) * cell_size``.

    Row 0 is the southern edge (smallest y).
    """

    elevations: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.elevations = np.array(self.elevations, dtype=np.float64)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if self.elevations.ndim != 2 or min(self.elevations.shape) < 2:
            raise ValueError("heightfield needs at least 2x2 nodes")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if not np.isfinite(self.elevations).all():
            raise ValueError("heightfield elevations must be finite")

    @property
    def width(self) -> int:
        return self.elevations.shape[1]

    @property
    def height(self) -> int:
        return self.elevations.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, y0, x0 + (self.width - 1) * self.cell_size, y0 + (self.height - 1) * self.cell_size)

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.width) * self.cell_size
        ys = self.origin[1] + np.arange(self.height) * self.cell_size
        return np.meshgrid(xs, ys)

    def contains(self, x, y, tol: float = 1e-9) -> np.ndarray:
        x0, y0, x1, y1 = self.extent
        x, y = np.asarray(x), np.asarray(y)
        return (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)

    def elevation_at(self, x, y) -> np.ndarray:
        """Elevation of the triangulated surface (same split as :func:`heightfield_to_mesh`)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gx = (x - self.origin[0]) / self.cell_size
        gy = (y - self.origin[1]) / self.cell_size
        i = np.clip(np.floor(gx).astype(int), 0, self.width - 2)
        j = np.clip(np.floor(gy).astype(int), 0, self.height - 2)
        fx = np.clip(gx - i, 0.0, 1.0)
        fy = np.clip(gy - j, 0.0, 1.0)
        e = self.elevations
        z00, z10, z01, z11 = e[j, i], e[j, i + 1], e[j + 1, i], e[j + 1, i + 1]
        lower = z00 + fx * (z10 - z00) + fy * (z11 - z10)
        upper = z00 + fy * (z01 - z00) + fx * (z11 - z01)
        return np.where(fx >= fy, lower, upper)

    def normal_at(self, x, y, step: float | None = None) -> np.ndarray:
        """Unit surface normal by central differences."""
        h = self.cell_size / 2 if step is None else step
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dzdx = (self.elevation_at(x + h, y) - self.elevation_at(x - h, y)) / (2 * h)
        dzdy = (self.elevation_at(x, y + h) - self.elevation_at(x, y - h)) / (2 * h)
        n = np.stack([-dzdx, -dzdy, np.ones_like(dzdx)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


def parse_heightfield(text: str) -> Heightfield:
    """Parse an ESRI ASCII grid (north row first). NODATA cells are rejected."""
    lines = text.splitlines()
    header: dict[str, float] = {}
    n = 0
    keys = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
    while n < len(lines):
        parts = lines[n].split()
        if not parts:
            n += 1
            continue
        key = parts[0].lower()
        if key not in keys:
            break
        if len(parts) != 2:
            raise HeightfieldParseError(n + 1, f"malformed header line {lines[n]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise HeightfieldParseError(n + 1, f"non-numeric header value {parts[1]!r}") from None
        n += 1
    for key in keys[:5]:
        if key not in header:
            raise HeightfieldParseError(n + 1, f"missing header field {key!r}")
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 2 or nrows < 2:
        raise HeightfieldParseError(1, "ncols/nrows must be integers >= 2")
    ncols, nrows = int(ncols), int(nrows)
    nodata = header.get("nodata_value")

    rows = []
    for lineno in range(n, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) != ncols:
            raise HeightfieldParseError(lineno + 1, f"expected {ncols} values, found {len(parts)}")
        try:
            row = [float(p) for p in parts]
        except ValueError:
            bad = next(p for p in parts if not _is_float(p))
            raise HeightfieldParseError(lineno + 1, f"non-numeric cell {bad!r}") from None
        if nodata is not None and nodata in row:
            raise HeightfieldParseError(lineno + 1, "NODATA cell (complete DSM required)")
        if not all(math.isfinite(v) for v in row):
            raise HeightfieldParseError(lineno + 1, "non-finite cell")
        rows.append(row)
        if len(rows) > nrows:
            raise HeightfieldParseError(lineno + 1, f"more than {nrows} rows")
    if len(rows) != nrows:
        raise HeightfieldParseError(len(lines), f"expected {nrows} rows, found {len(rows)}")
    return Heightfield(
        np.array(rows[::-1]),
        cell_size=header["cellsize"],
        origin=(header["xllcorner"], header["yllcorner"]),
    )


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_heightfield(hf: Heightfield, nodata: float = -9999.0) -> str:
    out = [
        f"ncols {hf.width}",
        f"nrows {hf.height}",
        f"xllcorner {hf.origin[0]!r}",
        f"yllcorner {hf.origin[1]!r}",
        f"cellsize {hf.cell_size!r}",
        f"NODATA_value {nodata!r}",
    ]
    for row in hf.elevations[::-1]:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def upsample_bilinear(hf: Heightfield, factor: int) -> Heightfield:
    """Refine the grid by an integer factor; original nodes are reproduced exactly."""
    if int(factor) != factor or factor < 1:
        raise ValueError("upsample factor must be an integer >= 1")
    factor = int(factor)
    if factor == 1:
        return Heightfield(hf.elevations.copy(), hf.cell_size, hf.origin)
    # pad one edge row/column so every output node has a (cell, t) with t < 1;
    # lerp as a + (b - a) * t is then exact at nodes (t = 0) and on constants
    e = np.pad(hf.elevations, ((0, 1), (0, 1)), mode="edge")

    def coords(n):
        k = np.arange((n - 1) * factor + 1)
        return k // factor, (k % factor) / factor

    ci, tx = coords(hf.width)
    cj, ty = coords(hf.height)
    a = e[np.ix_(cj, ci)]
    b = e[np.ix_(cj, ci + 1)]
    c = e[np.ix_(cj + 1, ci)]
    d = e[np.ix_(cj + 1, ci + 1)]
    lo = a + (b - a) * tx[None, :]
    hi = c + (d - c) * tx[None, :]
    out = lo + (hi - lo) * ty[:, None]
    return Heightfield(out, hf.cell_size / factor, hf.origin)


@dataclass(frozen=True)
class DetailParams:
    noise_amplitude: float = 0.15
    noise_octaves: int = 3
    carve_depth: float = 0.3
    carve_width: float = 1.0
    seed: int = 0
    noise_scale: float = 8.0  # lattice spacing of the coarsest octave, metres

    def __post_init__(self):
        if self.noise_amplitude < 0 or self.carve_depth < 0:
            raise ValueError("noise_amplitude and carve_depth must be >= 0")
        if not self.carve_width > 0:
            raise ValueError("carve_width must be > 0")
        if self.noise_octaves < 1:
            raise ValueError("noise_octaves must be >= 1")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be > 0")


def value_noise(x, y, params: DetailParams) -> np.ndarray:
    """Octave value noise in [-1, 1]; lattice values hashed from (seed, octave, node)."""
    weights = 0.5 ** np.arange(params.noise_octaves)
    weights /= weights.sum()
    total = np.zeros(np.shape(x))
    base = derive_seed(params.seed, "terrain-noise")
    for octave, w in enumerate(weights):
        spacing = params.noise_scale / 2**octave
        gx, gy = np.asarray(x) / spacing, np.asarray(y) / spacing
        ix, iy = np.floor(gx).astype(np.int64), np.floor(gy).astype(np.int64)
        fx, fy = gx - ix, gy - iy
        sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)

        def lattice(a, b, _o=octave):
            key = (np.int64(_o) << 58) ^ ((a & 0x1FFFFFFF) << 29) ^ (b & 0x1FFFFFFF)
            return 2.0 * hash_uniform(base, key.astype(np.uint64)) - 1.0

        v00, v10 = lattice(ix, iy), lattice(ix + 1, iy)
        v01, v11 = lattice(ix, iy + 1), lattice(ix + 1, iy + 1)
        lo = v00 + (v10 - v00) * sx
        hi = v01 + (v11 - v01) * sx
        total += w * (lo + (hi - lo) * sy)
    return total


def carve_profile(dist, depth: float, width: float) -> np.ndarray:
    """Flat trench of ``depth`` within width/2, linear falloff to zero at ``width``."""
    d = np.asarray(dist, dtype=float)
    half = width / 2
    return np.where(d <= half, depth, np.where(d < width, depth * (width - d) / half, 0.0))


def add_detail(hf: Heightfield, params: DetailParams, carve_paths=()) -> Heightfield:
    """Perturb the DSM with bounded value noise and carve trenches along polylines."""
    paths = [np.asarray(p, dtype=float).reshape(-1, 2) for p in carve_paths]
    for k, p in enumerate(paths):
        if len(p) == 0 or not hf.contains(p[:, 0], p[:, 1]).all():
            raise ValueError(f"carve path {k} lies outside the heightfield extent")
    gx, gy = hf.node_xy()
    out = hf.elevations.copy()
    if params.noise_amplitude > 0:
        # noise is sampled in grid-local coordinates so shifting the origin does not change it
        out += params.noise_amplitude * value_noise(gx - hf.origin[0], gy - hf.origin[1], params)
    if paths and params.carve_depth > 0:
        dist = distance_to_polylines(np.stack([gx, gy], axis=-1), paths)
        out -= carve_profile(dist, params.carve_depth, params.carve_width)
    return Heightfield(out, hf.cell_size, hf.origin)


def heightfield_to_mesh(hf: Heightfield, object_id: int = 0) -> SceneMesh:
    gx, gy = hf.node_xy()
    verts = np.stack([gx.ravel(), gy.ravel(), hf.elevations.ravel()], axis=1)
    w, h = hf.width, hf.height
    idx = np.arange(w * h).reshape(h, w)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    # both triangles wind counter-clockwise seen from +z
    tris = np.stack([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)], 1).reshape(-1, 3)
    m = len(tris)
    return SceneMesh(verts, tris, np.full(m, SemanticClass.GROUND), np.full(m, object_id))
