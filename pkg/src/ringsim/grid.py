"""Computational grid, geometry files and point addressing.

Grid values live in a single array indexed ``(layer, z, y, x)``.  Every
worker holds only its own block of the global grid, surrounded by a halo
one node deep; a sequential run is simply the one-block case.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class GridError(ValueError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridDims:
    xmax: int
    ymax: int
    zmax: int = 1
    vmax: int = 1

    def __post_init__(self):
        for name in ("xmax", "ymax", "zmax", "vmax"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise GridError(f"{name} must be a positive integer, got {value!r}")

    @property
    def shape(self):
        """Spatial shape in storage order ``(z, y, x)``."""
        return (self.zmax, self.ymax, self.xmax)

    @property
    def size(self):
        return self.xmax * self.ymax * self.zmax * self.vmax

    @property
    def dim(self):
        """Number of spatial axes with more than one node."""
        return sum(n > 1 for n in (self.xmax, self.ymax, self.zmax))


@dataclass
class Geometry:
    """Points listed in a geometry file, before rasterization.

    ``coords`` holds file coordinates ``(x, y, z)``; ``fibres`` holds unit
    vectors for tissue points and NaN where the line carried no fibre.
    """

    coords: np.ndarray
    status: np.ndarray
    fibres: np.ndarray
    source: str = "<memory>"
    _raster: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def tissue(self):
        return self.status != 0

    @property
    def ntissue(self):
        return int(np.count_nonzero(self.tissue))

    @property
    def has_fibres(self):
        return bool(np.all(np.isfinite(self.fibres[self.tissue])))

    def bounding_box(self):
        """Tight ``(lo, hi)`` inclusive file-coordinate box of the tissue points."""
        pts = self.coords[self.tissue]
        if len(pts) == 0:
            raise GeometryError(f"{self.source}: no tissue points")
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def occupancy(self):
        lo, hi = self.bounding_box()
        return self.ntissue / float(np.prod(hi - lo + 1))

    def derived_dims(self, vmax=1):
        """Tight bounding box plus one void node on each side."""
        lo, hi = self.bounding_box()
        span = hi - lo + 1
        return GridDims(int(span[0]) + 2, int(span[1]) + 2, int(span[2]) + 2, vmax)

    def rasterize(self, dims=None):
        """Return ``(dims, offset, status, fibres)`` arrays on the grid.

        With ``dims=None`` the grid is derived from the bounding box and the
        points are shifted so that the lowest tissue coordinate lands on
        index 1.  With explicit dims the file coordinates are grid indices.
        """
        key = None if dims is None else (dims.xmax, dims.ymax, dims.zmax)
        if key in self._raster:
            return self._raster[key]
        if dims is None:
            dims = self.derived_dims()
            lo, _ = self.bounding_box()
            offset = lo - 1
        else:
            offset = np.zeros(3, dtype=np.int64)
        idx = self.coords - offset
        limits = np.array([dims.xmax, dims.ymax, dims.zmax])
        listed = self.tissue
        outside = np.any((idx < 0) | (idx >= limits), axis=1) & listed
        if np.any(outside):
            bad = self.coords[np.argmax(outside)]
            raise GridError(f"geometry point {tuple(int(c) for c in bad)} outside grid {tuple(limits)}")
        status = np.zeros(dims.shape, dtype=np.int32)
        fibres = np.zeros((3,) + dims.shape)
        t = idx[listed]
        status[t[:, 2], t[:, 1], t[:, 0]] = self.status[listed]
        f = np.nan_to_num(self.fibres[listed])
        for c in range(3):
            fibres[c, t[:, 2], t[:, 1], t[:, 0]] = f[:, c]
        result = (dims, offset, status, fibres)
        self._raster[key] = result
        return result


def parse_bbg(text, source="<bbg>"):
    """Parse geometry text: ``x,y,z,status[,fx,fy,fz]`` per line.

    Lines starting with ``#`` are comments.  Duplicate coordinates keep the
    last occurrence.  Fibres are normalized; a zero fibre at a tissue point
    is an error.
    """
    points = {}
    duplicates = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) not in (4, 7):
            raise GeometryError(f"{source}:{lineno}: expected 4 or 7 fields, got {len(fields)}")
        try:
            nums = [float(f) for f in fields]
        except ValueError:
            raise GeometryError(f"{source}:{lineno}: non-numeric field in {line!r}") from None
        if any(v != int(v) for v in nums[:4]):
            raise GeometryError(f"{source}:{lineno}: coordinates and status must be integers")
        x, y, z, status = (int(v) for v in nums[:4])
        fibre = (np.nan, np.nan, np.nan)
        if len(nums) == 7 and status != 0:
            norm = float(np.sqrt(nums[4] ** 2 + nums[5] ** 2 + nums[6] ** 2))
            if norm == 0.0 or not np.isfinite(norm):
                raise GeometryError(f"{source}:{lineno}: zero fibre vector at tissue point {(x, y, z)}")
            fibre = (nums[4] / norm, nums[5] / norm, nums[6] / norm)
        if (x, y, z) in points:
            duplicates += 1
            del points[(x, y, z)]
        points[(x, y, z)] = (status, fibre)
    if duplicates:
        log.warning("%s: %d duplicate point(s), last occurrence kept", source, duplicates)
    n = len(points)
    coords = np.array(list(points.keys()), dtype=np.int64).reshape(n, 3)
    status = np.array([p[0] for p in points.values()], dtype=np.int32)
    fibres = np.array([p[1] for p in points.values()], dtype=float).reshape(n, 3)
    return Geometry(coords, status, fibres, source=source)


def read_bbg(path):
    with open(path) as fh:
        return parse_bbg(fh.read(), source=str(path))


def serialize_bbg(geometry):
    lines = []
    for (x, y, z), s, f in zip(geometry.coords, geometry.status, geometry.fibres):
        if s != 0 and np.all(np.isfinite(f)):
            lines.append(f"{x},{y},{z},{s},{f[0]!r},{f[1]!r},{f[2]!r}")
        else:
            lines.append(f"{x},{y},{z},{s}")
    return "\n".join(lines) + "\n"


def box_tissue_mask(dims):
    """Tissue mask of a plain box: the interior, with a void one-node frame
    on every axis long enough to have one."""
    mask = np.zeros(dims.shape, dtype=bool)
    sl = tuple(slice(1, n - 1) if n >= 3 else slice(None) for n in dims.shape)
    mask[sl] = True
    return mask


@dataclass
class Domain:
    """Static global data shared by every worker: dims, tissue mask and
    (optionally) the fibre field, both in ``(z, y, x)`` order."""

    dims: GridDims
    mask: np.ndarray
    fibres: np.ndarray | None = None
    offset: tuple = (0, 0, 0)
    geometry: Geometry | None = None

    @property
    def ntissue(self):
        return int(np.count_nonzero(self.mask))


def make_domain(dims=None, geometry=None, anisotropy=False, vmax=1):
    """Rasterize ``geometry`` (if any) onto ``dims``.

    Without dims, the grid is the tissue bounding box plus a one-node void
    margin (with ``vmax`` layers) and coordinates are shifted to match.
    Without geometry the tissue is the box interior.
    """
    if geometry is None:
        if dims is None:
            raise GridError("grid dimensions required without a geometry")
        return Domain(dims, box_tissue_mask(dims))
    if dims is None:
        dims = geometry.derived_dims(vmax)
        _, offset, status, fibres = geometry.rasterize(None)
    else:
        _, offset, status, fibres = geometry.rasterize(dims)
    mask = status != 0
    fib = None
    if anisotropy:
        if not geometry.has_fibres:
            raise GeometryError(f"{geometry.source}: anisotropy requested but fibres missing")
        fib = fibres
    return Domain(dims, mask, fib, tuple(int(o) for o in offset), geometry)


class Grid:
    """One worker's block of the 4D grid, with a one-node halo.

    ``lo``/``hi`` are the global ``(x, y, z)`` bounds of the owned block
    (``hi`` exclusive).  Local array index = global index - lo + 1, so the
    halo sits at local index 0 and at the far end of every axis.
    """

    def __init__(self, domain, block=None):
        self.domain = domain
        self.dims = dims = domain.dims
        if block is None:
            block = ((0, 0, 0), (dims.xmax, dims.ymax, dims.zmax))
        self.lo = tuple(int(v) for v in block[0])
        self.hi = tuple(int(v) for v in block[1])
        nx, ny, nz = (self.hi[a] - self.lo[a] for a in range(3))
        if min(nx, ny, nz) < 1:
            raise GridError(f"empty block {block}")
        self.local_shape = (nz + 2, ny + 2, nx + 2)
        self.values = np.zeros((dims.vmax,) + self.local_shape)
        self.mask = self.localize(domain.mask, False)
        self.fibres = None
        if domain.fibres is not None:
            self.fibres = np.stack([self.localize(domain.fibres[c], 0.0) for c in range(3)])

    def localize(self, arr, fill):
        """Cut this block (plus halo) out of a global ``(z, y, x)`` array."""
        padded = np.pad(arr, 1, constant_values=fill)
        (x0, y0, z0), (x1, y1, z1) = self.lo, self.hi
        return padded[z0:z1 + 2, y0:y1 + 2, x0:x1 + 2].copy()

    # --- addressing -----------------------------------------------------
    def owns(self, x, y, z):
        return all(self.lo[a] <= c < self.hi[a] for a, c in enumerate((x, y, z)))

    def _local(self, x, y, z, v):
        d = self.dims
        if not (0 <= x < d.xmax and 0 <= y < d.ymax and 0 <= z < d.zmax and 0 <= v < d.vmax):
            raise IndexError(f"point ({x},{y},{z}) layer {v} outside grid {d}")
        lx, ly, lz = x - self.lo[0] + 1, y - self.lo[1] + 1, z - self.lo[2] + 1
        nz, ny, nx = self.local_shape
        if not (0 <= lz < nz and 0 <= ly < ny and 0 <= lx < nx):
            raise IndexError(f"point ({x},{y},{z}) is not stored in block {self.lo}-{self.hi}")
        return v, lz, ly, lx

    def cell_at(self, x, y, z, v):
        return float(self.values[self._local(x, y, z, v)])

    def set_cell(self, x, y, z, v, value):
        self.values[self._local(x, y, z, v)] = value

    def is_tissue(self, x, y, z):
        return bool(self.mask[self._local(x, y, z, 0)[1:]])

    # --- windows --------------------------------------------------------
    def owned_box(self, lo, hi):
        """Global inclusive ``(lo, hi)`` of a box intersected with the owned
        block, or None when they do not meet."""
        a = [max(lo[k], self.lo[k]) for k in range(3)]
        b = [min(hi[k], self.hi[k] - 1) for k in range(3)]
        if any(a[k] > b[k] for k in range(3)):
            return None
        return tuple(a), tuple(b)

    def local_slices(self, lo, hi):
        """Local ``(z, y, x)`` slices for an inclusive global box."""
        return tuple(slice(lo[k] - self.lo[k] + 1, hi[k] - self.lo[k] + 2) for k in (2, 1, 0))

    def active_points(self, lo, hi):
        """Flat local indices (ascending, so x fastest) and global ``(x, y, z)``
        coordinates of owned tissue points inside the inclusive box."""
        box = self.owned_box(lo, hi)
        if box is None:
            return np.zeros(0, dtype=np.intp), np.zeros((3, 0), dtype=np.int64)
        sl = self.local_slices(*box)
        sub = np.zeros(self.local_shape, dtype=bool)
        sub[sl] = self.mask[sl]
        flat = np.flatnonzero(sub)
        lz, ly, lx = np.unravel_index(flat, self.local_shape)
        coords = np.stack([lx + self.lo[0] - 1, ly + self.lo[1] - 1, lz + self.lo[2] - 1])
        return flat, coords

    def flat(self, v):
        """Writable flat view of layer ``v``."""
        return self.values[v].reshape(-1)

    @property
    def owned(self):
        """Local ``(z, y, x)`` slices of the owned block."""
        return tuple(slice(1, n - 1) for n in self.local_shape)

    def owned_values(self):
        return self.values[(slice(None),) + self.owned]


def allocate_grid(dims, geometry=None, anisotropy=False):
    """Zero-initialized single-block grid; ``dims=None`` derives the box
    from ``geometry``."""
    return Grid(make_domain(dims, geometry, anisotropy))
