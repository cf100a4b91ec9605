"""Input/output devices: ppmout, record, dump, load, k_print and singz.

Grid data for file output is gathered to rank 0, which writes the whole
record, so files are byte-identical for any number of workers.
"""
from __future__ import annotations

import math
import re
import sys

import numpy as np

from .expr import ExprError, evaluate, names_in, parse_list
from .ring import Device, DeviceError, register

# --- gathering ----------------------------------------------------------------


def gather_box(ctx, lo, hi, layers):
    """Values of ``layers`` over the inclusive global box, shape
    ``(nl, nz, ny, nx)``, on rank 0 (None elsewhere).  Parts of the box owned
    by no worker (idle subdomains) read as 0."""
    g = ctx.grid
    box = g.owned_box(lo, hi)
    piece = None
    if box is not None:
        piece = (box, g.values[(layers,) + g.local_slices(*box)].copy())
    parts = ctx.comm.gather(piece)
    if parts is None:
        return None
    nl = len(range(*layers.indices(g.dims.vmax)))
    out = np.zeros((nl, hi[2] - lo[2] + 1, hi[1] - lo[1] + 1, hi[0] - lo[0] + 1))
    for part in parts:
        if part is None:
            continue
        (a, b), vals = part
        out[:, a[2] - lo[2]:b[2] - lo[2] + 1, a[1] - lo[1]:b[1] - lo[1] + 1,
            a[0] - lo[0]:b[0] - lo[0] + 1] = vals
    return out


def box_mask(ctx, lo, hi):
    """Global tissue mask over an inclusive box, ``(nz, ny, nx)``."""
    m = ctx.grid.domain.mask
    return m[lo[2]:hi[2] + 1, lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]


_ORDINAL = re.compile(r"%(0?\d*)d")


def expand_filename(template, ordinal):
    """Substitute the call ordinal for a ``%d``/``%0Nd`` field."""
    if "%" not in template:
        return template
    if len(_ORDINAL.findall(template)) != 1 or template.count("%") != 1:
        raise DeviceError(f"file template {template!r}: only one %d-style field is supported")
    return _ORDINAL.sub(lambda m: f"{ordinal:{m.group(1)}d}", template)


class _Writer(Device):
    def output_path(self, ctx, ordinal):
        path = ctx.path(expand_filename(self.text("file"), ordinal))
        if ctx.rank == 0:
            path.parent.mkdir(parents=True, exist_ok=True)
            ctx.note_output(path)
        return path


# --- ppm ----------------------------------------------------------------------


def quantize(values, lo, hi):
    """Bytes ``floor(255 (v - lo)/(hi - lo) + 1/2)`` clamped to 0..255."""
    if not hi > lo:
        raise DeviceError(f"degenerate range [{lo}, {hi}]")
    q = np.floor(255.0 * (np.asarray(values, dtype=float) - lo) / (hi - lo) + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def ppm_bytes(channels, zmax):
    """P6 image from three ``(nz, ny, nx)`` byte arrays; z planes are stacked
    vertically and announced in a ``#zmax=`` comment when nz > 1."""
    nz, ny, nx = channels[0].shape
    rgb = np.stack(channels, axis=-1).reshape(nz * ny, nx, 3)
    head = "P6\n" + (f"#zmax={zmax}\n" if zmax > 1 else "") + f"{nx} {ny * nz}\n255\n"
    return head.encode("ascii") + rgb.tobytes()


@register
class PpmOut(_Writer):
    """Byte raster of up to three layers (r, g, b); the whole grid unless
    x0..z1 are given."""

    type = "ppmout"
    keys = ("file", "r", "r0", "r1", "g", "g0", "g1", "b", "b0", "b1")

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        env = ctx.env
        self.text("file")
        self.channels = []
        for c in "rgb":
            if self.has(c):
                layer = self.layer(c, ctx)
                lo, hi = self.num(c + "0", env, 0.0), self.num(c + "1", env, 1.0)
                if not hi > lo:
                    raise DeviceError(f"{self.where}: degenerate range {c}0={lo} {c}1={hi}")
                self.channels.append((layer, lo, hi))
            else:
                self.channels.append(None)
        if all(ch is None for ch in self.channels):
            raise DeviceError(f"{self.where}: no layers selected (r, g or b)")
        self.count = 0
        d = ctx.dims
        self.lo, self.hi = (0, 0, 0), (d.xmax - 1, d.ymax - 1, d.zmax - 1)
        if any(self.has(k) for k in ("x0", "x1", "y0", "y1", "z0", "z1")):
            self.lo, self.hi = self.window.lo, self.window.hi

    def run(self, ctx):
        path = self.output_path(ctx, self.count)
        self.count += 1
        data = gather_box(ctx, self.lo, self.hi, slice(None))
        if data is None:
            return
        bytes_ = []
        for ch in self.channels:
            if ch is None:
                bytes_.append(np.zeros(data.shape[1:], dtype=np.uint8))
            else:
                layer, lo, hi = ch
                bytes_.append(quantize(data[layer], lo, hi))
        path.write_bytes(ppm_bytes(bytes_, ctx.dims.zmax))


def read_ppm(path):
    """Parse a file written by ppmout: returns ``(rgb (nz, ny, nx, 3), zmax)``."""
    raw = open(path, "rb").read()
    lines, pos = [], 0
    while len(lines) < 4:
        end = raw.index(b"\n", pos)
        lines.append(raw[pos:end].decode("ascii"))
        pos = end + 1
        if len(lines) == 2 and not lines[1].startswith("#"):
            lines.insert(1, "#zmax=1")
    if lines[0] != "P6":
        raise ValueError(f"{path}: not a P6 file")
    zmax = int(lines[1].split("=")[1])
    w, h = (int(v) for v in lines[2].split())
    data = np.frombuffer(raw[pos:], dtype=np.uint8)
    return data.reshape(zmax, h // zmax, w, 3), zmax


# --- record -------------------------------------------------------------------

FIELD_WIDTH = 22


def format_value(v):
    """Sign, one digit, 14 decimals, exponent with sign and three digits."""
    if not math.isfinite(v):
        raise DeviceError(f"cannot record non-finite value {v}")
    mant, exp = f"{v:+.14e}".split("e")
    return f"{mant}e{int(exp):+04d}"


def format_line(values):
    return " ".join(format_value(float(v)) for v in values) + "\n"


@register
class Record(_Writer):
    """Fixed-width text: one line per tissue point of the window (x fastest),
    holding layers v0..v1.  Every firing appends ``npoints`` lines of
    ``nlayers * 23`` bytes, so record k starts at byte ``k * record_size``."""

    type = "record"
    keys = ("file", "append")

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        w = self.window
        self.sel = box_mask(ctx, w.lo, w.hi)
        self.npoints = int(np.count_nonzero(self.sel))
        if self.npoints == 0:
            raise DeviceError(f"{self.where}: window holds no tissue points")
        self.line_size = w.nlayers * (FIELD_WIDTH + 1)
        self.record_size = self.npoints * self.line_size
        self.path = self.output_path(ctx, 0)
        if ctx.rank == 0 and not self.integer("append", ctx.env, 0):
            self.path.write_bytes(b"")

    def run(self, ctx):
        w = self.window
        data = gather_box(ctx, w.lo, w.hi, w.layers)
        if data is None:
            return
        vals = data[:, self.sel].T
        text = "".join(format_line(row) for row in vals)
        with open(self.path, "ab") as fh:
            fh.write(text.encode("ascii"))


def read_record(path, nlayers):
    """Records as an array ``(nrecords_lines, nlayers)``."""
    text = open(path).read().split()
    return np.array([float(v) for v in text]).reshape(-1, nlayers)


# --- dump / load --------------------------------------------------------------


@register
class Dump(_Writer):
    """Full-precision binary: little-endian 8-byte reals over the window in
    (layer, z, y, x) order.  Each firing overwrites the file (or writes a new
    one when the name has a %d field)."""

    type = "dump"
    keys = ("file",)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.text("file")
        self.count = 0

    def run(self, ctx):
        w = self.window
        path = self.output_path(ctx, self.count)
        self.count += 1
        data = gather_box(ctx, w.lo, w.hi, w.layers)
        if data is not None:
            path.write_bytes(data.astype("<f8").tobytes())


@register
class Load(Device):
    """Reads a dump of the same window shape into the grid."""

    type = "load"
    keys = ("file",)

    def run(self, ctx):
        w = self.window
        path = ctx.input_path(self.text("file"))
        if not path.is_file():
            raise DeviceError(f"file {path} not found")
        expected = w.npoints * w.nlayers * 8
        size = path.stat().st_size
        if size != expected:
            raise DeviceError(f"{path}: {size} bytes, window needs {expected}")
        nz, ny, nx = (w.hi[a] - w.lo[a] + 1 for a in (2, 1, 0))
        data = np.fromfile(path, dtype="<f8").reshape(w.nlayers, nz, ny, nx)
        g = ctx.grid
        box = g.owned_box(w.lo, w.hi)
        if box is None:
            return
        a, b = box
        sub = data[:, a[2] - w.lo[2]:b[2] - w.lo[2] + 1, a[1] - w.lo[1]:b[1] - w.lo[1] + 1,
                   a[0] - w.lo[0]:b[0] - w.lo[0] + 1]
        g.values[(w.layers,) + g.local_slices(a, b)] = sub


# --- k_print ------------------------------------------------------------------


@register
class KPrint(Device):
    """One line of global-expression values per firing, written by rank 0."""

    type = "k_print"
    keys = ("list", "file", "append")
    windowed = False

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        p = self.params.get("list")
        if p is None:
            raise DeviceError(f"{self.where}: missing list")
        try:
            self.items = parse_list(p.text)
        except ExprError as e:
            raise DeviceError(f"{self.where}: list: {e}") from None
        if not self.items:
            raise DeviceError(f"{self.where}: empty list")
        for node in self.items:
            missing = sorted(n for n in names_in(node) if n not in ctx.env)
            if missing:
                raise DeviceError(f"{self.where}: undeclared {missing}")
        self.target = self.text("file", "stdout")
        self.fh = None
        if ctx.rank == 0 and self.target != "stdout":
            path = ctx.path(self.target)
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "a" if self.integer("append", ctx.env, 0) else "w")
            ctx.note_output(path)

    def run(self, ctx):
        if ctx.rank != 0:
            return
        vals = [float(evaluate(n, ctx.env.lookup)) for n in self.items]
        line = " ".join(f"{v:.15g}" for v in vals) + "\n"
        if self.fh is not None:
            self.fh.write(line)
        else:
            (ctx.stdout or sys.stdout).write(line)

    def finish(self, ctx):
        if self.fh is not None:
            self.fh.close()
            self.fh = None


# --- singz --------------------------------------------------------------------

# cell corners in order (0,0) (1,0) (1,1) (0,1); edges join consecutive corners
_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))


def _segments(f):
    """Isoline (level 0) segments of one cell from corner values ``f``
    (shape (4,)), by linear interpolation along edges.  A corner counts as
    above the level when ``f > 0``."""
    pts = []
    for e in range(4):
        a, b = _CORNERS[e], _CORNERS[(e + 1) % 4]
        fa, fb = f[e], f[(e + 1) % 4]
        if (fa > 0) != (fb > 0):
            s = fa / (fa - fb)
            pts.append((a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])))
    if len(pts) == 2:
        return [(pts[0], pts[1])]
    if len(pts) == 4:
        return [(pts[0], pts[1]), (pts[2], pts[3])]
    return []


def _intersect(s1, s2):
    (x1, y1), (x2, y2) = s1
    (x3, y3), (x4, y4) = s2
    den = (x2 - x1) * (y4 - y3) - (y2 - y1) * (x4 - x3)
    if den == 0:
        return None
    t = ((x3 - x1) * (y4 - y3) - (y3 - y1) * (x4 - x3)) / den
    u = ((x3 - x1) * (y2 - y1) - (y3 - y1) * (x2 - x1)) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return x1 + t * (x2 - x1), y1 + t * (y2 - y1)
    return None


def find_tips(a, b, mask=None):
    """Intersections of the zero isolines of two 2D fields ``(ny, nx)``.

    Returns a list of ``(x, y)`` in index units, ordered by cell (x
    fastest).  A tip lying on an edge shared by two cells is kept once,
    for the lower-index cell.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ny, nx = a.shape
    if nx < 2 or ny < 2:
        return []
    ok = np.ones((ny, nx), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    cells = ok[:-1, :-1] & ok[:-1, 1:] & ok[1:, :-1] & ok[1:, 1:]

    def corners(f):
        return np.stack([f[:-1, :-1], f[:-1, 1:], f[1:, 1:], f[1:, :-1]])

    ca, cb = corners(a), corners(b)
    above_a, above_b = ca > 0, cb > 0
    cand = cells & above_a.any(0) & ~above_a.all(0) & above_b.any(0) & ~above_b.all(0)
    tips = []
    for j, i in zip(*np.nonzero(cand)):
        for sa in _segments(ca[:, j, i]):
            for sb in _segments(cb[:, j, i]):
                p = _intersect(sa, sb)
                if p is not None:
                    tips.append((i + p[0], j + p[1]))
    out = []
    seen = set()
    for p in tips:
        key = (round(p[0], 12), round(p[1], 12))
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


SINGZ_RESULTS = ("count", "xmean", "ymean", "xstd", "ystd")


@register
class Singz(Device):
    """Tips: crossings of the ``ca`` isoline of layer ``va`` with the ``cb``
    isoline of layer ``vb`` in each z section of the window.  Statistics go
    to the globals named by ``count``, ``xmean``, ``ymean``, ``xstd``,
    ``ystd``; tip lines ``t z x y`` go to ``file`` when given."""

    type = "singz"
    keys = ("va", "vb", "ca", "cb", "file") + SINGZ_RESULTS

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        env = ctx.env
        self.va, self.vb = self.layer("va", ctx), self.layer("vb", ctx)
        if self.va == self.vb:
            raise DeviceError(f"{self.where}: va and vb must differ")
        self.ca, self.cb = self.num("ca", env), self.num("cb", env)
        self.results = {}
        for key in SINGZ_RESULTS:
            if self.has(key):
                name = self.text(key)
                if name not in env:
                    raise DeviceError(f"{self.where}: {key} variable {name!r} not declared")
                self.results[key] = name
        self.fh = None
        if self.has("file") and ctx.rank == 0:
            path = ctx.path(self.text("file"))
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w")
            ctx.note_output(path)
        self.tips = []

    def _local_tips(self, ctx):
        """Tips in cells whose lower corner this worker owns."""
        g = ctx.grid
        w = self.window
        box = g.owned_box(w.lo, (w.hi[0] - 1, w.hi[1] - 1, w.hi[2]))
        if box is None:
            return []
        a, b = box
        hi = (b[0] + 1, b[1] + 1, b[2])
        sl = g.local_slices(a, hi)
        A = g.values[self.va][sl] - self.ca
        B = g.values[self.vb][sl] - self.cb
        M = g.mask[sl]
        out = []
        for k in range(A.shape[0]):
            for x, y in find_tips(A[k], B[k], M[k]):
                out.append((a[2] + k, a[1] + y, a[0] + x))
        return out

    def run(self, ctx):
        ctx.exchange(self.va)
        ctx.exchange(self.vb)
        parts = ctx.comm.gather(self._local_tips(ctx))
        tips = None
        if parts is not None:
            tips = []
            seen = set()
            for z, y, x in sorted(t for p in parts for t in p):
                key = (z, round(y, 12), round(x, 12))
                if key not in seen:
                    seen.add(key)
                    tips.append((z, y, x))
        tips = ctx.comm.bcast(tips)
        self.tips = [(x, y, z) for z, y, x in tips]
        xs = np.array([t[0] for t in self.tips])
        ys = np.array([t[1] for t in self.tips])
        stats = {
            "count": float(len(self.tips)),
            "xmean": float(xs.mean()) if xs.size else 0.0,
            "ymean": float(ys.mean()) if ys.size else 0.0,
            "xstd": float(xs.std()) if xs.size else 0.0,
            "ystd": float(ys.std()) if ys.size else 0.0,
        }
        for key, name in self.results.items():
            ctx.env.set(name, stats[key])
        if self.fh is not None:
            t = ctx.env["t"]
            for x, y, z in self.tips:
                self.fh.write(f"{t} {z} {x:.6f} {y:.6f}\n")

    def finish(self, ctx):
        if self.fh is not None:
            self.fh.close()
            self.fh = None
