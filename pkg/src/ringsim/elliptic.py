"""Multigrid solver for ``div(D grad phi) = S`` and the elliptic device.

The unknowns are the tissue points of a window; the nodes surrounding the
window carry Dirichlet data, void nodes give no-flux boundaries through
the stencil.  Levels coarsen by taking every other node (vertex-centred)
while the interval count stays even.  Coarse operators are rediscretized
from the subsampled mask and fibre field; the coarsest level is solved
directly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .diffusion import flat_offset, stencil_offsets, stencil_weights, tensor_field
from .iodev import gather_box
from .ring import Device, DeviceError, register

log = logging.getLogger(__name__)


class EllipticError(RuntimeError):
    pass


class Level:
    """Operator on one grid: box array of shape ``(nz, ny, nx)`` whose outer
    node ring (on active axes) is Dirichlet data or void."""

    def __init__(self, mask, fibres, Dpar, Dtrans, hx, active):
        self.shape = mask.shape
        self.mask = mask
        self.fibres = fibres
        self.hx = hx
        self.active = active
        interior = np.zeros(self.shape, dtype=bool)
        sl = tuple(slice(1, n - 1) if act else slice(None)
                   for n, act in zip(self.shape, (active[2], active[1], active[0])))
        interior[sl] = True
        self.unknown = interior & mask
        self.points = np.flatnonzero(self.unknown)
        if self.points.size == 0:
            raise EllipticError("no unknowns: the window holds no tissue")
        lz, ly, lx = np.unravel_index(self.points, self.shape)
        self.dirichlet = mask & ~interior
        D = tensor_field(Dpar, Dtrans, fibres)
        W = stencil_weights(self.points, self.shape, mask, D, hx, active)
        qs = stencil_offsets(active)
        keep = [r for r in range(1, W.shape[0]) if np.any(W[r] != 0)]
        self.diag = W[0]
        if np.any(self.diag >= 0):
            raise EllipticError("operator has a non-negative diagonal entry (isolated point)")
        self.W = W[keep]
        self.offsets = np.array([flat_offset(qs[r - 1], self.shape) for r in keep], dtype=np.intp)
        parity = sum(((c % 2) << k) for k, c in enumerate((lx, ly, lz)))
        self.colours = [np.flatnonzero(parity == c) for c in range(8) if np.any(parity == c)]
        self._lu = None

    @property
    def size(self):
        return self.points.size

    def apply(self, e):
        """``(A e)`` at the unknowns for a flat box array ``e``."""
        P = self.points
        acc = self.diag * e[P]
        for w, o in zip(self.W, self.offsets):
            acc = acc + w * e[P + o]
        return acc

    def residual(self, e, r):
        return r - self.apply(e)

    def gauss_seidel(self, e, r, sweeps=1):
        """Multicolour Gauss-Seidel: points of one parity class do not
        neighbour each other, so each class updates at once."""
        P = self.points
        for _ in range(sweeps):
            for cls in self.colours:
                idx = P[cls]
                acc = r[cls]
                for w, o in zip(self.W, self.offsets):
                    acc = acc - w[cls] * e[idx + o]
                e[idx] = acc / self.diag[cls]
        return e

    def jacobi(self, e, r, sweeps=1, omega=1.0):
        P = self.points
        for _ in range(sweeps):
            acc = r.copy()
            for w, o in zip(self.W, self.offsets):
                acc = acc - w * e[P + o]
            e[P] = (1.0 - omega) * e[P] + omega * acc / self.diag
        return e

    def matrix(self):
        index = np.full(int(np.prod(self.shape)), -1, dtype=np.intp)
        index[self.points] = np.arange(self.size)
        rows, cols, vals = [np.arange(self.size)], [np.arange(self.size)], [self.diag]
        for w, o in zip(self.W, self.offsets):
            j = index[self.points + o]
            ok = j >= 0
            rows.append(np.flatnonzero(ok))
            cols.append(j[ok])
            vals.append(w[ok])
        return scipy.sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                       shape=(self.size, self.size))

    def direct(self, r):
        if self._lu is None:
            self._lu = scipy.sparse.linalg.splu(self.matrix())
        e = np.zeros(int(np.prod(self.shape)))
        e[self.points] = self._lu.solve(r)
        return e


def _coarsenable(shape, active):
    ok = False
    for n, act in zip(shape, (active[2], active[1], active[0])):
        if act:
            if (n - 1) % 2 or n - 1 < 4:
                return False
            ok = True
    return ok


def _subsample(arr, active, lead=0):
    sl = (slice(None),) * lead + tuple(slice(None, None, 2) if act else slice(None)
                                       for act in (active[2], active[1], active[0]))
    return arr[sl]


def restrict(fine, active):
    """Full weighting ([1/4, 1/2, 1/4] per active axis) onto even nodes."""
    out = fine
    for ax, act in zip((0, 1, 2), (active[2], active[1], active[0])):
        if not act:
            continue
        n = out.shape[ax]
        idx = [slice(None)] * 3
        c = np.zeros(out.shape[:ax] + ((n + 1) // 2,) + out.shape[ax + 1:])
        mid = [slice(None)] * 3
        mid[ax] = slice(1, -1)
        even = list(idx)
        even[ax] = slice(2, n - 1, 2)
        left = list(idx)
        left[ax] = slice(1, n - 2, 2)
        right = list(idx)
        right[ax] = slice(3, n, 2)
        c[tuple(mid)] = 0.25 * out[tuple(left)] + 0.5 * out[tuple(even)] + 0.25 * out[tuple(right)]
        out = c
    return out


def prolong(coarse, fine_shape, active):
    """Multilinear interpolation from even nodes to all nodes."""
    out = coarse
    for ax, act in zip((0, 1, 2), (active[2], active[1], active[0])):
        if not act:
            continue
        n = fine_shape[ax]
        f = np.zeros(out.shape[:ax] + (n,) + out.shape[ax + 1:])
        even = [slice(None)] * 3
        even[ax] = slice(0, n, 2)
        odd = [slice(None)] * 3
        odd[ax] = slice(1, n, 2)
        lo = [slice(None)] * 3
        lo[ax] = slice(0, -1)
        hi = [slice(None)] * 3
        hi[ax] = slice(1, None)
        f[tuple(even)] = out
        f[tuple(odd)] = 0.5 * (out[tuple(lo)] + out[tuple(hi)])
        out = f
    return out


@dataclass
class SolveReport:
    residual: float
    initial: float
    vcycles: int
    sweeps: int
    converged: bool


class Multigrid:
    """Hierarchy over a box; ``mask``/``fibres`` are box arrays
    ``(nz, ny, nx)`` and ``(3, nz, ny, nx)``."""

    def __init__(self, mask, fibres, Dpar, Dtrans, hx, active, upper_level=3,
                 smoother="gs", preiter=1, postiter=2, delta=0.0, omega=0.8):
        if smoother not in ("gs", "jacobi"):
            raise EllipticError(f"unknown smoother {smoother!r}")
        self.active = active
        self.smoother, self.preiter, self.postiter = smoother, int(preiter), int(postiter)
        self.delta, self.omega = float(delta), float(omega)
        mask = np.asarray(mask, dtype=bool)
        fibres = np.asarray(fibres, dtype=float)
        self.levels = [Level(mask, fibres, Dpar, Dtrans, hx, active)]
        if not np.any(self.levels[0].dirichlet):
            raise EllipticError("no Dirichlet nodes around the window: the problem is singular")
        while len(self.levels) <= upper_level and _coarsenable(mask.shape, active):
            mask = _subsample(mask, active)
            fibres = _subsample(fibres, active, lead=1)
            hx = 2.0 * hx
            try:
                self.levels.append(Level(mask, fibres, Dpar, Dtrans, hx, active))
            except EllipticError:
                break
        self.sweeps = 0

    def smooth(self, lev, e, r, sweeps):
        level = self.levels[lev]
        if sweeps <= 0:
            return e
        start = None
        for k in range(sweeps):
            if self.smoother == "gs":
                level.gauss_seidel(e, r)
            else:
                level.jacobi(e, r, omega=self.omega)
            self.sweeps += 1
            if self.delta > 0 and k + 1 < sweeps:
                res = np.max(np.abs(level.residual(e, r)))
                if start is None:
                    start = np.max(np.abs(r)) if np.any(r) else 0.0
                if res <= self.delta * start:
                    break
        return e

    def _to_coarse(self, lev, res):
        fine = self.levels[lev]
        coarse = self.levels[lev + 1]
        full = np.zeros(int(np.prod(fine.shape)))
        full[fine.points] = res
        return restrict(full.reshape(fine.shape), self.active).reshape(-1)[coarse.points]

    def _correct(self, lev, e, ec):
        fine = self.levels[lev]
        coarse = self.levels[lev + 1]
        up = prolong(ec.reshape(coarse.shape), fine.shape, self.active).reshape(-1)
        e[fine.points] += up[fine.points]
        return e

    def vcycle(self, lev, e, r):
        level = self.levels[lev]
        if lev == len(self.levels) - 1:
            return level.direct(r)
        self.smooth(lev, e, r, self.preiter)
        rc = self._to_coarse(lev, level.residual(e, r))
        ec = self.vcycle(lev + 1, np.zeros(int(np.prod(self.levels[lev + 1].shape))), rc)
        self._correct(lev, e, ec)
        self.smooth(lev, e, r, self.postiter)
        return e

    def fmg(self, r):
        """Full multigrid start for ``A e = r`` with zero boundary data."""
        rs = [r]
        for lev in range(len(self.levels) - 1):
            rs.append(self._to_coarse(lev, rs[-1]))
        e = self.levels[-1].direct(rs[-1])
        for lev in range(len(self.levels) - 2, -1, -1):
            e = self._correct(lev, np.zeros(int(np.prod(self.levels[lev].shape))), e)
            e = self.vcycle(lev, e, rs[lev])
        return e

    def solve(self, r, tolerance, vcycles=20, maxiter=10 ** 6, e=None, fmg=True):
        """Correction ``e`` (flat box array) with ``|r - A e|_inf <= tolerance``.
        ``fmg=False`` skips the full-multigrid start (for good initial guesses)."""
        fine = self.levels[0]
        self.sweeps = 0
        initial = float(np.max(np.abs(r))) if r.size else 0.0
        if e is None:
            e = np.zeros(int(np.prod(fine.shape)))
        res = initial
        cycles = 0
        if res <= tolerance:
            return e, SolveReport(res, initial, 0, 0, True)
        if len(self.levels) == 1:
            e = fine.direct(r)
            res = float(np.max(np.abs(fine.residual(e, r))))
            return e, SolveReport(res, initial, 0, 0, res <= tolerance)
        if fmg:
            e = e + self.fmg(fine.residual(e, r))
            res = float(np.max(np.abs(fine.residual(e, r))))
        while res > tolerance and self.sweeps < maxiter:
            before = res
            for _ in range(int(vcycles)):
                e = self.vcycle(0, e, r)
                cycles += 1
                res = float(np.max(np.abs(fine.residual(e, r))))
                if res <= tolerance or self.sweeps >= maxiter:
                    break
            if res > tolerance and not res < before:
                raise EllipticError(f"multigrid diverged: residual {res:.3e} after {cycles} V-cycles "
                                    f"(initial {initial:.3e})")
        ok = res <= tolerance
        if not ok:
            log.warning("multigrid stopped at maxiter=%d with residual %.3e > %.3e",
                        maxiter, res, tolerance)
        return e, SolveReport(res, initial, cycles, self.sweeps, ok)


@register
class Elliptic(Device):
    """Solves ``div(D grad p) = s`` for layer v1 given layer v0 over the
    window; nodes around the window hold Dirichlet values of layer v1."""

    type = "elliptic"
    keys = ("D", "Dpar", "Dtrans", "hx", "fx", "fy", "fz", "tolerance", "delta", "upper_level",
            "vcycles", "preiter", "postiter", "maxiter", "smoother", "omega", "extrapolate")
    layer_range = False

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        env = ctx.env
        w = self.window
        if w.v0 == w.v1:
            raise DeviceError(f"{self.where}: v0 (source) and v1 (solution) must differ")
        if self.has("D"):
            Dpar = Dtrans = self.num("D", env)
        else:
            Dpar = self.num("Dpar", env)
            Dtrans = self.num("Dtrans", env, Dpar)
        hx = self.num("hx", env)
        self.tolerance = self.num("tolerance", env, 1e-8)
        self.vcycles = self.integer("vcycles", env, 20)
        self.maxiter = int(self.num("maxiter", env, 1e6))
        smoother = self.text("smoother", "gs")
        # start from a quadratic extrapolation of the last three solutions
        self.extrapolate = bool(self.num("extrapolate", env, 0))
        self.history = []
        d = ctx.dims
        active = (d.xmax > 1, d.ymax > 1, d.zmax > 1)
        limits = (d.xmax, d.ymax, d.zmax)
        lo, hi = [], []
        for a in range(3):
            if active[a]:
                if w.lo[a] < 1 or w.hi[a] > limits[a] - 2:
                    raise DeviceError(f"{self.where}: window needs a surrounding node layer on axis {'xyz'[a]}")
                lo.append(w.lo[a] - 1)
                hi.append(w.hi[a] + 1)
            else:
                lo.append(w.lo[a])
                hi.append(w.hi[a])
        self.lo, self.hi = tuple(lo), tuple(hi)
        dom = ctx.grid.domain
        sl = (slice(lo[2], hi[2] + 1), slice(lo[1], hi[1] + 1), slice(lo[0], hi[0] + 1))
        mask = dom.mask[sl]
        if dom.fibres is not None:
            fibres = dom.fibres[(slice(None),) + sl]
        else:
            if Dpar != Dtrans and dom.geometry is not None:
                raise DeviceError(f"{self.where}: Dpar != Dtrans needs fibre data (state anisotropy=1)")
            f = np.array([self.num("fx", env, 1.0), self.num("fy", env, 0.0), self.num("fz", env, 0.0)])
            f = f / np.linalg.norm(f)
            fibres = np.broadcast_to(f.reshape(3, 1, 1, 1), (3,) + mask.shape).copy()
        self.mg = None
        if ctx.rank == 0:
            try:
                self.mg = Multigrid(mask, fibres, Dpar, Dtrans, hx, active,
                                    upper_level=self.integer("upper_level", env, 3),
                                    smoother=smoother, preiter=self.integer("preiter", env, 1),
                                    postiter=self.integer("postiter", env, 2),
                                    delta=self.num("delta", env, 0.0), omega=self.num("omega", env, 0.8))
            except EllipticError as e:
                raise DeviceError(f"{self.where}: {e}") from None
        self.report = None

    def run(self, ctx):
        w = self.window
        src = gather_box(ctx, self.lo, self.hi, slice(w.v0, w.v0 + 1))
        sol = gather_box(ctx, self.lo, self.hi, slice(w.v1, w.v1 + 1))
        out = None
        if ctx.rank == 0:
            level = self.mg.levels[0]
            phi = sol[0].reshape(-1)
            warm = self.extrapolate and len(self.history) == 3
            if warm:
                a, b, c = self.history
                guess = phi.copy()
                guess[level.points] = 3.0 * (c - b) + a
                phi = guess
            rhs = src[0].reshape(-1)[level.points]
            r = level.residual(phi, rhs)
            try:
                e, self.report = self.mg.solve(r, self.tolerance, self.vcycles, self.maxiter, fmg=not warm)
            except EllipticError as err:
                out = err
            else:
                phi = phi + e
                out = phi.reshape(sol.shape[1:])
                if self.extrapolate:
                    self.history = (self.history + [phi[level.points].copy()])[-3:]
        out = ctx.comm.bcast(out)
        if isinstance(out, Exception):
            raise DeviceError(str(out))
        g = ctx.grid
        box = g.owned_box(w.lo, w.hi)
        if box is None:
            return
        a, b = box
        sub = out[a[2] - self.lo[2]:b[2] - self.lo[2] + 1, a[1] - self.lo[1]:b[1] - self.lo[1] + 1,
                  a[0] - self.lo[0]:b[0] - self.lo[0] + 1]
        sl = g.local_slices(a, b)
        m = g.mask[sl]
        g.values[w.v1][sl] = np.where(m, sub, g.values[w.v1][sl])
