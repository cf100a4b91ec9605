"""Anisotropic diffusion stencil on masked grids.

For a tissue point p the operator is ``(Lu)_p = sum_q w_q u_{p+q}`` over
q in {0,+-1}^3.  Weights to void neighbours vanish, the tensor-gradient
correction needs both neighbours along its axis in tissue, and the
central weight makes every row sum to zero, which gives non-flux
boundaries on arbitrary voxel shapes.
"""
from __future__ import annotations

import itertools
import logging

import numpy as np

log = logging.getLogger(__name__)


class DiffusionError(ValueError):
    pass


def tensor_field(Dpar, Dtrans, fibres):
    """``D_jk = Dtrans delta_jk + (Dpar - Dtrans) f_j f_k``.

    ``fibres`` has shape ``(3, ...)`` (components x, y, z); the result has
    shape ``(3, 3, ...)``.
    """
    f = np.asarray(fibres, dtype=float)
    D = (Dpar - Dtrans) * f[:, None] * f[None, :]
    for j in range(3):
        D[j, j] = D[j, j] + Dtrans
    return D


def build_tensor(Dpar, Dtrans, fibre=(1.0, 0.0, 0.0)):
    """Single-point tensor for a fibre direction (normalized here)."""
    if Dtrans <= 0 or Dpar < Dtrans:
        log.warning("expected Dpar >= Dtrans > 0, got Dpar=%g Dtrans=%g", Dpar, Dtrans)
    f = np.asarray(fibre, dtype=float)
    norm = np.linalg.norm(f)
    if norm == 0:
        raise DiffusionError("zero fibre vector")
    return tensor_field(Dpar, Dtrans, f / norm)


def stencil_offsets(active_axes):
    """Fixed-order list of q in {0,+-1}^3 (as (qx, qy, qz)), without the
    centre and without the fully diagonal corners, restricted to axes that
    have more than one node."""
    rng = [(-1, 0, 1) if a else (0,) for a in active_axes]
    out = []
    for qz, qy, qx in itertools.product(rng[2], rng[1], rng[0]):
        q = (qx, qy, qz)
        nz = sum(c != 0 for c in q)
        if nz == 0 or nz == 3:
            continue
        out.append(q)
    return out


def flat_offset(q, shape):
    """Offset in a C-ordered ``(z, y, x)`` array of ``shape`` for q=(qx,qy,qz)."""
    nz, ny, nx = shape
    return q[2] * ny * nx + q[1] * nx + q[0]


def stencil_weights(points, shape, mask, D, hx, active_axes):
    """Weights ``(1 + nq, npoints)``: row 0 is the centre, then one row per
    offset of ``stencil_offsets(active_axes)``.

    ``points`` are flat indices into arrays of ``shape`` whose one-node
    neighbourhood lies inside the array; ``mask`` is the tissue indicator
    and ``D`` the ``(3, 3) + shape`` tensor field.
    """
    qs = stencil_offsets(active_axes)
    chi = np.asarray(mask, dtype=float).ravel()
    Dflat = np.asarray(D, dtype=float).reshape(3, 3, -1)
    h2 = hx * hx
    P = np.asarray(points, dtype=np.intp)
    unit = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    off = {q: flat_offset(q, shape) for q in qs}

    # divergence of the tensor: sum_j (D_jk(p+e_j) - D_jk(p-e_j)); void
    # neighbours contribute the tensor of p itself
    div = np.zeros((3, P.size))
    for k in range(3):
        for j in range(3):
            if not active_axes[j]:
                continue
            o = flat_offset(unit[j], shape)
            Dp = Dflat[j, k, P]
            plus = np.where(chi[P + o] > 0, Dflat[j, k, P + o], Dp)
            minus = np.where(chi[P - o] > 0, Dflat[j, k, P - o], Dp)
            div[k] += plus - minus

    W = np.zeros((1 + len(qs), P.size))
    for r, q in enumerate(qs, start=1):
        chi_q = chi[P + off[q]]
        nzax = [a for a in range(3) if q[a] != 0]
        if len(nzax) == 1:
            j = nzax[0]
            wbar = chi_q * Dflat[j, j, P] / h2
            sign = float(q[j])
            chi_m = chi[P - off[q]]
            wtil = chi_q * chi_m / (4.0 * h2) * sign * div[j]
            W[r] = wbar + wtil
        else:
            j, k = nzax
            same = q[j] == q[k]
            W[r] = chi_q * (0.5 if same else -0.5) * Dflat[j, k, P] / h2
    centre = np.zeros(P.size)
    for r in range(1, W.shape[0]):
        centre = centre - W[r]
    W[0] = centre
    return W


def apply_stencil(W, offsets, points, src):
    """``sum_q w_q src[p+q]`` in fixed order (centre first)."""
    acc = W[0] * src[points]
    for r, o in enumerate(offsets, start=1):
        acc = acc + W[r] * src[points + o]
    return acc


class DiffusionOperator:
    """Precomputed stencil over the tissue points of a box owned by a grid.

    ``lo``/``hi`` are inclusive global ``(x, y, z)`` corners.  Fibres come
    from the grid when it carries them, otherwise ``fibre`` is used
    everywhere.
    """

    def __init__(self, grid, lo, hi, Dpar, Dtrans, hx, fibre=(1.0, 0.0, 0.0)):
        if hx <= 0:
            raise DiffusionError(f"hx must be positive, got {hx}")
        if Dtrans <= 0 or Dpar < Dtrans:
            log.warning("expected Dpar >= Dtrans > 0, got Dpar=%g Dtrans=%g", Dpar, Dtrans)
        self.grid = grid
        self.Dpar, self.Dtrans, self.hx = float(Dpar), float(Dtrans), float(hx)
        dims = grid.dims
        self.active_axes = (dims.xmax > 1, dims.ymax > 1, dims.zmax > 1)
        shape = grid.local_shape
        if grid.fibres is not None:
            fib = grid.fibres
        else:
            if Dpar != Dtrans and grid.domain.geometry is not None:
                raise DiffusionError("Dpar != Dtrans needs fibre data (state anisotropy=1)")
            f = np.asarray(fibre, dtype=float)
            f = f / np.linalg.norm(f)
            fib = np.broadcast_to(f.reshape(3, 1, 1, 1), (3,) + shape)
        D = tensor_field(self.Dpar, self.Dtrans, fib)
        self.points, self.coords = grid.active_points(lo, hi)
        self.qs = stencil_offsets(self.active_axes)
        self.offsets = np.array([flat_offset(q, shape) for q in self.qs], dtype=np.intp)
        self.weights = stencil_weights(self.points, shape, grid.mask, D, self.hx, self.active_axes)
        trace = sum(D[j, j].max() for j in range(3) if self.active_axes[j])
        self.stable_ht = hx * hx / (2.0 * trace) if trace > 0 else np.inf

    def apply(self, src_flat):
        return apply_stencil(self.weights, self.offsets, self.points, src_flat)

    def diff(self, src, dst):
        """``dst[p] = (L src)_p`` at the operator's points."""
        g = self.grid
        g.flat(dst)[self.points] = self.apply(g.flat(src))

    def diffstep(self, layer, scratch, ht):
        """Laplacian into ``scratch``, then a forward Euler step of ``layer``."""
        g = self.grid
        self.diff(layer, scratch)
        u = g.flat(layer)
        u[self.points] = u[self.points] + ht * g.flat(scratch)[self.points]
