"""Devices diff and diffstep."""
from __future__ import annotations

import logging

from .diffusion import DiffusionError, DiffusionOperator
from .ring import Device, DeviceError, register

log = logging.getLogger(__name__)


class _Diffusion(Device):
    """``D`` sets an isotropic coefficient; ``Dpar``/``Dtrans`` the
    along/across-fibre pair.  ``fx,fy,fz`` give a uniform fibre direction
    when the grid carries none."""

    keys = ("D", "Dpar", "Dtrans", "hx", "fx", "fy", "fz")
    layer_range = False

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        env = ctx.env
        if self.has("D"):
            if self.has("Dpar") or self.has("Dtrans"):
                raise DeviceError(f"{self.where}: give either D or Dpar/Dtrans")
            Dpar = Dtrans = self.num("D", env)
        else:
            Dpar = self.num("Dpar", env)
            Dtrans = self.num("Dtrans", env, Dpar)
        hx = self.num("hx", env)
        fibre = (self.num("fx", env, 1.0), self.num("fy", env, 0.0), self.num("fz", env, 0.0))
        self.src = self.window.v0
        self.dst = self.window.v1
        if self.src == self.dst:
            raise DeviceError(f"{self.where}: v0 and v1 must differ")
        w = self.window
        try:
            self.op = DiffusionOperator(ctx.grid, w.lo, w.hi, Dpar, Dtrans, hx, fibre)
        except DiffusionError as e:
            raise DeviceError(f"{self.where}: {e}") from None


@register
class Diff(_Diffusion):
    """Laplacian of layer v0 into layer v1."""

    type = "diff"

    def run(self, ctx):
        ctx.exchange(self.src)
        self.op.diff(self.src, self.dst)


@register
class DiffStep(_Diffusion):
    """Laplacian of layer v0 into scratch layer v1, then a forward Euler
    step of v0."""

    type = "diffstep"
    keys = _Diffusion.keys + ("ht",)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.ht = self.num("ht", ctx.env)
        if self.ht > self.op.stable_ht:
            log.warning("%s: ht=%g exceeds the explicit stability bound %g",
                        self.where, self.ht, self.op.stable_ht)

    def run(self, ctx):
        ctx.exchange(self.src)
        self.op.diffstep(self.src, self.dst, self.ht)
