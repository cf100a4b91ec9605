"""Kinetics devices: euler, rk4 and rushlarsen over the tissue points of a window."""
from __future__ import annotations

import numpy as np

from ..ring import Device, DeviceError, parse_param_block, register
from .ionic import build_rate_tables, get_ionic, rushlarsen_step
from .models import ModelError, get_model
from .solvers import euler_step, rk4_step


class _Kinetics(Device):
    """Layers ``v0..v1`` hold the model variables in order.  ``par`` holds
    model parameters: expressions evaluated once at build time, or ``@N``
    to read the parameter per point from layer N."""

    keys = ("ode", "ht", "par")
    registry = staticmethod(get_model)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        env = ctx.env
        try:
            self.model = self.registry(self.text("ode"))
        except ModelError as e:
            raise DeviceError(f"{self.where}: {e}") from None
        self.ht = self.num("ht", env)
        if self.ht <= 0:
            raise DeviceError(f"{self.where}: ht must be positive")
        w = self.window
        if w.nlayers != self.model.dim:
            raise DeviceError(f"{self.where}: model {self.model.name} has {self.model.dim} "
                              f"variable(s) but layers {w.v0}..{w.v1} give {w.nlayers}")
        self.const, self.from_layer = {}, {}
        block = self.params.get("par")
        if block is not None:
            if block.kind != "block":
                raise DeviceError(f"{self.where}: par must be a {{...}} block")
            for k, p in parse_param_block(block.text, f"{self.where}: par: ").items():
                if p.kind == "layer":
                    if not 0 <= p.layer < ctx.dims.vmax:
                        raise DeviceError(f"{self.where}: par {k}=@{p.layer} outside layers")
                    self.from_layer[k] = p.layer
                elif p.kind == "expr":
                    self.const[k] = env.eval(p.text)
                else:
                    raise DeviceError(f"{self.where}: par {k} must be numeric or @layer")
        try:
            self.model.resolve({**self.const, **{k: 0.0 for k in self.from_layer}})
        except ModelError as e:
            raise DeviceError(f"{self.where}: {e}") from None
        self.points, _ = ctx.grid.active_points(w.lo, w.hi)

    def params_at(self, grid):
        p = dict(self.const)
        for k, v in self.from_layer.items():
            p[k] = grid.flat(v)[self.points]
        return self.model.resolve(p)

    def run(self, ctx):
        if self.points.size == 0:
            return
        g = ctx.grid
        w = self.window
        state = [g.flat(v)[self.points] for v in range(w.v0, w.v1 + 1)]
        new = self.advance(state, self.params_at(g))
        for v, arr in zip(range(w.v0, w.v1 + 1), new):
            if not np.all(np.isfinite(arr)):
                raise DeviceError(f"non-finite value in layer {v}")
            g.flat(v)[self.points] = arr


@register
class Euler(_Kinetics):
    type = "euler"

    def advance(self, state, params):
        return euler_step(self.model, state, self.ht, params)


@register
class RK4(_Kinetics):
    type = "rk4"

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        if self.model.step_style:
            raise DeviceError(f"{self.where}: {self.model.name} is step-style; use euler")

    def advance(self, state, params):
        return rk4_step(self.model, state, self.ht, params)


@register
class RushLarsen(_Kinetics):
    """Ionic models: tabulated Rush-Larsen for gates and Markov chains.
    ``tab=0`` computes coefficients directly at every step."""

    type = "rushlarsen"
    keys = _Kinetics.keys + ("tab", "Vmin", "Vmax", "Vstep")
    registry = staticmethod(get_ionic)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        env = ctx.env
        self.tables = None
        if self.integer("tab", env, 1):
            if self.from_layer:
                raise DeviceError(f"{self.where}: tabulation needs constant parameters (or tab=0)")
            self.tables = build_rate_tables(self.model, self.ht, self.const,
                                            self.num("Vmin", env, -200.0), self.num("Vmax", env, 200.0),
                                            self.num("Vstep", env, 0.01))

    def advance(self, state, params):
        try:
            return rushlarsen_step(self.model, state, self.ht, params, self.tables)
        except ModelError as e:
            raise DeviceError(str(e)) from None
