"""Shared test scaffolding (not oracles: these drive the package)."""
import numpy as np

from ringsim.grid import Grid, GridDims, make_domain
from ringsim.partition import decompose, halo_exchange, run_threads


def global_field(dims, layers=1):
    """Distinct value at every node: 1 + flat index, per layer."""
    n = dims.zmax * dims.ymax * dims.xmax
    return np.stack([(1.0 + np.arange(n) + v * n).reshape(dims.shape) for v in range(layers)])


def exchanged_blocks(dims, topology, layers=1, sentinel=None):
    """Fill each worker's owned block from the global field (optionally
    overriding one node with ``sentinel=(x, y, z, value)``), run one halo
    exchange on threads, and return ``[(lo, hi, local values)]``."""
    dims = GridDims(dims[0], dims[1], dims[2], layers)
    domain = make_domain(dims)
    domain.mask[:] = True
    part = decompose(dims, domain.mask, *topology)
    field = global_field(dims, layers)
    if sentinel is not None:
        x, y, z, value = sentinel
        field[:, z, y, x] = value

    def target(comm):
        g = Grid(domain, part.block_of(comm.rank))
        (x0, y0, z0), (x1, y1, z1) = g.lo, g.hi
        g.values[(slice(None),) + g.owned] = field[:, z0:z1, y0:y1, x0:x1]
        halo_exchange(g, comm, part.neighbors[comm.rank] if comm.size > 1 else None)
        return g.lo, g.hi, g.values.copy()

    return part, field, run_threads(part.nworkers, target)


def expected_local(field, lo, hi):
    padded = np.pad(field, ((0, 0), (1, 1), (1, 1), (1, 1)))
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    return padded[:, z0:z1 + 2, y0:y1 + 2, x0:x1 + 2]
