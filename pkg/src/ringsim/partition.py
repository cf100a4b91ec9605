"""Domain decomposition, worker channels and halo exchange.

Workers run the same ring in lockstep, each on its own block of the grid.
All cross-worker traffic goes through a ``Comm``: ordered, reliable
point-to-point channels plus gather/broadcast built on top of them.
"""
from __future__ import annotations

import itertools
import math
import multiprocessing
import queue
import threading
from dataclasses import dataclass, field

import numpy as np


class PartitionError(ValueError):
    pass


def split_sizes(n, k):
    """Sizes of ``k`` near-equal subintervals of ``n``; the first ``n mod k``
    get the extra node."""
    if k < 1 or k > n:
        raise PartitionError(f"cannot split {n} nodes into {k} subintervals")
    q, r = divmod(n, k)
    return [q + 1] * r + [q] * (k - r)


def _bounds(n, k):
    edges = np.concatenate([[0], np.cumsum(split_sizes(n, k))])
    return [(int(edges[i]), int(edges[i + 1])) for i in range(k)]


FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


@dataclass
class Partition:
    """Blocks in x-fastest order; ``ranks[b]`` is the worker owning block
    ``b`` or None when the block holds no tissue (idle, not allocated)."""

    splits: tuple
    blocks: list
    tissue: list
    ranks: list
    neighbors: dict = field(default_factory=dict)

    @property
    def nworkers(self):
        return sum(r is not None for r in self.ranks)

    @property
    def idle(self):
        return [b for b, r in enumerate(self.ranks) if r is None]

    def block_of(self, rank):
        return self.blocks[self.ranks.index(rank)]

    def describe(self):
        lines = [f"splits {self.splits}: {len(self.blocks)} subdomains, "
                 f"{self.nworkers} active, {len(self.idle)} idle"]
        for b, ((lo, hi), n, r) in enumerate(zip(self.blocks, self.tissue, self.ranks)):
            who = "idle" if r is None else f"rank {r}"
            size = tuple(hi[a] - lo[a] for a in range(3))
            lines.append(f"  block {b}: origin {lo} size {size} tissue {n} {who}")
        return "\n".join(lines)


def decompose(dims, mask=None, nx=1, ny=1, nz=1, elide=True):
    """Split the grid into ``nx*ny*nz`` blocks; tissue-free blocks are idle
    when ``elide`` is set.  ``mask`` is the global ``(z, y, x)`` tissue mask."""
    splits = (int(nx), int(ny), int(nz))
    if min(splits) < 1:
        raise PartitionError(f"split counts must be positive, got {splits}")
    for n, k, axis in zip((dims.xmax, dims.ymax, dims.zmax), splits, "xyz"):
        if k > n:
            raise PartitionError(f"{axis} split {k} exceeds grid size {n}")
    bx, by, bz = _bounds(dims.xmax, nx), _bounds(dims.ymax, ny), _bounds(dims.zmax, nz)
    blocks, tissue, ranks, index = [], [], [], {}
    rank = 0
    for k, j, i in itertools.product(range(nz), range(ny), range(nx)):
        lo = (bx[i][0], by[j][0], bz[k][0])
        hi = (bx[i][1], by[j][1], bz[k][1])
        n = int(np.count_nonzero(mask[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]])) if mask is not None \
            else (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
        index[(i, j, k)] = len(blocks)
        blocks.append((lo, hi))
        tissue.append(n)
        if n == 0 and elide:
            ranks.append(None)
        else:
            ranks.append(rank)
            rank += 1
    if rank == 0:
        raise PartitionError("no tissue in any subdomain")
    part = Partition(splits, blocks, tissue, ranks)
    for (i, j, k), b in index.items():
        if ranks[b] is None:
            continue
        nb = {}
        for face, (di, dj, dk) in zip(FACES, ((-1, 0, 0), (1, 0, 0), (0, -1, 0),
                                             (0, 1, 0), (0, 0, -1), (0, 0, 1))):
            other = index.get((i + di, j + dj, k + dk))
            nb[face] = None if other is None else ranks[other]
        part.neighbors[ranks[b]] = nb
    return part


def auto_topology(nworkers, dims):
    """Factorization of ``nworkers`` with the least total cut area."""
    best, best_cost = None, None
    for nx in range(1, nworkers + 1):
        if nworkers % nx:
            continue
        for ny in range(1, nworkers // nx + 1):
            if (nworkers // nx) % ny:
                continue
            nz = nworkers // nx // ny
            if nx > dims.xmax or ny > dims.ymax or nz > dims.zmax:
                continue
            X, Y, Z = dims.xmax, dims.ymax, dims.zmax
            # total area of the cuts between blocks
            cost = ((nx - 1) * Y * Z + (ny - 1) * X * Z + (nz - 1) * X * Y, nx, ny, nz)
            if best_cost is None or cost < best_cost:
                best, best_cost = (nx, ny, nz), cost
    if best is None:
        raise PartitionError(f"cannot place {nworkers} workers on grid {dims}")
    return best


# --- channels -------------------------------------------------------------

class Comm:
    """Point-to-point channels plus collectives.  Subclasses provide
    ``send``/``recv``; every worker must issue collectives in the same
    order."""

    rank = 0
    size = 1

    def send(self, dest, obj):
        raise NotImplementedError

    def recv(self, src):
        raise NotImplementedError

    def gather(self, obj, root=0):
        if self.size == 1:
            return [obj]
        if self.rank != root:
            self.send(root, obj)
            return None
        return [obj if r == root else self.recv(r) for r in range(self.size)]

    def bcast(self, obj, root=0):
        if self.size == 1:
            return obj
        if self.rank == root:
            for r in range(self.size):
                if r != root:
                    self.send(r, obj)
            return obj
        return self.recv(root)

    def barrier(self):
        self.bcast(self.gather(None))

    def allreduce(self, values, op):
        chunks = self.gather(values)
        return self.bcast(reduce_values(chunks, op) if self.rank == 0 else None)


class SerialComm(Comm):
    def send(self, dest, obj):
        raise PartitionError("serial run has no peers")

    def recv(self, src):
        raise PartitionError("serial run has no peers")


class QueueComm(Comm):
    """Channels over a shared dict of FIFO queues keyed by (src, dst)."""

    def __init__(self, rank, size, queues, abort=None, timeout=3600.0):
        self.rank = rank
        self.size = size
        self._queues = queues
        self.abort = abort
        self.timeout = timeout

    def send(self, dest, obj):
        self._queues[(self.rank, dest)].put(obj)

    def recv(self, src):
        q = self._queues[(src, self.rank)]
        waited = 0.0
        while True:
            try:
                return q.get(timeout=0.1)
            except queue.Empty:
                waited += 0.1
                if self.abort is not None and self.abort.is_set():
                    raise PartitionError(f"rank {self.rank}: aborted, a peer failed") from None
                if waited > self.timeout:
                    raise PartitionError(f"rank {self.rank}: no message from rank {src}") from None


def thread_comms(size, abort=None):
    queues = {(a, b): queue.Queue() for a in range(size) for b in range(size) if a != b}
    return [QueueComm(r, size, queues, abort) for r in range(size)]


def process_queues(size, ctx):
    return {(a, b): ctx.Queue() for a in range(size) for b in range(size) if a != b}


def run_threads(size, target):
    """Run ``target(comm)`` on ``size`` threads; return per-rank results."""
    abort = threading.Event()
    comms = thread_comms(size, abort)
    results = [None] * size
    errors = []

    def body(c):
        try:
            results[c.rank] = target(c)
        except BaseException as e:  # noqa: BLE001 - reported to caller
            errors.append((c.rank, e))
            abort.set()

    threads = [threading.Thread(target=body, args=(c,), daemon=True) for c in comms]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        first = [e for e in errors if not str(e[1]).endswith("a peer failed")] or errors
        raise min(first, key=lambda e: e[0])[1]
    return results


def _process_body(rank, size, queues, abort, target, out):
    comm = QueueComm(rank, size, queues, abort)
    try:
        out.put((rank, True, target(comm)))
    except BaseException as e:  # noqa: BLE001
        abort.set()
        out.put((rank, False, f"{type(e).__name__}: {e}"))


def run_processes(size, target):
    """Run ``target(comm)`` in ``size`` forked processes; return per-rank results."""
    ctx = multiprocessing.get_context("fork")
    queues = process_queues(size, ctx)
    out = ctx.Queue()
    abort = ctx.Event()
    procs = [ctx.Process(target=_process_body, args=(r, size, queues, abort, target, out), daemon=True)
             for r in range(size)]
    for p in procs:
        p.start()
    results = [None] * size
    failures = []
    for _ in range(size):
        rank, ok, value = out.get()
        if ok:
            results[rank] = value
        else:
            failures.append((rank, value))
    for p in procs:
        p.join()
    if failures:
        first = [f for f in failures if not f[1].endswith("a peer failed")] or failures
        rank, msg = min(first)
        raise PartitionError(f"worker {rank} failed: {msg}")
    return results


# --- reductions -----------------------------------------------------------

REDUCTIONS = ("max", "min", "sum", "mean")


def reduce_values(chunks, op):
    """Reduce per-worker value arrays; exact-rounded sums make the result
    independent of how the points were distributed."""
    if op not in REDUCTIONS:
        raise PartitionError(f"unknown reduction {op!r}")
    vals = np.concatenate([np.asarray(c, dtype=float).ravel() for c in chunks])
    if vals.size == 0:
        raise PartitionError("reduction over an empty set")
    if op == "max":
        return float(vals.max())
    if op == "min":
        return float(vals.min())
    total = math.fsum(vals.tolist())
    return total if op == "sum" else total / vals.size


def global_reduce(comm, op, values):
    return comm.allreduce(np.asarray(values, dtype=float), op)


# --- halo exchange --------------------------------------------------------

_AXIS = {"x": 3, "y": 2, "z": 1}


def _plane(arr, axis, index):
    sl = [slice(None)] * arr.ndim
    sl[axis] = index
    return tuple(sl)


def halo_exchange(grid, comm, neighbors, layers=None):
    """Fill the one-deep halo of ``grid`` from face neighbours.

    Exchanges run in the order x-, x+, y-, y+, z-, z+.  Each plane spans the
    full local extent of the other axes, halo included, so values received
    earlier are forwarded and diagonal neighbours come out right.
    """
    if neighbors is None or comm.size == 1:
        return
    if isinstance(layers, (int, np.integer)):
        layers = slice(int(layers), int(layers) + 1)
    vals = grid.values if layers is None else grid.values[layers]
    for name in "xyz":
        ax = _AXIS[name]
        lo_nb, hi_nb = neighbors[name + "-"], neighbors[name + "+"]
        n = vals.shape[ax]
        # toward -axis: my first owned plane fills the +halo of my lower neighbour
        if lo_nb is not None:
            comm.send(lo_nb, np.ascontiguousarray(vals[_plane(vals, ax, 1)]))
        if hi_nb is not None:
            vals[_plane(vals, ax, n - 1)] = _checked(comm.recv(hi_nb), vals[_plane(vals, ax, n - 1)].shape)
        # toward +axis
        if hi_nb is not None:
            comm.send(hi_nb, np.ascontiguousarray(vals[_plane(vals, ax, n - 2)]))
        if lo_nb is not None:
            vals[_plane(vals, ax, 0)] = _checked(comm.recv(lo_nb), vals[_plane(vals, ax, 0)].shape)


def _checked(buf, shape):
    if buf.shape != shape:
        raise PartitionError(f"halo message shape {buf.shape} != expected {shape}")
    return buf
