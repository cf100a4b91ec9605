import numpy as np
import pytest
import scipy.sparse.linalg
from hypothesis import given, settings, strategies as st

from ringsim.elliptic import EllipticError, Level, Multigrid, prolong, restrict
from ringsim.ring import DeviceError
from ringsim.sim import run_text

ACTIVE2 = (True, True, False)


def square(n, fibre=(1.0, 0.0, 0.0)):
    mask = np.ones((1, n, n), dtype=bool)
    fib = np.broadcast_to(np.reshape(fibre, (3, 1, 1, 1)), (3, 1, n, n)).copy()
    return mask, fib


def test_prolong_linear_exact():
    cz, cy, cx = np.meshgrid(np.arange(1), np.arange(5) * 2.0, np.arange(5) * 2.0, indexing="ij")
    fine = prolong(3 * cx - cy + 1, (1, 9, 9), ACTIVE2)
    z, y, x = np.meshgrid(np.arange(1), np.arange(9.0), np.arange(9.0), indexing="ij")
    np.testing.assert_allclose(fine, 3 * x - y + 1, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([5, 9, 17]))
def test_restriction_is_scaled_transpose(seed, n):
    rng = np.random.default_rng(seed)
    m = (n + 1) // 2
    f = np.zeros((1, n, n))
    f[:, 1:-1, 1:-1] = rng.normal(size=(1, n - 2, n - 2))
    c = np.zeros((1, m, m))
    c[:, 1:-1, 1:-1] = rng.normal(size=(1, m - 2, m - 2))
    lhs = 4.0 * np.sum(restrict(f, ACTIVE2) * c)
    rhs = np.sum(f * prolong(c, (1, n, n), ACTIVE2))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n, fibre, Dpar, Dtrans", [(33, (1, 0, 0), 1.0, 1.0), (33, (1, 1, 0), 3.0, 0.5),
                                                    (17, (0.3, 1, 0), 2.0, 0.2)])
def test_multigrid_matches_direct(n, fibre, Dpar, Dtrans):
    mask, fib = square(n, fibre)
    mg = Multigrid(mask, fib, Dpar, Dtrans, 1.0 / (n - 1), ACTIVE2)
    assert len(mg.levels) > 1
    fine = mg.levels[0]
    rng = np.random.default_rng(0)
    r = rng.normal(size=fine.size)
    e, rep = mg.solve(r, 1e-9)
    assert rep.converged and rep.residual <= 1e-9
    ref = scipy.sparse.linalg.spsolve(fine.matrix().tocsr(), r)
    scale = np.abs(ref).max()
    np.testing.assert_allclose(e[fine.points], ref, atol=1e-8 * scale)


def test_vcycle_contracts():
    mask, fib = square(65)
    mg = Multigrid(mask, fib, 1.0, 1.0, 1 / 64, ACTIVE2)
    fine = mg.levels[0]
    r = np.random.default_rng(1).normal(size=fine.size)
    e = np.zeros(65 * 65)
    res = [np.abs(r).max()]
    for _ in range(6):
        e = mg.vcycle(0, e, r)
        res.append(np.abs(fine.residual(e, r)).max())
    factors = np.array(res[1:]) / np.array(res[:-1])
    assert factors.max() < 0.5


def test_manufactured_solution_second_order():
    errs = []
    for n in (17, 33, 65):
        h = 1.0 / (n - 1)
        mask, fib = square(n)
        mg = Multigrid(mask, fib, 1.0, 1.0, h, ACTIVE2)
        fine = mg.levels[0]
        _, y, x = np.unravel_index(fine.points, (1, n, n))
        xs, ys = x * h, y * h
        exact = np.sin(np.pi * xs) * np.sin(np.pi * ys)
        rhs = -2 * np.pi ** 2 * exact
        e, _ = mg.solve(rhs, 1e-9)
        errs.append(np.abs(e[fine.points] - exact).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2) < 0.1)


def test_level_rejects_isolated_point_and_singular_problem():
    mask = np.zeros((1, 5, 5), dtype=bool)
    mask[0, 2, 2] = True
    fib = np.zeros((3, 1, 5, 5))
    fib[0] = 1
    with pytest.raises(EllipticError):
        Level(mask, fib, 1.0, 1.0, 1.0, ACTIVE2)
    inner = np.zeros((1, 9, 9), dtype=bool)
    inner[0, 1:-1, 1:-1] = True
    with pytest.raises(EllipticError, match="singular"):
        Multigrid(inner, np.broadcast_to(fib[:, :, :1, :1], (3, 1, 9, 9)), 1.0, 1.0, 1.0, ACTIVE2)


@pytest.mark.parametrize("smoother", ["gs", "jacobi"])
def test_smoothers_converge(smoother):
    mask, fib = square(17)
    mg = Multigrid(mask, fib, 1.0, 1.0, 1 / 16, ACTIVE2, smoother=smoother, preiter=2, postiter=2)
    r = np.ones(mg.levels[0].size)
    _, rep = mg.solve(r, 1e-10)
    assert rep.converged


def test_elliptic_device_solves_dirichlet_problem(in_tmp):
    # phi = x^2 + y^2 has Laplacian 4; boundary ring carries the exact values
    script = """state xmax=19 ymax=19 vmax=2;
def real hx 0.0625;
k_func x0=0 x1=18 y0=0 y1=18 pgm={u0=4; u1=(((x-1)*hx)*((x-1)*hx)+((y-1)*hx)*((y-1)*hx))*eq(x,1)+0*u1};
k_func pgm={u1=0};
k_func x0=1 x1=1 pgm={u1=((y-1)*hx)*((y-1)*hx)};
k_func x0=17 x1=17 pgm={u1=1+((y-1)*hx)*((y-1)*hx)};
k_func y0=1 y1=1 pgm={u1=((x-1)*hx)*((x-1)*hx)};
k_func y0=17 y1=17 pgm={u1=1+((x-1)*hx)*((x-1)*hx)};
elliptic x0=2 x1=16 y0=2 y1=16 v0=0 v1=1 D=1 hx=hx tolerance=1e-11;
end;
"""
    res = run_text(script, max_turns=1)
    h = 0.0625
    y, x = np.mgrid[2:17, 2:17]
    exact = ((x - 1) * h) ** 2 + ((y - 1) * h) ** 2
    np.testing.assert_allclose(res.state[1, 0, 2:17, 2:17], exact, atol=1e-10)


def test_elliptic_window_needs_frame():
    with pytest.raises(DeviceError, match="surrounding"):
        run_text("state xmax=10 ymax=10 vmax=2;\nelliptic x0=0 v0=0 v1=1 D=1 hx=0.1;\nend;\n", max_turns=1)
