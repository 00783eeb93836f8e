"""Shared fixtures and independent oracles for the test suite.

Everything in this file is deliberately assembled the slow way: mass and
stiffness matrices by explicit element loops, transfer matrices from node
geometry, eigenvalues from the characteristic polynomial or from power
iteration, step lengths by bisection, and the tiny QP by enumerating
activity patterns.  None of it shares code with the package internals, so
agreement between the two is meaningful.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from mgipm.grid import GridHierarchy, GridLevel


# ---------------------------------------------------------------------------
# element-assembled matrices (unscaled, i.e. true L2 entries)

def mass_matrix_periodic(n):
    """1D periodic P1 mass matrix on n cells, element by element."""
    h = 1.0 / n
    me = (h / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
    M = np.zeros((n, n))
    for e in range(n):
        idx = (e, (e + 1) % n)
        for a in range(2):
            for b in range(2):
                M[idx[a], idx[b]] += me[a, b]
    return M


def _triangles(n):
    # vertex triples of the three-line triangulation of the unit square,
    # full (n+1)^2 grid, diagonal from (i,j) to (i+1,j+1)
    tris = []
    for i in range(n):
        for j in range(n):
            v00 = (i, j)
            v10 = (i + 1, j)
            v01 = (i, j + 1)
            v11 = (i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v01, v11))
    return tris


def _interior_ids(n):
    # interior vertices in the package ordering: x index slow, y fast
    ids = []
    for ix in range(1, n):
        for iy in range(1, n):
            ids.append(ix * (n + 1) + iy)
    return np.array(ids)


def mass_matrix_dirichlet(n):
    """Interior block of the 2D P1 mass matrix, triangle-by-triangle."""
    h = 1.0 / n
    area = h * h / 2.0
    me = (area / 12.0) * np.array(
        [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]
    )
    size = (n + 1) ** 2
    rows, cols, vals = [], [], []
    for tri in _triangles(n):
        vids = [ix * (n + 1) + iy for ix, iy in tri]
        for a in range(3):
            for b in range(3):
                rows.append(vids[a])
                cols.append(vids[b])
                vals.append(me[a, b])
    M = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    ids = _interior_ids(n)
    return M[ids][:, ids]


def stiffness_matrix_dirichlet(n):
    """Interior block of the 2D P1 stiffness matrix, generic element formula."""
    h = 1.0 / n
    size = (n + 1) ** 2
    rows, cols, vals = [], [], []
    for tri in _triangles(n):
        pts = np.array([(ix * h, iy * h) for ix, iy in tri])
        x, y = pts[:, 0], pts[:, 1]
        b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
        c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
        area = 0.5 * abs(
            (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
        )
        se = (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
        vids = [ix * (n + 1) + iy for ix, iy in tri]
        for a in range(3):
            for bb in range(3):
                rows.append(vids[a])
                cols.append(vids[bb])
                vals.append(se[a, bb])
    S = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    ids = _interior_ids(n)
    return S[ids][:, ids]


# ---------------------------------------------------------------------------
# transfer matrices from node geometry

def prolong_matrix_periodic(nc):
    """Interpolation from nc to 2nc periodic cells: copy or average."""
    J = np.zeros((2 * nc, nc))
    for k in range(2 * nc):
        if k % 2 == 0:
            J[k, k // 2] = 1.0
        else:
            J[k, (k - 1) // 2 % nc] += 0.5
            J[k, ((k + 1) // 2) % nc] += 0.5
    return J


def prolong_matrix_dirichlet(nc):
    """Interpolation between interior grids of nc and 2nc square cells.

    Fine nodes with both indices even sit on coarse nodes; odd/even nodes
    sit on axis edges; odd/odd nodes sit on the slope-one diagonals, so
    they average the two diagonal endpoints.  Out-of-range coarse indices
    carry the zero boundary value.
    """
    mf = 2 * nc - 1
    mc = nc - 1
    J = np.zeros((mf * mf, mc * mc))

    def coarse(ixc, iyc, row, wgt):
        if 1 <= ixc <= mc and 1 <= iyc <= mc:
            J[row, (ixc - 1) * mc + (iyc - 1)] += wgt

    for fx in range(1, mf + 1):
        for fy in range(1, mf + 1):
            row = (fx - 1) * mf + (fy - 1)
            ex, ey = fx % 2 == 0, fy % 2 == 0
            if ex and ey:
                coarse(fx // 2, fy // 2, row, 1.0)
            elif not ex and ey:
                coarse((fx - 1) // 2, fy // 2, row, 0.5)
                coarse((fx + 1) // 2, fy // 2, row, 0.5)
            elif ex and not ey:
                coarse(fx // 2, (fy - 1) // 2, row, 0.5)
                coarse(fx // 2, (fy + 1) // 2, row, 0.5)
            else:
                coarse((fx - 1) // 2, (fy - 1) // 2, row, 0.5)
                coarse((fx + 1) // 2, (fy + 1) // 2, row, 0.5)
    return J


# ---------------------------------------------------------------------------
# small eigenvalue oracles

def char_poly_coeffs(A):
    """Monic characteristic polynomial coefficients via Faddeev-LeVerrier."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    coeffs = []
    Mk = np.zeros_like(A)
    ck = 1.0
    for k in range(1, n + 1):
        Mk = A @ (Mk + ck * np.eye(n))
        ck = -np.trace(Mk) / k
        coeffs.append(ck)
    return np.array(coeffs)


def durand_kerner(coeffs, iters=500):
    """All roots of a monic polynomial by simultaneous iteration."""
    coeffs = np.asarray(coeffs, dtype=complex)
    n = coeffs.size

    def poly(z):
        out = np.ones_like(z)
        for c in coeffs:
            out = out * z + c
        return out

    z = (0.4 + 0.9j) ** np.arange(1, n + 1)
    for _ in range(iters):
        nxt = z.copy()
        for i in range(n):
            denom = np.prod(nxt[i] - np.delete(nxt, i))
            nxt[i] = nxt[i] - poly(nxt[i : i + 1])[0] / denom
        if np.max(np.abs(nxt - z)) < 1e-14 * max(1.0, np.max(np.abs(nxt))):
            z = nxt
            break
        z = nxt
    return z


def power_dominant(A, iters=5000, seed=7):
    """Rayleigh-quotient estimate of the dominant eigenvalue."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        lam = float(v @ (A @ v))
    return lam


# ---------------------------------------------------------------------------
# step-length and QP oracles

def bisection_max_step(feasible, cap=1e12, iters=200):
    """Largest alpha with feasible(alpha) true, found by expand-then-bisect.

    feasible must be monotone (true on [0, amax), false after); returns
    np.inf when the cap itself is feasible.
    """
    hi = 1.0
    while feasible(hi):
        hi *= 2.0
        if hi > cap:
            return np.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def enumerate_box_qp(K, w, beta, f, lo, hi):
    """Global solution of min 0.5|Ku-f|^2_W + beta/2 |u|^2_W, lo <= u <= hi.

    Tries all 3^n activity patterns (lower bound, free, upper bound),
    solves the equality-constrained problem of each, and keeps the pattern
    whose solution is feasible with correctly signed gradients.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    W = np.diag(w)
    A = beta * W + K.T @ W @ K
    b = K.T @ (w * f)

    best = None
    for code in range(3 ** n):
        pattern = []
        c = code
        for _ in range(n):
            pattern.append(c % 3)
            c //= 3
        u = np.empty(n)
        fixed = np.zeros(n, dtype=bool)
        for i, tag in enumerate(pattern):
            if tag == 0:
                u[i] = lo[i]
                fixed[i] = True
            elif tag == 2:
                u[i] = hi[i]
                fixed[i] = True
        free = ~fixed
        if free.any():
            rhs = b[free] - A[np.ix_(free, fixed)] @ u[fixed]
            u[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
        g = A @ u - b
        tol = 1e-10
        ok = np.all(u >= lo - tol) and np.all(u <= hi + tol)
        for i, tag in enumerate(pattern):
            if tag == 1:
                ok = ok and abs(g[i]) <= 1e-8
            elif tag == 0:
                ok = ok and g[i] >= -1e-8
            else:
                ok = ok and g[i] <= 1e-8
        if not ok:
            continue
        val = 0.5 * u @ (A @ u) - b @ u
        if best is None or val < best[0] - 1e-14:
            best = (val, u.copy())
    assert best is not None, "no activity pattern passed the sign checks"
    return best[1]


# ---------------------------------------------------------------------------
# tiny handmade grids

def toy_hierarchy(n=3):
    """A single fabricated periodic level with n dofs, for desk problems."""
    level = GridLevel("periodic-interval", n, 1.0 / n, n, np.full(n, 1.0 / n))
    return GridHierarchy((level,))


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)
