"""Compiled inner loops for planar-polygon solid angles.

Edges are flattened into arrays ``ax, ay, bx, by`` with an integer ``owner``
telling which output column (electrode or drive group) each edge feeds.
Loops must be oriented counter-clockwise for filled regions and clockwise
for holes; the per-edge sums then need no special casing.
"""
import math
import warnings

import numpy as np
from numba import njit, prange

# older system TBB: numba falls back to another threading layer, which is fine
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

TWO_PI = 2.0 * math.pi


@njit(cache=True, fastmath=False)
def _edge_terms(x, y, z, ax, ay, bx, by):
    # solid angle of the triangle (foot point, a, b) seen from (x, y, z),
    # plus the Biot-Savart gradient of the edge a->b
    u1 = ax - x
    v1 = ay - y
    u2 = bx - x
    v2 = by - y
    zz = z * z
    r1 = math.sqrt(u1 * u1 + v1 * v1 + zz)
    r2 = math.sqrt(u2 * u2 + v2 * v2 + zz)
    r0 = abs(z)
    cross = u1 * v2 - u2 * v1
    d12 = u1 * u2 + v1 * v2 + zz
    den = r0 * r1 * r2 + zz * (r1 + r2) + d12 * r0
    omega = 2.0 * math.atan2(z * cross, den)
    # s1 = p - a, s2 = p - b
    s1x, s1y, s1z = -u1, -v1, z
    s2x, s2y, s2z = -u2, -v2, z
    cx = s1y * s2z - s1z * s2y
    cy = s1z * s2x - s1x * s2z
    cz = s1x * s2y - s1y * s2x
    k = -(r1 + r2) / (r1 * r2 * (r1 * r2 + s1x * s2x + s1y * s2y + s1z * s2z))
    return omega, cx * k, cy * k, cz * k


@njit(parallel=True, cache=True)
def solid_angle_sum(pts, zshift, ax, ay, bx, by, owner, n_out, want_grad):
    """Sum solid angles (and gradients) over edges and image shifts.

    Returns ``w`` of shape (n, n_out) in units of 2*pi steradian and ``g`` of
    shape (n, n_out, 3) holding the gradient of ``w``.
    """
    n = pts.shape[0]
    m = ax.shape[0]
    w = np.zeros((n, n_out))
    if want_grad:
        g = np.zeros((n, n_out, 3))
    else:
        g = np.zeros((1, 1, 3))
    for i in prange(n):
        x = pts[i, 0]
        y = pts[i, 1]
        for s in range(zshift.shape[0]):
            z = pts[i, 2] + zshift[s]
            for e in range(m):
                om, gx, gy, gz = _edge_terms(x, y, z, ax[e], ay[e], bx[e], by[e])
                o = owner[e]
                w[i, o] += om
                if want_grad:
                    g[i, o, 0] += gx
                    g[i, o, 1] += gy
                    g[i, o, 2] += gz
    w /= TWO_PI
    if want_grad:
        g /= TWO_PI
    return w, g


@njit(parallel=True, cache=True)
def image_tail(pts, height, n_images, cx, cy, area, want_grad):
    """Far-image remainder of the two-plane image series.

    Each region is collapsed to its centroid; the sum over images beyond
    ``n_images`` is replaced by its midpoint-rule integral, which has a
    closed form.  Units match :func:`solid_angle_sum`.
    """
    n = pts.shape[0]
    k = cx.shape[0]
    w = np.zeros((n, k))
    if want_grad:
        g = np.zeros((n, k, 3))
    else:
        g = np.zeros((1, 1, 3))
    s0 = (2.0 * n_images + 1.0) * height
    for i in prange(n):
        z = pts[i, 2]
        for j in range(k):
            dx = pts[i, 0] - cx[j]
            dy = pts[i, 1] - cy[j]
            rho2 = dx * dx + dy * dy
            zp = s0 + z
            zm = s0 - z
            rp = math.sqrt(rho2 + zp * zp)
            rm = math.sqrt(rho2 + zm * zm)
            c = area[j] / (2.0 * height)
            w[i, j] = c * (1.0 / rp - 1.0 / rm)
            if want_grad:
                ip3 = 1.0 / (rp * rp * rp)
                im3 = 1.0 / (rm * rm * rm)
                g[i, j, 0] = c * (-dx * ip3 + dx * im3)
                g[i, j, 1] = c * (-dy * ip3 + dy * im3)
                g[i, j, 2] = c * (-zp * ip3 - zm * im3)
    w /= TWO_PI
    if want_grad:
        g /= TWO_PI
    return w, g


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def minimax_connect(values, nx, ny, nz, start, target, boundary):
    """Lowest level at which ``start`` joins ``target`` (or the boundary).

    Voxels are switched on in order of increasing value and merged with
    their active 26-neighbours (union-find).  With ``target < 0`` the goal
    is any voxel flagged in ``boundary``.  Returns the flat index of the
    voxel whose activation made the connection, or -1 if none does.
    """
    n = nx * ny * nz
    order = np.argsort(values, kind="mergesort")
    parent = np.arange(n)
    active = np.zeros(n, dtype=np.bool_)
    touches = boundary.copy()
    for k in range(n):
        v = order[k]
        active[v] = True
        i = v // (ny * nz)
        j = (v // nz) % ny
        l = v % nz
        for di in range(-1, 2):
            ii = i + di
            if ii < 0 or ii >= nx:
                continue
            for dj in range(-1, 2):
                jj = j + dj
                if jj < 0 or jj >= ny:
                    continue
                for dl in range(-1, 2):
                    ll = l + dl
                    if ll < 0 or ll >= nz:
                        continue
                    u = (ii * ny + jj) * nz + ll
                    if u == v or not active[u]:
                        continue
                    ru = _find(parent, u)
                    rv = _find(parent, v)
                    if ru != rv:
                        parent[ru] = rv
                        touches[rv] = touches[rv] or touches[ru]
        if not active[start]:
            continue
        rs = _find(parent, start)
        if target < 0:
            if touches[rs]:
                return v
        elif active[target] and _find(parent, target) == rs:
            return v
    return -1
