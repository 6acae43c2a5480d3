"""Jitted inner loops: vector field, scheme fluxes, Jacobian blocks, and
the block-tridiagonal direct solver.

Only plain arrays and scalars cross this boundary; public types stay in
the outer modules. When numba is missing the decorator degrades to a
no-op and everything still runs, just slowly.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - CI always has numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# Scheme ids shared with schemes.SchemeKind (kept as ints for numba).
TRAPEZOIDAL = 0
IMPLICIT_MIDPOINT = 1
MASS = 2
ENERGY = 3


@njit(cache=True)
def _abs2(z):
    return z.real * z.real + z.imag * z.imag


@njit(cache=True)
def chain_rhs(b, periodic):
    """db_j/dt = i(-|b_j|^2 b_j + 2 conj(b_j)(b_{j-1}^2 + b_{j+1}^2)).

    Ghost neighbours are zero (Dirichlet) or wrap around (periodic).
    """
    n = b.shape[0]
    out = np.empty(n, dtype=np.complex128)
    for j in range(n):
        if j > 0:
            left = b[j - 1]
        elif periodic:
            left = b[n - 1]
        else:
            left = 0.0 + 0.0j
        if j < n - 1:
            right = b[j + 1]
        elif periodic:
            right = b[0]
        else:
            right = 0.0 + 0.0j
        bj = b[j]
        out[j] = 1j * (-_abs2(bj) * bj
                       + 2.0 * np.conj(bj) * (left * left + right * right))
    return out


@njit(cache=True)
def rk4_step(b, dt, periodic):
    k1 = chain_rhs(b, periodic)
    k2 = chain_rhs(b + (0.5 * dt) * k1, periodic)
    k3 = chain_rhs(b + (0.5 * dt) * k2, periodic)
    k4 = chain_rhs(b + dt * k3, periodic)
    return b + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def scheme_flux(scheme, b_old, b_new, periodic):
    """Two-point flux F(b_old, b_new); the implicit update solves
    b_new = b_old + dt * F.

    All four fluxes are built from symmetric averages of the endpoint
    states, so F(a, b) == F(b, a) and each scheme is time-reversible.
    """
    n = b_old.shape[0]
    if scheme == TRAPEZOIDAL:
        return 0.5 * (chain_rhs(b_old, periodic) + chain_rhs(b_new, periodic))
    mid = 0.5 * (b_old + b_new)
    if scheme == ENERGY:
        coup = 0.5 * (b_old * b_old + b_new * b_new)
    else:
        coup = mid * mid
    out = np.empty(n, dtype=np.complex128)
    for j in range(n):
        if j > 0:
            left = coup[j - 1]
        elif periodic:
            left = coup[n - 1]
        else:
            left = 0.0 + 0.0j
        if j < n - 1:
            right = coup[j + 1]
        elif periodic:
            right = coup[0]
        else:
            right = 0.0 + 0.0j
        if scheme == IMPLICIT_MIDPOINT:
            self_term = _abs2(mid[j]) * mid[j]
        else:
            # mass/energy variants damp the self term by the averaged
            # modulus so the respective invariant telescopes exactly
            self_term = 0.5 * (_abs2(b_old[j]) + _abs2(b_new[j])) * mid[j]
        out[j] = 1j * (-self_term + 2.0 * np.conj(mid[j]) * (left + right))
    return out


@njit(cache=True)
def scheme_residual(scheme, b_old, b_new, dt, periodic):
    return b_new - b_old - dt * scheme_flux(scheme, b_old, b_new, periodic)


@njit(cache=True)
def _add_rot_block(target, a, scale):
    # block of a C-linear map z -> a*z in interleaved (Re, Im) coords
    target[0, 0] += scale * a.real
    target[0, 1] -= scale * a.imag
    target[1, 0] += scale * a.imag
    target[1, 1] += scale * a.real


@njit(cache=True)
def _add_wirtinger_block(target, a, b, scale):
    # block of z -> a*z + b*conj(z) in interleaved (Re, Im) coords
    target[0, 0] += scale * (a.real + b.real)
    target[0, 1] += scale * (-a.imag + b.imag)
    target[1, 0] += scale * (a.imag + b.imag)
    target[1, 1] += scale * (a.real - b.real)


@njit(cache=True)
def scheme_jacobian_blocks(scheme, b_old, b_new, dt, periodic):
    """Real-split Jacobian of the residual b_new - b_old - dt*F w.r.t. b_new.

    Returns (diag, lower, upper, corner_tr, corner_bl, has_corners) where
    diag has shape (n, 2, 2), lower/upper (n-1, 2, 2), and the corner
    blocks carry the periodic wrap coupling (only populated for n >= 3;
    for n <= 2 the wrapped contributions fold into diag/lower/upper).
    """
    n = b_old.shape[0]
    diag = np.zeros((n, 2, 2))
    lower = np.zeros((max(n - 1, 0), 2, 2))
    upper = np.zeros((max(n - 1, 0), 2, 2))
    corner_tr = np.zeros((2, 2))
    corner_bl = np.zeros((2, 2))
    has_corners = periodic and n >= 3

    c = b_new
    mid = 0.5 * (b_old + b_new)
    if scheme == TRAPEZOIDAL:
        sq = c * c
    elif scheme == ENERGY:
        sq = 0.5 * (b_old * b_old + c * c)
    else:
        sq = mid * mid

    for j in range(n):
        if j > 0:
            left = sq[j - 1]
        elif periodic:
            left = sq[n - 1]
        else:
            left = 0.0 + 0.0j
        if j < n - 1:
            right = sq[j + 1]
        elif periodic:
            right = sq[0]
        else:
            right = 0.0 + 0.0j

        # Wirtinger partials of F_j: a_d = dF_j/dc_j, b_d = dF_j/d(conj c_j)
        if scheme == TRAPEZOIDAL:
            a_d = -1j * _abs2(c[j])
            b_d = 0.5j * (-c[j] * c[j] + 2.0 * (left + right))
        elif scheme == IMPLICIT_MIDPOINT:
            a_d = -1j * _abs2(mid[j])
            b_d = 0.5j * (-mid[j] * mid[j] + 2.0 * (left + right))
        else:
            mod = 0.5 * (_abs2(b_old[j]) + _abs2(c[j]))
            a_d = -0.5j * (np.conj(c[j]) * mid[j] + mod)
            b_d = 1j * (-0.5 * c[j] * mid[j] + left + right)

        diag[j, 0, 0] = 1.0
        diag[j, 1, 1] = 1.0
        _add_wirtinger_block(diag[j], a_d, b_d, -dt)

        # neighbour partials dF_j/dc_{j +- 1}; no conjugate part
        if scheme == TRAPEZOIDAL:
            factor_l = 2j * np.conj(c[j]) * (c[j - 1] if j > 0 else c[n - 1])
            factor_r = 2j * np.conj(c[j]) * (c[j + 1] if j < n - 1 else c[0])
        elif scheme == ENERGY:
            factor_l = 2j * np.conj(mid[j]) * (c[j - 1] if j > 0 else c[n - 1])
            factor_r = 2j * np.conj(mid[j]) * (c[j + 1] if j < n - 1 else c[0])
        else:
            factor_l = 2j * np.conj(mid[j]) * (mid[j - 1] if j > 0 else mid[n - 1])
            factor_r = 2j * np.conj(mid[j]) * (mid[j + 1] if j < n - 1 else mid[0])

        if j > 0:
            _add_rot_block(lower[j - 1], factor_l, -dt)
        elif periodic:
            if n >= 3:
                _add_rot_block(corner_tr, factor_l, -dt)
            elif n == 2:
                _add_rot_block(upper[0], factor_l, -dt)
            else:
                _add_rot_block(diag[0], factor_l, -dt)

        if j < n - 1:
            _add_rot_block(upper[j], factor_r, -dt)
        elif periodic:
            if n >= 3:
                _add_rot_block(corner_bl, factor_r, -dt)
            elif n == 2:
                _add_rot_block(lower[0], factor_r, -dt)
            else:
                _add_rot_block(diag[0], factor_r, -dt)

    return diag, lower, upper, corner_tr, corner_bl, has_corners


PIVOT_RTOL = 1e-14


@njit(cache=True)
def block_thomas(diag, lower, upper, rhs, pivot_rtol):
    """LU sweep for a block-tridiagonal system with 2x2 blocks.

    rhs has shape (n, 2, k). Returns (x, status) with status 0 on
    success and j+1 when the pivot at block row j is numerically
    singular (|det| <= pivot_rtol * ||pivot||_F^2).
    """
    n = diag.shape[0]
    k = rhs.shape[2]
    ufac = np.zeros((n, 2, 2))
    y = np.zeros((n, 2, k))
    x = np.zeros((n, 2, k))

    p00 = p01 = p10 = p11 = 0.0
    for j in range(n):
        if j == 0:
            p00 = diag[0, 0, 0]
            p01 = diag[0, 0, 1]
            p10 = diag[0, 1, 0]
            p11 = diag[0, 1, 1]
        else:
            l0 = lower[j - 1]
            uf = ufac[j - 1]
            p00 = diag[j, 0, 0] - (l0[0, 0] * uf[0, 0] + l0[0, 1] * uf[1, 0])
            p01 = diag[j, 0, 1] - (l0[0, 0] * uf[0, 1] + l0[0, 1] * uf[1, 1])
            p10 = diag[j, 1, 0] - (l0[1, 0] * uf[0, 0] + l0[1, 1] * uf[1, 0])
            p11 = diag[j, 1, 1] - (l0[1, 0] * uf[0, 1] + l0[1, 1] * uf[1, 1])
        det = p00 * p11 - p01 * p10
        scale = p00 * p00 + p01 * p01 + p10 * p10 + p11 * p11
        if abs(det) <= pivot_rtol * scale:
            return x, j + 1
        i00 = p11 / det
        i01 = -p01 / det
        i10 = -p10 / det
        i11 = p00 / det
        if j < n - 1:
            u = upper[j]
            ufac[j, 0, 0] = i00 * u[0, 0] + i01 * u[1, 0]
            ufac[j, 0, 1] = i00 * u[0, 1] + i01 * u[1, 1]
            ufac[j, 1, 0] = i10 * u[0, 0] + i11 * u[1, 0]
            ufac[j, 1, 1] = i10 * u[0, 1] + i11 * u[1, 1]
        for col in range(k):
            r0 = rhs[j, 0, col]
            r1 = rhs[j, 1, col]
            if j > 0:
                l0 = lower[j - 1]
                r0 -= l0[0, 0] * y[j - 1, 0, col] + l0[0, 1] * y[j - 1, 1, col]
                r1 -= l0[1, 0] * y[j - 1, 0, col] + l0[1, 1] * y[j - 1, 1, col]
            y[j, 0, col] = i00 * r0 + i01 * r1
            y[j, 1, col] = i10 * r0 + i11 * r1

    for col in range(k):
        x[n - 1, 0, col] = y[n - 1, 0, col]
        x[n - 1, 1, col] = y[n - 1, 1, col]
    for j in range(n - 2, -1, -1):
        uf = ufac[j]
        for col in range(k):
            x[j, 0, col] = y[j, 0, col] - (uf[0, 0] * x[j + 1, 0, col]
                                           + uf[0, 1] * x[j + 1, 1, col])
            x[j, 1, col] = y[j, 1, col] - (uf[1, 0] * x[j + 1, 0, col]
                                           + uf[1, 1] * x[j + 1, 1, col])
    return x, 0


@njit(cache=True)
def block_thomas_cyclic(diag, lower, upper, corner_tr, corner_bl, rhs,
                        pivot_rtol):
    """Bordered elimination for the periodic wrap: the last block row and
    column are treated as the border, the interior solve runs with k+2
    right-hand columns, and a 2x2 Schur complement closes the system.

    Requires n >= 3 (the assembly folds smaller wraps into the bands).
    """
    n = diag.shape[0]
    m = n - 1
    k = rhs.shape[2]
    bund = np.zeros((m, 2, k + 2))
    for j in range(m):
        for col in range(k):
            bund[j, 0, col] = rhs[j, 0, col]
            bund[j, 1, col] = rhs[j, 1, col]
    # couplings of interior rows to the border unknown
    for a in range(2):
        for bcol in range(2):
            bund[0, a, k + bcol] = corner_tr[a, bcol]
            bund[m - 1, a, k + bcol] += upper[m - 1, a, bcol]

    sol, status = block_thomas(diag[:m], lower[:m - 1], upper[:m - 1], bund,
                               pivot_rtol)
    x = np.zeros((n, 2, k))
    if status != 0:
        return x, status

    # Schur complement S = D_b - C @ Y with C hitting interior cols 0, m-1
    s = np.zeros((2, 2))
    for a in range(2):
        for bcol in range(2):
            acc = diag[n - 1, a, bcol]
            for t in range(2):
                acc -= corner_bl[a, t] * sol[0, t, k + bcol]
                acc -= lower[m - 1, a, t] * sol[m - 1, t, k + bcol]
            s[a, bcol] = acc
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    scale = s[0, 0] ** 2 + s[0, 1] ** 2 + s[1, 0] ** 2 + s[1, 1] ** 2
    if abs(det) <= pivot_rtol * scale:
        return x, n

    for col in range(k):
        rb0 = rhs[n - 1, 0, col]
        rb1 = rhs[n - 1, 1, col]
        for t in range(2):
            rb0 -= corner_bl[0, t] * sol[0, t, col]
            rb0 -= lower[m - 1, 0, t] * sol[m - 1, t, col]
            rb1 -= corner_bl[1, t] * sol[0, t, col]
            rb1 -= lower[m - 1, 1, t] * sol[m - 1, t, col]
        xb0 = (s[1, 1] * rb0 - s[0, 1] * rb1) / det
        xb1 = (-s[1, 0] * rb0 + s[0, 0] * rb1) / det
        x[n - 1, 0, col] = xb0
        x[n - 1, 1, col] = xb1
        for j in range(m):
            x[j, 0, col] = sol[j, 0, col] - (sol[j, 0, k] * xb0
                                             + sol[j, 0, k + 1] * xb1)
            x[j, 1, col] = sol[j, 1, col] - (sol[j, 1, k] * xb0
                                             + sol[j, 1, k + 1] * xb1)
    return x, 0
