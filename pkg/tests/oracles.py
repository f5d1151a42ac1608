"""Independent reference implementations used to cross-check the package.

Each oracle deliberately takes a different computational route from the code
under test: eigendecompositions and polynomial interpolation instead of the
Leverrier recursion, truncated series instead of the matrix exponential,
forward Euler instead of exact discretization, and projected gradient
instead of the active-set method.
"""

import numpy as np


_DFT_RADIUS = 1.5  # outside the unit disk, so never near the spectrum of phi


def _poly_coeffs_from_circle(values, radius):
    """Monomial coefficients of a degree-n polynomial from its values at the
    n+1 scaled roots of unity (a DFT inversion; perfectly conditioned).

    values[i] = P(r w^i) = sum_j (c_j r^j) w^{+ij} with w = e^{2 pi i / m},
    which is an unnormalized inverse DFT of the scaled coefficients, so the
    coefficients come back via the forward transform divided by m.
    """
    m = len(values)
    coeffs = np.fft.fft(values, axis=0) / m  # c_k r^k in row k
    scale = radius ** np.arange(m)
    return coeffs / scale.reshape(-1, *([1] * (values.ndim - 1)))


def charpoly_eig_oracle(phi):
    """Characteristic polynomial coefficients (e_1..e_n) of phi from its
    eigenvalues: det(F I - phi) = F^n + e_1 F^{n-1} + ... + e_n."""
    return np.poly(np.linalg.eigvals(phi))[1:].real


def s_interpolation_oracle(phi, gamma1, gamma2, cm):
    """S_0..S_n by polynomial interpolation of the transfer numerator.

    N(F) = det(F I - phi) * cm (F I - phi)^{-1} (F gamma2 + gamma1 - gamma2)
    is a degree-n matrix polynomial in F whose F^{n-i} coefficient is S_i.
    Sampling it on a circle of radius 1.5 and inverting the DFT keeps the
    extraction perfectly conditioned.
    """
    n = phi.shape[0]
    m = n + 1
    points = _DFT_RADIUS * np.exp(2j * np.pi * np.arange(m) / m)
    eye = np.eye(n)
    rows = []
    for f in points:
        mat = f * eye - phi
        rhs = f * gamma2 + gamma1 - gamma2
        rows.append(np.linalg.det(mat) * (cm @ np.linalg.solve(mat, rhs))[0])
    coeffs = _poly_coeffs_from_circle(np.array(rows), _DFT_RADIUS)
    return coeffs[::-1].real  # row i -> coefficient of F^{n-i} = S_i


def expm_series_oracle(a, dt, terms=60):
    """Truncated Taylor series for e^{A dt} (A already per the dt units)."""
    n = a.shape[0]
    acc = np.eye(n)
    term = np.eye(n)
    for k in range(1, terms):
        term = term @ (a * dt) / k
        acc = acc + term
    return acc


def gamma_series_oracle(a, b, dt, terms=60):
    """Gamma1 = integral_0^dt e^{A s} ds B via the series
    sum_k A^k dt^{k+1}/(k+1)! B, independent of any matrix inverse."""
    n = a.shape[0]
    acc = np.eye(n) * dt
    term = np.eye(n) * dt
    for k in range(1, terms):
        term = term @ (a * dt) / (k + 1)
        acc = acc + term
    return acc @ b


def euler_foh_oracle(a, b, cm, u, x0, dt, substeps):
    """Forward Euler at dt/substeps with the input linearly interpolated
    between consecutive samples, summed in closed form per coarse step.

    Exactly equal (up to float reordering) to running the K = substeps tiny
    Euler updates x <- (I + A h) x + h B u(t) with u linear on each step.
    Returns one output per input row.
    """
    n = a.shape[0]
    k = int(substeps)
    h = dt / k
    m = np.eye(n) + a * h
    # S0 = sum_{j=0}^{K-1} M^j  and  U = sum_{j=0}^{K-1} j M^j
    s0 = np.zeros((n, n))
    uu = np.zeros((n, n))
    mp = np.eye(n)
    for j in range(k):
        s0 += mp
        uu += j * mp
        mp = mp @ m
    phi_e = mp  # M^K
    # x_K = M^K x0 + h sum_j M^{K-1-j} B u_j with u_j = u0 + (j/K)(u1-u0):
    # sum_j M^{K-1-j} = S0 and sum_j j M^{K-1-j} = (K-1) S0 - U.
    g_const = h * (s0 @ b)
    g_ramp = (h / k) * (((k - 1) * s0 - uu) @ b)

    y = np.empty(len(u))
    x = np.asarray(x0, dtype=float).copy()
    out = cm[0]
    for t in range(len(u)):
        y[t] = out @ x
        if t + 1 < len(u):
            x = phi_e @ x + g_const @ u[t] + g_ramp @ (u[t + 1] - u[t])
    return y


def projected_gradient_nnls(a, y, tol=1e-14, max_iter=200_000):
    """min ||Ax - y|| s.t. x >= 0 by projected gradient with a fixed step
    1/||A^T A||_2, run to convergence."""
    ata = a.T @ a
    aty = a.T @ y
    step = 1.0 / max(np.linalg.norm(ata, 2), 1e-300)
    x = np.zeros(a.shape[1])
    for _ in range(max_iter):
        nxt = np.maximum(0.0, x - step * (ata @ x - aty))
        if np.abs(nxt - x).max() <= tol * max(1.0, np.abs(x).max()):
            return nxt
        x = nxt
    return x
