"""Vectorized log-gamma, digamma, and trigamma for positive arguments.

All three use the same scheme: shift the argument above 8 with the
recurrence relations, then evaluate the de Moivre / Bernoulli-number
asymptotic series. For arguments >= 1 (the only range the Dirichlet
machinery produces) the absolute error is below 1e-13.
"""

from __future__ import annotations

import numpy as np

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_SHIFT_THRESHOLD = 8.0

# B_{2n} / (2n (2n-1)) for the log-gamma Stirling series
_LGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)

# B_{2n} / (2n) for the digamma series
_DIGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

# B_{2n} for the trigamma series
_TRIGAMMA_COEFFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _validated(x) -> tuple[np.ndarray, bool]:
    z = np.asarray(x, dtype=np.float64)
    scalar = z.ndim == 0
    z = np.atleast_1d(z).copy()
    if np.any(z <= 0.0):
        raise ValueError("special functions require strictly positive arguments")
    return z, scalar


def gammaln(x) -> np.ndarray | np.floating:
    """Natural log of the gamma function, elementwise, for x > 0."""
    z, scalar = _validated(x)
    shift = np.zeros_like(z)
    while True:
        low = z < _SHIFT_THRESHOLD
        if not low.any():
            break
        # ln G(z) = ln G(z+1) - ln z
        shift[low] -= np.log(z[low])
        z[low] += 1.0
    r2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEFFS):
        series = (series + c) * r2
    series *= z  # terms are c_n / z^(2n-1), Horner above gave c_n / z^(2n)
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series + shift
    return out[0] if scalar else out


def digamma(x) -> np.ndarray | np.floating:
    """Logarithmic derivative of the gamma function, elementwise, for x > 0."""
    z, scalar = _validated(x)
    shift = np.zeros_like(z)
    while True:
        low = z < _SHIFT_THRESHOLD
        if not low.any():
            break
        # psi(z) = psi(z+1) - 1/z
        shift[low] -= 1.0 / z[low]
        z[low] += 1.0
    r2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEFFS):
        series = (series + c) * r2
    out = np.log(z) - 0.5 / z - series + shift
    return out[0] if scalar else out


def trigamma(x) -> np.ndarray | np.floating:
    """Derivative of the digamma function, elementwise, for x > 0."""
    z, scalar = _validated(x)
    shift = np.zeros_like(z)
    while True:
        low = z < _SHIFT_THRESHOLD
        if not low.any():
            break
        # psi'(z) = psi'(z+1) + 1/z^2
        shift[low] += 1.0 / (z[low] * z[low])
        z[low] += 1.0
    r = 1.0 / z
    r2 = r * r
    series = np.zeros_like(z)
    for c in reversed(_TRIGAMMA_COEFFS):
        series = (series + c) * r2
    series *= r  # terms are B_2n / z^(2n+1)
    out = r + 0.5 * r2 + series + shift
    return out[0] if scalar else out
