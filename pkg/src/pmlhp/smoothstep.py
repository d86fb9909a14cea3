"""The C-infinity step function and cutoffs built from it.

The step is ``S(t) = g(t) / (g(t) + g(1 - t))`` with ``g(t) = exp(-1/t)`` for
``t > 0`` and ``g(t) = 0`` otherwise.  It is identically 0 for ``t <= 0`` and
identically 1 for ``t >= 1``.  On ``(0, 1)`` it is evaluated through the
logistic function of ``q(t) = 1/t - 1/(1-t)``, which avoids the underflow of
the two exponentials near the end points.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def step(t, nderiv: int = 0):
    """Evaluate the smooth step and, optionally, its first two derivatives.

    Parameters
    ----------
    t : array_like
        Evaluation points.
    nderiv : {0, 1, 2}
        Number of derivatives to return in addition to the value.

    Returns
    -------
    ndarray or tuple of ndarray
        ``S`` when ``nderiv == 0``, otherwise ``(S, S', ...)`` up to the
        requested order.  Derivatives are closed-form.
    """
    t = np.asarray(t, dtype=float)
    s = np.where(t >= 1.0, 1.0, 0.0)
    ds = np.zeros_like(t)
    d2s = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    if np.any(inside):
        ti = t[inside]
        u = 1.0 - ti
        q = 1.0 / ti - 1.0 / u
        si = expit(-q)
        # S(1 - S) without cancellation: expit(-q) * expit(q)
        w = si * expit(q)
        dq = -1.0 / ti**2 - 1.0 / u**2
        d2q = 2.0 / ti**3 - 2.0 / u**3
        dsi = -w * dq
        d2si = -dsi * (1.0 - 2.0 * si) * dq - w * d2q
        s[inside] = si
        ds[inside] = dsi
        d2s[inside] = d2si
    if nderiv == 0:
        return s
    if nderiv == 1:
        return s, ds
    if nderiv == 2:
        return s, ds, d2s
    raise ValueError("nderiv must be 0, 1 or 2")


def plateau(s, inner: float, outer: float, nderiv: int = 0):
    """Radial cutoff equal to 1 for ``|s| <= inner`` and 0 for ``|s| >= outer``.

    Built as ``1 - S((|s| - inner) / (outer - inner))``.  Derivatives are taken
    with respect to ``|s|``.
    """
    if not outer > inner:
        raise ValueError("outer must exceed inner")
    width = outer - inner
    a = np.abs(np.asarray(s, dtype=float))
    out = step((a - inner) / width, nderiv)
    if nderiv == 0:
        return 1.0 - out
    vals = [1.0 - out[0]]
    for j, dj in enumerate(out[1:], start=1):
        vals.append(-dj / width**j)
    return tuple(vals)
