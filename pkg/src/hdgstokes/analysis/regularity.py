"""
Corner singular exponent of the Stokes operator and the convergence orders
it permits for the HDG control discretization.
"""

from dataclasses import dataclass

import numpy as np

ADMISSIBLE_XI = 1.5
# Newton iterates this far from the origin are treated as diverged
_ESCAPE = 100.0


def _newton(lam, omega, sign, maxit=60, tol=1e-14):
    s = np.sin(omega)
    for _ in range(maxit):
        g = np.sin(lam * omega) + sign * lam * s
        dg = omega * np.cos(lam * omega) + sign * s
        if dg == 0:
            return None
        step = g / dg
        lam = lam - step
        if not np.isfinite(lam) or abs(lam) > _ESCAPE:
            return None
        if abs(step) < tol * max(1.0, abs(lam)):
            g = np.sin(lam * omega) + sign * lam * s
            return lam if abs(g) < 1e-10 * max(1.0, abs(lam)) else None
    return None


def corner_roots(omega, re_range=(0.5, 8.0), im_max=10.0, grid=(40, 40)):
    """
    Roots of sin^2(lam omega) = lam^2 sin^2(omega) in a strip of the complex
    plane, excluding the trivial roots 0 and 1.

    Newton iterations on ``sin(lam omega) +- lam sin(omega)`` are started
    from a uniform grid of initial guesses; roots closer than 1e-8 are
    merged. Only roots with non-negative imaginary part are returned (the
    others are conjugates).
    """
    if not 0.0 < omega < 2.0 * np.pi:
        raise ValueError("omega must lie in (0, 2 pi)")
    lo, hi = re_range
    re = np.linspace(lo, hi, grid[0])
    im = np.linspace(0.0, im_max, grid[1])
    roots = []
    for sign in (1.0, -1.0):
        for a in re:
            for b in im:
                lam = _newton(complex(a, b), omega, sign)
                if lam is None:
                    continue
                lam = complex(lam.real, abs(lam.imag))
                if abs(lam.imag) < 1e-10:
                    lam = complex(lam.real, 0.0)
                if not lo < lam.real <= hi + 1e-12 or lam.imag > im_max:
                    continue
                if abs(lam - 1.0) < 1e-8 or abs(lam) < 1e-8:
                    continue
                if all(abs(lam - r) > 1e-8 for r in roots):
                    roots.append(lam)
    return sorted(roots, key=lambda z: (z.real, z.imag))


def singular_exponent(omega, re_range=(0.5, 8.0), im_max=10.0,
                      grid=(40, 40)):
    """
    Smallest real part of the nontrivial corner roots for opening ``omega``.

    Raises
    ------
    ValueError
        If no root lies in the search strip.
    """
    roots = corner_roots(omega, re_range, im_max, grid)
    if not roots:
        raise ValueError(f"no corner root with real part in {re_range} for "
                         f"omega={omega}; widen the search strip")
    return float(min(r.real for r in roots))


def is_admissible(xi):
    """Angle condition for the proved control rates: xi > 3/2."""
    return xi > ADMISSIBLE_XI


@dataclass(frozen=True)
class RegularityProfile:
    """
    Regularity indices and expected L2 orders for one corner angle.

    ``orders`` maps field names to expected orders, ``None`` where no rate
    is guaranteed (printed as ``--``).
    """

    omega: float
    xi: float
    admissible: bool
    k: int
    s: float
    r: float
    s_L: float
    s_y: float
    s_p: float
    s_G: float
    s_z: float
    s_q: float
    orders: dict

    def order_label(self, name):
        v = self.orders.get(name)
        return "--" if v is None else f"{v:g}"


def expected_orders(k, omega=np.pi / 2, xi=None, yd_regularity=None):
    """
    Expected orders for degree ``k`` on a convex polygon whose largest
    angle is ``omega``.

    The control lies in H^s on the boundary with s = min(3/2, xi - 1/2) and
    the adjoint in H^{r+1} with r = min(3, xi) (capped further by the
    regularity of the target, ``yd_regularity``, when given). The error
    estimate is driven by the smallest of the capped indices; fluxes and
    pressures converge at that rate and the other fields half an order
    faster.
    """
    if xi is None:
        xi = singular_exponent(omega)
    adm = is_admissible(xi)
    s = min(1.5, xi - 0.5)
    r = min(3.0, xi)
    if yd_regularity is not None:
        r = min(r, yd_regularity + 1.0)
    s_L = min(s - 0.5, k + 1)
    s_y = min(s + 0.5, k + 2)
    s_p = min(s - 0.5, k + 1)
    s_G = min(r, k + 1)
    s_z = min(r + 1, k + 2)
    s_q = min(r, k + 1)
    e = min(s_L, s_y - 1, s_p, s_G - 1, s_z - 2, s_q - 1)
    if not adm:
        orders = dict.fromkeys(("L", "G", "y", "z", "p", "q", "u"))
    else:
        slow = e if e > 0 else None
        fast = e + 0.5 if e + 0.5 > 0 else None
        orders = {"L": slow, "p": slow, "G": fast, "y": fast, "z": fast,
                  "q": fast, "u": fast}
    return RegularityProfile(float(omega), float(xi), adm, int(k), s, r,
                             s_L, s_y, s_p, s_G, s_z, s_q, orders)
