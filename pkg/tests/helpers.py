"""Hand-built nuisance sets and small tables shared across test modules."""

import numpy as np

from mivest.data import ObservationTable
from mivest.nuisance import NuisanceSet


def const_fn(values):
    """(z, X) -> constant values[z] broadcast over the rows of X."""
    vals = [float(v) for v in values]

    def fn(z, X):
        X = np.atleast_2d(X)
        return np.full(X.shape[0], vals[z])

    return fn


def const_marg(value):
    v = float(value)

    def fn(X):
        return np.full(np.atleast_2d(X).shape[0], v)

    return fn


def const_ns(pi, rho, mu, pi0, *, pi_marg=None, mu_marg=None, delta=None,
             eps_den=1e-6):
    """Nuisance set with per-level constants.

    Passing pi_marg or mu_marg pins the marginals directly (direct mode);
    otherwise they are the exact rho-weighted sums.  delta may be a scalar
    or a per-level sequence and installs an override callable.
    """
    L = len(pi)
    kw = {}
    mode = "marginalize"
    if pi_marg is not None or mu_marg is not None:
        mode = "direct"
        pm = pi_marg if pi_marg is not None else float(np.dot(rho, pi))
        mm = mu_marg if mu_marg is not None else float(np.dot(rho, mu))
        kw["pi_marg_fn"] = const_marg(pm)
        kw["mu_marg_fn"] = const_marg(mm)
    if delta is not None:
        dvals = delta if hasattr(delta, "__len__") else [delta] * L
        kw["delta_fn"] = const_fn(dvals)
    return NuisanceSet(
        L=L,
        pi_fn=const_fn(pi),
        rho_fn=const_fn(rho),
        mu_fn=const_fn(mu),
        pi0=float(pi0),
        mode=mode,
        eps_den=eps_den,
        **kw,
    )


def one_row_x(x1=0.5, x2=0.5):
    return np.array([x1, x2])


def small_table(Z, R, Y, X=None, L=None):
    """Table from plain lists; X defaults to a deterministic 2-column grid."""
    Z = np.asarray(Z)
    n = Z.shape[0]
    if X is None:
        t = np.linspace(0.1, 0.9, n)
        X = np.column_stack([t, t[::-1]])
    return ObservationTable.from_arrays(np.asarray(X, dtype=float), Z,
                                        np.asarray(R), Y, L=L)
