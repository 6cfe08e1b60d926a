"""Closed-form reference solutions (Hartmann channel flow, island-coalescence
equilibrium, conduction state, manufactured smooth fields) with forcing terms
derived symbolically so each reference satisfies the discretised system's
strong form exactly."""

import numpy as np
import sympy as sym

X, Y = sym.symbols("x y", real=True)


class AnalyticSolution:
    """Pointwise component functions plus the matching forcing terms.

    fields:  name -> callable(x, y) -> (..., ncomp)
    forcing: name -> callable or None ('f' momentum, 'g_E' Ohm, 'g_B' Faraday)
    """

    def __init__(self, fields, forcing, params=None, guard=None):
        self.fields = fields
        self.forcing = forcing
        self.params = params
        self.guard = guard


def _lamb(expr):
    fn = sym.lambdify((X, Y), expr, modules="numpy")

    def wrapped(x, y):
        out = fn(x, y)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x))
    return wrapped


def _lamb_vec(e1, e2):
    f1, f2 = _lamb(e1), _lamb(e2)

    def wrapped(x, y):
        return np.stack([f1(x, y), f2(x, y)], axis=-1)
    return wrapped


def _grad(e):
    return (sym.diff(e, X), sym.diff(e, Y))


def _div(v):
    return sym.diff(v[0], X) + sym.diff(v[1], Y)


def _curl2(v):
    return sym.diff(v[1], X) - sym.diff(v[0], Y)


def _vcurl(e):
    return (sym.diff(e, Y), -sym.diff(e, X))


def _cross_uv(u, b):
    # scalar u x B in 2D
    return u[0] * b[1] - u[1] * b[0]


def _cross_bs(b, s):
    # vector B x s for scalar s
    return (b[1] * s, -b[0] * s)


def standard_mhd_forcing(u, p, E, B, Re, Rem, S):
    """Momentum, Ohm and Faraday right-hand sides of the augmented B-E system
    for given smooth fields (sympy expressions); u must be divergence-free."""
    assert sym.simplify(_div(u)) == 0, "manufactured velocity must be div-free"
    gu = [[sym.diff(u[i], c) for c in (X, Y)] for i in range(2)]
    eps = [[sym.Rational(1, 2) * (gu[i][j] + gu[j][i]) for j in range(2)]
           for i in range(2)]
    div_eps = (sym.diff(eps[0][0], X) + sym.diff(eps[0][1], Y),
               sym.diff(eps[1][0], X) + sym.diff(eps[1][1], Y))
    adv = (u[0] * gu[0][0] + u[1] * gu[0][1],
           u[0] * gu[1][0] + u[1] * gu[1][1])
    gp = _grad(p)
    w = E + _cross_uv(u, B)
    lorentz = _cross_bs(B, w)
    f = tuple(sym.simplify(-2 / Re * div_eps[i] + adv[i] + gp[i]
                           + S * lorentz[i]) for i in range(2))
    g_E = sym.simplify(E + _cross_uv(u, B) - _curl2(B) / Rem)
    gd = _grad(_div(B))
    vc = _vcurl(E)
    g_B = tuple(sym.simplify(-gd[i] / Rem + vc[i]) for i in range(2))
    return f, g_E, g_B


def hartmann_solution(Re, Rem, S):
    """Hartmann channel profile on (-1/2, 1/2)^2 with transverse field
    (0, 1); the exponential large-Ha branch is selected for Ha >= 100 to
    avoid overflow of cosh/sinh; forcing terms make the profile an exact
    solution at every parameter value."""
    Ha = float(np.sqrt(S * Re * Rem))
    if Ha < 100.0:
        G = 2 * Ha * np.sinh(Ha / 2) / (Re * (np.cosh(Ha / 2) - 1.0))
        u1 = (G * Re / (2 * Ha * sym.tanh(sym.Float(Ha) / 2))
              * (1 - sym.cosh(Y * Ha) / sym.cosh(sym.Float(Ha) / 2)))
        B1 = (G / 2) * (sym.sinh(Y * Ha) / sym.sinh(sym.Float(Ha) / 2)
                        - 2 * Y)
    else:
        # large-Ha asymptotics of the cosh/sinh profile (signs fixed so the
        # no-slip values u(+-1/2) = 0 and B(+-1/2) = 0 survive the limit)
        G = 2 * Ha / Re
        u1 = (G * Re / (2 * Ha)) * (1 - sym.exp(Ha * (-Y - sym.Rational(1, 2)))
                                    - sym.exp(Ha * (Y - sym.Rational(1, 2))))
        B1 = (G / 2) * (sym.exp(Ha * (Y - sym.Rational(1, 2)))
                        - sym.exp(Ha * (-Y - sym.Rational(1, 2))) - 2 * Y)
    u = (u1, sym.Integer(0))
    B = (B1, sym.Integer(1))
    p = -G * X - B1 ** 2 / 2
    E = sym.simplify(_curl2(B) / Rem - _cross_uv(u, B))
    f, g_E, g_B = standard_mhd_forcing(u, p, E, B, Re, Rem, S)
    fields = {
        "u": _lamb_vec(*u),
        "p": _lamb(p),
        "E": _lamb(E),
        "B": _lamb_vec(*B),
    }
    forcing = {
        "f": _lamb_vec(*f),
        "g_E": _lamb(g_E),
        "g_B": _lamb_vec(*g_B),
    }
    sol = AnalyticSolution(fields, forcing,
                           params={"Re": Re, "Rem": Rem, "S": S, "Ha": Ha,
                                   "G": float(G)},
                           guard="large-Ha branch" if Ha >= 100 else None)
    return sol


def island_equilibrium(Rem, S, k=0.2, eps=0.01):
    """Island-coalescence equilibrium on (-1, 1)^2 (periodic in x), the
    Faraday forcing that balances it, and the divergence-free perturbation."""
    D = sym.cosh(2 * sym.pi * Y) + k * sym.cos(2 * sym.pi * X)
    B = (sym.sinh(2 * sym.pi * Y) / D, k * sym.sin(2 * sym.pi * X) / D)
    p = (1 - k ** 2) / 2 * (1 + 1 / D ** 2)
    u = (sym.Integer(0), sym.Integer(0))
    E = sym.simplify(_curl2(B) / Rem)
    f, g_E, g_B = standard_mhd_forcing(u, p, E, B, Re=1, Rem=Rem, S=S)
    dB = (-(eps / sym.pi) * sym.cos(sym.pi * X) * sym.sin(sym.pi * Y / 2),
          (2 * eps / sym.pi) * sym.cos(sym.pi * Y / 2) * sym.sin(sym.pi * X))
    assert sym.simplify(_div(dB)) == 0
    fields = {
        "u": _lamb_vec(*u),
        "p": _lamb(p),
        "E": _lamb(E),
        "B": _lamb_vec(*B),
        "dB": _lamb_vec(*dB),
    }
    forcing = {
        "f": _lamb_vec(*f),
        "g_E": _lamb(g_E),
        "g_B": _lamb_vec(*g_B),
    }
    return AnalyticSolution(fields, forcing,
                            params={"Rem": Rem, "S": S, "k": k, "eps": eps})


def mms_solution(Re, Rem, S, gamma=0.0):
    """Smooth manufactured solution on (-1/2, 1/2)^2 for convergence tests."""
    psi = sym.sin(sym.pi * X) * sym.sin(sym.pi * Y) / sym.pi
    u = _vcurl(psi)
    p = sym.sin(sym.pi * X) * sym.cos(2 * sym.pi * Y)
    phi = sym.cos(sym.pi * X) * sym.cos(sym.pi * Y) / sym.pi
    B = tuple(b + c for b, c in zip(_vcurl(phi), (sym.Integer(0),
                                                  sym.Integer(1))))
    E = sym.sin(2 * sym.pi * X) * sym.sin(sym.pi * Y)
    f, g_E, g_B = standard_mhd_forcing(u, p, E, B, Re, Rem, S)
    fields = {"u": _lamb_vec(*u), "p": _lamb(p), "E": _lamb(E),
              "B": _lamb_vec(*B)}
    forcing = {"f": _lamb_vec(*f), "g_E": _lamb(g_E), "g_B": _lamb_vec(*g_B)}
    return AnalyticSolution(fields, forcing,
                            params={"Re": Re, "Rem": Rem, "S": S})


def conduction_state(Ra, Pr):
    """Trivial steady solution of the Boussinesq system on the unit square
    with hot bottom plate: zero flow, linear temperature, vertical field."""
    p = Ra * Pr * (Y - Y ** 2 / 2 - sym.Rational(1, 3))
    fields = {
        "u": _lamb_vec(sym.Integer(0), sym.Integer(0)),
        "p": _lamb(p),
        "theta": _lamb(1 - Y),
        "E": _lamb(sym.Integer(0)),
        "B": _lamb_vec(sym.Integer(0), sym.Integer(1)),
    }
    return AnalyticSolution(fields, {}, params={"Ra": Ra, "Pr": Pr})
