"""Shared model plumbing: physical/algorithmic parameters, mixed states over
ordered field tuples, boundary-condition bookkeeping and small helpers used by
all three MHD models."""

import numpy as np

from ..elements import Field


class ModelParams:
    """Dimensionless physical and algorithmic parameters.

    All physical parameters are positive; eta/delta in {0, 1} switch the
    transient mass terms and the Picard/Newton coupling terms.
    """

    def __init__(self, Re=1.0, Rem=1.0, S=1.0, R_H=0.0, Ra=1.0, Pr=1.0,
                 Pm=1.0, gamma=1e4, dt=None, stab_mu=0.0, quad_degree_bc=None):
        for name, val in [("Re", Re), ("Rem", Rem), ("S", S), ("Ra", Ra),
                          ("Pr", Pr), ("Pm", Pm)]:
            if val is not None and val <= 0 and name not in ("Ra",):
                raise ValueError(f"{name} must be positive")
        self.Re = Re
        self.Rem = Rem
        self.S = S
        self.R_H = R_H
        self.Ra = Ra
        self.Pr = Pr
        self.Pm = Pm
        self.gamma = gamma
        self.dt = dt
        self.stab_mu = stab_mu
        self.quad_degree_bc = quad_degree_bc
        self.gravity = np.array([0.0, 1.0])

    def replace(self, **kw):
        import copy
        out = copy.copy(self)
        for k, v in kw.items():
            setattr(out, k, v)
        return out

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("Re", "Rem", "S", "R_H", "Ra", "Pr", "Pm", "gamma", "dt")}


class MixedState:
    """Ordered tuple of fields with offsets into one monolithic vector."""

    def __init__(self, spaces):
        # spaces: list of (name, FunctionSpace)
        self.names = [n for n, _ in spaces]
        self.spaces = {n: s for n, s in spaces}
        self.offsets = {}
        off = 0
        for n, s in spaces:
            self.offsets[n] = off
            off += s.total_dofs
        self.total = off
        self.vector = np.zeros(off)

    def field_slice(self, name):
        o = self.offsets[name]
        return slice(o, o + self.spaces[name].total_dofs)

    def view(self, name):
        return self.vector[self.field_slice(name)]

    def field(self, name):
        return Field(self.spaces[name], self.view(name))

    def set_field(self, name, values):
        if isinstance(values, Field):
            values = values.coefficients
        self.vector[self.field_slice(name)] = values

    def copy(self):
        out = MixedState([(n, self.spaces[n]) for n in self.names])
        out.vector = self.vector.copy()
        return out

    def with_vector(self, vec):
        out = MixedState([(n, self.spaces[n]) for n in self.names])
        out.vector = np.asarray(vec, dtype=float).copy()
        return out

    def sizes(self):
        return {n: self.spaces[n].total_dofs for n in self.names}


def merge_bc_values(pairs):
    """Merge (index, value) pairs from several DirichletBC objects; raise on
    conflicting prescriptions for one dof."""
    seen = {}
    for idx, vals in pairs:
        for i, v in zip(idx, vals):
            if i in seen and abs(seen[i] - v) > 1e-12 * (1 + abs(v)):
                raise ValueError(f"conflicting boundary values at dof {i}")
            seen[i] = v
    if not seen:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx = np.fromiter(seen.keys(), dtype=np.int64)
    order = np.argsort(idx)
    vals = np.fromiter(seen.values(), dtype=float)
    return idx[order], vals[order]


def perp(v):
    """(v2, -v1) componentwise; (u x B)_2d = u . perp(B)."""
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


CROSS_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])
