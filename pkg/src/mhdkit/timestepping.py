"""Implicit time integrators for the MHD models: implicit Euler,
Crank-Nicolson and BDF2 (with a Crank-Nicolson first step), quasi-Newton
Jacobian reuse across steps, and the island-coalescence reconnection-rate
diagnostic via a weak curl solve."""

import numpy as np

from .elements import FunctionSpace, Field, l2_project
from .assembly import cell_matrix
from .linalg import LuSolver
from .nonlinear import NonlinearConfig, SolverReport, solve_nonlinear

from .conservative import (MidpointState, ConservativeScheme,
                           step_conservative_uxn, step_conservative_udotn)

__all__ = [
    "TimeConfig", "step_multistep", "run_transient", "ReconnectionProbe",
    "FrozenJacobianFactory", "MidpointState", "ConservativeScheme",
    "step_conservative_uxn", "step_conservative_udotn",
]


class TimeConfig:
    def __init__(self, dt, T, scheme="bdf2_cn_start", startup_substeps=0,
                 startup_factor=10.0):
        if dt <= 0 or T < dt:
            raise ValueError("need dt > 0 and T >= dt")
        self.dt = dt
        self.T = T
        self.scheme = scheme
        self.startup_substeps = startup_substeps
        self.startup_factor = startup_factor


def _transient_forms(model, scheme, dt, history, linearisation="newton"):
    """residual_fn/jacobian_fn closures for one implicit step.

    history: list of previous state vectors, newest last."""
    con = model.constrained_idx

    if scheme == "implicit_euler":
        xp = history[-1]

        def residual(x):
            r = model.apply_mass(x - xp) / dt + model.residual(
                x, constrain=False)
            r[con] = 0.0
            return r

        def jacobian(x):
            return model.jacobian(x, linearisation, mass_coeff=1.0 / dt)
        return residual, jacobian

    if scheme == "crank_nicolson" or (scheme == "bdf2_cn_start"
                                      and len(history) < 2):
        xp = history[-1]
        rp = model.residual(xp, constrain=False)

        def residual(x):
            r = (model.apply_mass(x - xp) / dt
                 + 0.5 * (model.residual(x, constrain=False) + rp))
            r[con] = 0.0
            return r

        def jacobian(x):
            return model.jacobian(x, linearisation, mass_coeff=2.0 / dt,
                                  steady_coeff=0.5)
        return residual, jacobian

    if scheme == "bdf2_cn_start":
        xp, xpp = history[-1], history[-2]

        def residual(x):
            r = (model.apply_mass(1.5 * x - 2.0 * xp + 0.5 * xpp) / dt
                 + model.residual(x, constrain=False))
            r[con] = 0.0
            return r

        def jacobian(x):
            return model.jacobian(x, linearisation, mass_coeff=1.5 / dt)
        return residual, jacobian

    raise ValueError(f"unknown scheme {scheme!r}")


def step_multistep(model, scheme, history, dt, nl_config=None,
                   solver_factory=None, linearisation="newton"):
    """One implicit step; `history` holds previous state vectors (1 for
    Euler/CN, 2 for BDF2).  Returns (state_vector, report)."""
    nl_config = nl_config or NonlinearConfig()
    residual, jacobian = _transient_forms(model, scheme, dt, history,
                                          linearisation)
    state = model.state_template.with_vector(history[-1])
    # extrapolated initial guess
    if len(history) >= 2:
        guess = 2.0 * history[-1] - history[-2]
        state.vector[:] = guess
        state.vector[model.constrained_idx] = model.constrained_vals
    out, rep = solve_nonlinear(
        model, state, nl_config, solver_factory,
        residual_fn=residual,
        jacobian_fn=lambda x: jacobian(x))
    if not rep.converged:
        raise TimeStepFailure(rep)
    return out.vector, rep


class TimeStepFailure(Exception):
    def __init__(self, report):
        super().__init__("nonlinear iteration failed within a time step")
        self.report = report


class FrozenJacobianFactory:
    """Direct solver with quasi-Newton reuse: the factorisation is refreshed
    every `refresh_every` time steps or whenever a nonlinear solve needs more
    than `max_newton` iterations (the residual stays exact, so reuse affects
    only the convergence rate)."""

    def __init__(self, refresh_every=20, max_newton=6):
        self.refresh_every = refresh_every
        self.max_newton = max_newton
        self._lu = None
        self._steps_since = 10 ** 9
        self._calls_this_solve = 0

    def new_step(self):
        self._steps_since += 1
        self._calls_this_solve = 0

    def invalidate(self):
        self._lu = None
        self._steps_since = 10 ** 9

    def _due(self, calls):
        slow = calls > self.max_newton and \
            (calls - 1) % self.max_newton == 0
        return (self._lu is None
                or self._steps_since >= self.refresh_every
                or slow)

    def needs_matrix(self):
        return self._due(self._calls_this_solve + 1)

    def __call__(self, A, parts):
        self._calls_this_solve += 1
        if A is not None and self._due(self._calls_this_solve):
            self._lu = LuSolver(A)
            self._steps_since = 0

        lu = self._lu

        def solve(rhs):
            return lu.solve(rhs), 1

        return solve


def run_transient(model, state0, tconfig, nl_config=None,
                  solver_factory=None, observers=None, linearisation="newton",
                  verbose=False):
    """Advance to T; returns (final state vector, rows) with one observer row
    per accepted step.  BDF2 runs its first step with Crank-Nicolson."""
    nl_config = nl_config or NonlinearConfig()
    rows = []
    history = [state0.vector.copy()]
    t = 0.0
    nsteps = int(round(tconfig.T / tconfig.dt))
    observers = observers or {}

    def observe(t, vec, rep):
        row = {"t": t}
        for name, fn in observers.items():
            row[name] = fn(vec)
        if rep is not None:
            row["newton_its"] = rep.steps
            row["lin_its"] = rep.avg_linear
        rows.append(row)

    observe(0.0, history[0], None)
    for n in range(nsteps):
        if isinstance(solver_factory, FrozenJacobianFactory):
            solver_factory.new_step()
            if tconfig.scheme == "bdf2_cn_start" and n == 1:
                solver_factory.invalidate()  # CN -> BDF2 operator switch
        scheme = tconfig.scheme
        try:
            vec, rep = step_multistep(model, scheme, history, tconfig.dt,
                                      nl_config, solver_factory,
                                      linearisation)
        except TimeStepFailure:
            if isinstance(solver_factory, FrozenJacobianFactory):
                solver_factory.invalidate()
                vec, rep = step_multistep(model, scheme, history, tconfig.dt,
                                          nl_config, solver_factory,
                                          linearisation)
            else:
                raise
        t += tconfig.dt
        history.append(vec)
        if len(history) > 2:
            history.pop(0)
        observe(t, vec, rep)
        if verbose:
            print(f"  t={t:.3f} newton={rep.steps} lin={rep.avg_linear:.1f}",
                  flush=True)
    return history[-1], rows


class ReconnectionProbe:
    """(curl B)(0,0,t) - (curl B)(0,0,0), divided by sqrt(Rem): weak curl
    into the scalar H0(curl) space, projected to CG1 for the point value."""

    def __init__(self, model, field="B"):
        mesh = model.mesh
        self.model = model
        self.field = field
        self.cg2 = FunctionSpace(mesh, "CG", 2)
        self.cg1 = FunctionSpace(mesh, "CG", 1)
        con = self.cg2.boundary_dofs()
        from .assembly import constrain_matrix
        M = cell_matrix(self.cg2, self.cg2, qdeg=6)
        self.Mlu = LuSolver(constrain_matrix(M, con))
        self.con = con
        B_space = model.spaces[field]
        self.C = cell_matrix(self.cg2, B_space, "vcurl", "val", qdeg=6)
        self.M1lu = LuSolver(cell_matrix(self.cg1, self.cg1, qdeg=4).tocsc())
        self.M12 = cell_matrix(self.cg1, self.cg2, qdeg=6)
        # origin must be a mesh vertex
        d = np.linalg.norm(mesh.vertices, axis=1)
        i = int(np.argmin(d))
        if d[i] > 1e-10:
            raise ValueError("origin is not a mesh vertex; choose an even "
                             "mesh so (0, 0) is a grid point")
        self.origin_vertex = i
        self.j00_initial = None

    def weak_curl_at_origin(self, vec):
        st = self.model.state_template
        B = vec[st.field_slice(self.field)]
        rhs = self.C @ B
        rhs[self.con] = 0.0
        j0 = self.Mlu.solve(rhs)
        j1 = self.M1lu.solve(self.M12 @ j0)
        return float(j1[self.origin_vertex])

    def __call__(self, vec):
        val = self.weak_curl_at_origin(vec)
        if self.j00_initial is None:
            self.j00_initial = val
            return 0.0
        return (val - self.j00_initial) / np.sqrt(self.model.params.Rem)


def write_series_csv(path, rows, columns=None):
    if columns is None:
        columns = list(rows[0].keys()) if rows else ["t"]
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(f"{row.get(c, '')}" for c in columns) + "\n")
