"""Newton and Picard drivers with full (undamped) updates, fixed-step
parameter continuation, and deflation of previously found roots via the
shifted inverse-distance multiplier (applied to the Newton step through the
scalar Sherman-Morrison factor)."""

import numpy as np

from .linalg import LuSolver


class NonlinearConfig:
    def __init__(self, rtol=1e-10, atol=1e-6, max_steps=50,
                 lin_rtol=1e-7, lin_atol=1e-7, linearisation="newton"):
        for t in (rtol, atol, lin_rtol, lin_atol):
            if t <= 0:
                raise ValueError("tolerances must be positive")
        self.rtol = rtol
        self.atol = atol
        self.max_steps = max_steps
        self.lin_rtol = lin_rtol
        self.lin_atol = lin_atol
        self.linearisation = linearisation


class SolverReport:
    """Per-step residual/linear-iteration ledger in the "(nonlinear)
    avg-linear" convention."""

    def __init__(self):
        self.residuals = []
        self.linear_iters = []
        self.converged = False

    @property
    def steps(self):
        return len(self.linear_iters)

    @property
    def avg_linear(self):
        if not self.linear_iters:
            return 0.0
        return float(np.mean(self.linear_iters))

    @property
    def total_linear(self):
        return int(np.sum(self.linear_iters)) if self.linear_iters else 0

    def cell(self):
        if not self.converged:
            return "NF"
        return "(%2d) %.1f" % (self.steps, self.avg_linear)

    def csv_row(self, problem="", params=None):
        p = params.as_dict() if params is not None else {}
        cols = [problem] + [f"{k}={v}" for k, v in p.items()]
        cols += [str(self.steps), f"{self.avg_linear:.2f}",
                 str(self.converged).lower()]
        return ",".join(cols)


def direct_solver_factory(A, parts=None):
    lu = LuSolver(A)

    def solve(rhs):
        return lu.solve(rhs), 1

    return solve


def solve_nonlinear(model, state, config=None, solver_factory=None,
                    residual_fn=None, jacobian_fn=None, deflation=None,
                    callback=None):
    """Drive R(U) = 0 from `state` (which must satisfy the BCs).

    solver_factory(A, parts) returns solve(rhs) -> (delta, linear_iters);
    default is a sparse direct solve.  residual_fn/jacobian_fn override the
    model's steady forms (used by the time steppers).  With `deflation`, the
    driver finds a root of the deflated residual, which keeps the update
    direction and rescales its length.
    """
    config = config or NonlinearConfig()
    solver_factory = solver_factory or direct_solver_factory
    residual = residual_fn or model.residual
    jacobian = jacobian_fn or (
        lambda v: model.jacobian(v, config.linearisation))
    report = SolverReport()
    x = state.vector.copy()
    if hasattr(model, "constrained_idx"):
        # seed states from continuation may carry stale boundary values
        x[model.constrained_idx] = model.constrained_vals
    r = residual(x)
    rnorm0 = np.linalg.norm(r)
    report.residuals.append(rnorm0)
    if rnorm0 < config.atol:
        report.converged = True
        out = state.with_vector(x)
        return out, report
    for step in range(config.max_steps):
        needs = getattr(solver_factory, "needs_matrix", None)
        if needs is None or needs():
            A, parts = jacobian(x)
        else:
            A, parts = None, None
        solve = solver_factory(A, parts)
        delta, nit = solve(-r)
        if deflation is not None:
            tau = deflation.step_scale(x, delta)
            delta = tau * delta
        x = x + delta
        r = residual(x)
        rnorm = np.linalg.norm(r)
        report.residuals.append(rnorm)
        report.linear_iters.append(nit)
        if callback is not None:
            callback(step, rnorm, nit)
        if not np.isfinite(rnorm):
            break
        if rnorm < config.atol or rnorm < config.rtol * rnorm0:
            report.converged = True
            break
    out = state.with_vector(x)
    return out, report


class ContinuationSchedule:
    """Ordered parameter stages; the first (column) parameter is traversed
    first, each solution seeding the next stage."""

    # continuation steps used for the stationary problems
    DEFAULT_STEPS = {
        "S": [1.0, 100.0, 1000.0, 5000.0, 10000.0],
        "Re": [1.0, 500.0, 1000.0, 3000.0, 5000.0, 7000.0, 10000.0],
        "Rem": [1.0, 500.0, 1000.0, 3000.0, 5000.0, 7000.0, 10000.0],
        "Ra": [1.0, 10.0, 100.0, 1000.0, 10000.0, 30000.0, 100000.0],
        "Pr": [1.0, 0.1, 0.03, 0.01, 0.003, 0.001],
    }

    def __init__(self, stages):
        if not stages:
            raise ValueError("empty continuation schedule")
        for name, values in stages:
            arr = np.asarray(values, dtype=float)
            if len(arr) == 0:
                raise ValueError(f"no values for parameter {name}")
            d = np.diff(arr)
            if len(d) and not (np.all(d >= 0) or np.all(d <= 0)):
                raise ValueError(f"values for {name} must be monotone")
        self.stages = [(n, list(map(float, v))) for n, v in stages]

    @classmethod
    def toward(cls, targets, order=None, steps=None):
        """Build a schedule walking each parameter through the default step
        list truncated at its target (the target is always included)."""
        steps = steps or cls.DEFAULT_STEPS
        order = order or list(targets.keys())
        stages = []
        for name in order:
            tgt = float(targets[name])
            base = [v for v in steps.get(name, [tgt])]
            increasing = base == sorted(base)
            if increasing:
                vals = [v for v in base if v < tgt] + [tgt]
            else:
                vals = [v for v in base if v > tgt] + [tgt]
            stages.append((name, vals))
        return cls(stages)


class StageFailure(Exception):
    def __init__(self, parameter, value, report):
        super().__init__(f"continuation stage {parameter}={value} "
                         "failed to converge (NF)")
        self.parameter = parameter
        self.value = value
        self.report = report


def continue_parameters(model, schedule, state=None, config=None,
                        solver_factory=None, keep_reports=False):
    """Traverse the schedule, seeding every solve with the previous solution;
    returns (final state, final-stage report[, all reports])."""
    state = state or model.initial_state()
    reports = []
    report = None
    for name, values in schedule.stages:
        for v in values:
            if report is not None and report.converged and \
                    getattr(model.params, name) == v:
                continue  # parameter unchanged: previous solution stands
            setattr(model.params, name, v)
            if hasattr(model, "params_changed"):
                model.params_changed()
            state, report = solve_nonlinear(model, state, config,
                                            solver_factory)
            reports.append(((name, v), report))
            if not report.converged:
                raise StageFailure(name, v, report)
    if keep_reports:
        return state, report, reports
    return state, report


class DeflationOperator:
    """Product of shifted inverse-square-distance factors over found roots.

    M(x) = prod_i (1 / d_i(x)^2 + shift) with d_i^2 = (x - x_i)^T W (x - x_i)
    and W the combined velocity mass + broken-gradient, temperature and
    magnetic Gram matrix provided by the model.
    """

    def __init__(self, gram, shift=1.0, power=2):
        self.W = gram
        self.shift = shift
        self.power = power
        self.solutions = []

    def add(self, vec):
        self.solutions.append(np.array(vec, dtype=float))

    def distance2(self, x, xi):
        d = x - xi
        return float(d @ (self.W @ d))

    def factors(self, x):
        return [1.0 / self.distance2(x, xi) ** (self.power // 2)
                + self.shift for xi in self.solutions]

    def value(self, x):
        return float(np.prod(self.factors(x)))

    def grad(self, x):
        g = np.zeros_like(x)
        fs = self.factors(x)
        prod = np.prod(fs)
        for xi, f in zip(self.solutions, fs):
            d2 = self.distance2(x, xi)
            # d/dx (1/d^2) = -2 W (x - xi) / d^4
            g += (prod / f) * (-2.0 / d2 ** 2) * (self.W @ (x - xi))
        return g

    def step_scale(self, x, delta0):
        """Scalar tau with tau*delta0 the Newton step of the deflated
        residual (Sherman-Morrison on the rank-one Jacobian correction)."""
        if not self.solutions:
            return 1.0
        m = self.value(x)
        g = self.grad(x)
        denom = 1.0 - (g @ delta0) / m
        if abs(denom) < 1e-14:
            return 1.0
        return 1.0 / denom

    def min_distance(self, x):
        if not self.solutions:
            return np.inf
        return np.sqrt(min(self.distance2(x, xi) for xi in self.solutions))


def deflated_solve(model, state, deflation, config=None, solver_factory=None,
                   distinctness=1e-6):
    """Search for a root distinct from every deflated snapshot; returns
    (state, report) with report.converged False when no further solution is
    found within the step budget."""
    if not deflation.solutions:
        raise ValueError("deflation requires at least one snapshot")
    out, report = solve_nonlinear(model, state, config, solver_factory,
                                  deflation=deflation)
    if report.converged and deflation.min_distance(out.vector) <= distinctness:
        report.converged = False
    return out, report
