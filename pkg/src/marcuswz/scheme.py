"""Wong-Zakai scheme on a driving path, plus reference solutions.

The time-discrete scheme advances knot to knot through the one-step map,

    X_0 = x,    X_{(k+1)h} = Psi(X_{kh}; h, dW over cell, dZ over cell),

and the cadlag extension evaluates Psi with the partial increments up to an
interior time.  Three references are available for error studies: the exact
exponential for the scalar linear family, an event-driven pathwise solver
for pure-jump dynamics (b = 0), and the scheme itself on the finest grid.
"""

from dataclasses import dataclass

import numpy as np

from .driver import DrivingPath
from .errors import ConfigError, FlowDivergenceError, SchemeDivergenceError
from .flows import (DEFAULT_CONFIG, REFERENCE_CONFIG, OdeConfig, marcus_flow,
                    psi_map)


def _stride_for(path, h):
    ratio = h / path.h_min
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"h={h!r} is not a positive multiple of the finest step "
                          f"{path.h_min!r}")
    if stride > path.n_cells:
        raise ConfigError(f"h={h!r} exceeds the horizon {path.horizon!r}")
    return stride


@dataclass(frozen=True)
class KnotTrajectory:
    """Scheme states at the knots kh <= T, with provenance.

    ``h`` is canonicalized to stride * h_min so that knot times and step
    lengths are the exact grid values used in the recursion.
    """

    h: float
    knot_times: np.ndarray
    states: np.ndarray
    x0: np.ndarray
    master_seed: int
    path_index: int
    cfg: OdeConfig
    max_step_error: float | None = None

    def __post_init__(self):
        self.knot_times.setflags(write=False)
        self.states.setflags(write=False)

    @property
    def dimension(self):
        return self.states.shape[1]

    def state_at(self, t):
        k = int(round(t / self.h))
        if abs(t - k * self.h) > 1e-9 * max(1.0, abs(t)) or not 0 <= k < len(self.states):
            raise ConfigError(f"time {t!r} is not a knot of step {self.h!r}")
        return self.states[k]

    def write_csv(self, fileobj, reference=None):
        """Plot-ready CSV: t, X^1..X^d, optionally ref_X^1..ref_X^d."""
        d = self.dimension
        header = ["t"] + [f"X{i + 1}" for i in range(d)]
        columns = [self.knot_times] + [self.states[:, i] for i in range(d)]
        if reference is not None:
            header += [f"ref_X{i + 1}" for i in range(d)]
            columns += [reference[:, i] for i in range(d)]
        fileobj.write(",".join(header) + "\n")
        for row in zip(*columns):
            fileobj.write(",".join("%.17g" % v for v in row) + "\n")


def wz_knots(coeffs, path, x0, h, cfg=DEFAULT_CONFIG):
    """Run the time-discrete scheme over all knots kh <= T on one path."""
    stride = _stride_for(path, h)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (coeffs.dimension,):
        raise ConfigError(f"x0: expected shape ({coeffs.dimension},)")
    if np.abs(x0).max() > cfg.divergence_threshold:
        raise SchemeDivergenceError("initial condition beyond divergence guard", 0)
    n_knots = path.n_cells // stride
    h_exact = path.grid_time(stride)
    states = np.empty((n_knots + 1, coeffs.dimension))
    states[0] = x0
    max_err = 0.0 if cfg.richardson else None
    state = x0
    for k in range(n_knots):
        d_w, d_z = path.increments_by_index(k * stride, (k + 1) * stride)
        try:
            nxt = psi_map(coeffs, state, h_exact, d_w, d_z, cfg)
            if cfg.richardson:
                refined = psi_map(coeffs, state, h_exact, d_w, d_z, cfg.tightened(2))
                max_err = max(max_err, float(np.abs(refined - nxt).max()) / 15.0)
        except FlowDivergenceError as exc:
            raise SchemeDivergenceError(f"scheme diverged at knot {k + 1}: {exc}",
                                        k + 1) from exc
        states[k + 1] = nxt
        state = nxt
    times = h_exact * np.arange(n_knots + 1)
    return KnotTrajectory(h=h_exact, knot_times=times, states=states, x0=x0,
                          master_seed=path.master_seed, path_index=path.path_index,
                          cfg=cfg, max_step_error=max_err)


def wz_continuous_eval(coeffs, path, x0, h, t, cfg=DEFAULT_CONFIG, knots=None):
    """Cadlag extension at a finest-grid time t: Psi from the latest knot
    below t with the partial increments over (kh, t].

    At knot times this reproduces the knot states bit for bit.  Passing a
    precomputed ``knots`` trajectory avoids re-running the recursion.
    """
    stride = _stride_for(path, h)
    idx = path.grid_index(t)
    if idx == 0:
        return np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if knots is None:
        knots = wz_knots(coeffs, path, x0, h, cfg)
    k = (idx - 1) // stride
    base = knots.states[k]
    d_w, d_z = path.increments_by_index(k * stride, idx)
    tau = path.grid_time(idx - k * stride)
    try:
        return psi_map(coeffs, base, tau, d_w, d_z, cfg)
    except FlowDivergenceError as exc:
        raise SchemeDivergenceError(f"extension diverged in cell {k}: {exc}", k) from exc


@dataclass(frozen=True)
class ReferenceKind:
    """Which reference solution an experiment compares against."""

    kind: str
    h_ref: float | None = None

    _KINDS = ("closed_form_linear", "event_driven", "self_refined")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"reference: unknown kind {self.kind!r} "
                              f"(have: {', '.join(self._KINDS)})")

    @classmethod
    def closed_form(cls):
        return cls("closed_form_linear")

    @classmethod
    def event_driven(cls):
        return cls("event_driven")

    @classmethod
    def self_refined(cls, h_ref=None):
        return cls("self_refined", h_ref=h_ref)

    def validate(self, coeffs, path=None):
        if self.kind == "event_driven" and not coeffs.b_is_zero:
            raise ConfigError("reference: event_driven requires b to be the zero map")
        if self.kind == "closed_form_linear" and coeffs.name != "scalar_linear":
            raise ConfigError("reference: closed_form_linear requires the "
                              "scalar_linear family")
        if self.kind == "self_refined" and path is not None and self.h_ref is not None:
            if _stride_for(path, self.h_ref) != 1:
                raise ConfigError("reference: self_refined h_ref must equal the "
                                  "finest step of the path")


def event_driven_reference(coeffs, path, x0, times, cfg=REFERENCE_CONFIG):
    """Exact pathwise solution for b = 0: between jumps integrate the drift
    ODE dX/dt = a(X) + c(X) r (r the compensator rate), at each jump apply
    the jump flow.  Evaluated at the requested (nondecreasing) times.

    Exactness is up to integrator tolerance only, which is why the default
    config is the tight reference profile.
    """
    if not coeffs.b_is_zero:
        raise ConfigError("event_driven_reference: b must be the zero map")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < 0.0 or np.any(np.diff(times) < 0.0)
                       or times[-1] > path.horizon):
        raise ConfigError("times: must be nondecreasing within [0, T]")
    rate_eff = path.comp_per_cell / path.h_min

    def drift(state, span):
        if span <= 0.0:
            return state
        return psi_map(coeffs, state, span, np.zeros(coeffs.noise_dim),
                       span * rate_eff, cfg)

    out = np.empty((times.size, coeffs.dimension))
    current_time = 0.0
    next_jump = 0
    jt, js = path.jump_times, path.jump_sizes
    for i, t in enumerate(times):
        while next_jump < jt.size and jt[next_jump] <= t:
            x = drift(x, jt[next_jump] - current_time)
            x = marcus_flow(coeffs, js[next_jump], x, cfg)
            current_time = jt[next_jump]
            next_jump += 1
        x = drift(x, t - current_time)
        current_time = t
        out[i] = x
    return out


def closed_form_linear(alpha, beta, gamma, x0, path, times):
    """Exact solution x exp(alpha t + beta W_t + gamma Z_t) of the scalar
    linear equation, read off the path at finest-grid times."""
    if path.dimension != 1:
        raise ConfigError("closed_form_linear: needs a one-dimensional driver")
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, 1))
    for i, t in enumerate(times):
        w = path.brownian_value(t)[0]
        z = path.levy_value(t)[0]
        out[i, 0] = x0 * np.exp(alpha * t + beta * w + gamma * z)
    return out


def self_refined_reference(coeffs, path, x0, h_ref=None, cfg=DEFAULT_CONFIG):
    """The scheme itself on the finest grid of the path; consumers subsample
    the returned trajectory at coarse knots."""
    if h_ref is None:
        h_ref = path.h_min
    if _stride_for(path, h_ref) != 1:
        raise ConfigError("self_refined_reference: h_ref must equal the finest step")
    return wz_knots(coeffs, path, x0, h_ref, cfg)
