"""Monte Carlo error estimation across a ladder of step sizes.

All step sizes consume the same driving paths (common random numbers): a
path is sampled once at the finest level and aggregated exactly to each
coarser step, so error differences across the ladder reflect discretization
only.  Work is split into fixed-size path blocks; blocks may run on a
thread pool, but every per-path result lands in a preallocated slot indexed
by path number and the final reduction is sequential, so estimates are
bit-identical for any thread count.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .driver import MAX_LEVEL, exp_moment_check, sample_path
from .errors import ConfigError, DivergenceAbortError, RateFitError
from .flows import (DEFAULT_CONFIG, REFERENCE_CONFIG, _integrate_batch,
                    estimate_constants, flow_error_estimate)
from .scheme import ReferenceKind

BLOCK_SIZE = 256


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a convergence run needs, validated up front.

    The step ladder is given as dyadic exponents: h = T * 2**-e for each e,
    all multiples of the finest step T * 2**-level.
    """

    coefficients: object
    model: object
    horizon: float
    level: int
    h_exponents: tuple
    n_paths: int
    x0: np.ndarray
    reference: ReferenceKind
    master_seed: int = 0
    p: float = 1.0
    rate_epsilon: float = 0.1
    ball_radius: float | None = None
    lattice_spacing: float | None = None
    ode: object = DEFAULT_CONFIG
    reference_ode: object = REFERENCE_CONFIG
    moment_margin: float = 0.1
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ConfigError("experiment.T: must be positive")
        if not 0 <= self.level <= MAX_LEVEL:
            raise ConfigError(f"experiment.level: must be in [0, {MAX_LEVEL}]")
        exps = tuple(sorted(set(int(e) for e in self.h_exponents)))
        if not exps:
            raise ConfigError("experiment.h_exponents: must be non-empty")
        if exps[0] < 0 or exps[-1] > self.level:
            raise ConfigError("experiment.h_exponents: each e needs 0 <= e <= level")
        object.__setattr__(self, "h_exponents", exps)
        if self.n_paths < 100:
            raise ConfigError("experiment.paths: need at least 100 paths")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.coefficients.dimension,):
            raise ConfigError(f"experiment.x0: expected {self.coefficients.dimension} "
                              "components")
        object.__setattr__(self, "x0", x0)
        if self.model.dimension != self.coefficients.noise_dim:
            raise ConfigError("model.dimension: must match the coefficient noise "
                              "dimension")
        if not 0.0 < self.rate_epsilon < 1.0:
            raise ConfigError("experiment.rate_epsilon: must be in (0, 1)")
        if self.p < 1.0:
            raise ConfigError("experiment.p: moment order must be >= 1")
        if self.lattice_spacing is not None:
            if self.ball_radius is None:
                raise ConfigError("experiment.ball_radius: required with a lattice")
            if self.ball_radius <= 0.0 or self.lattice_spacing <= 0.0:
                raise ConfigError("experiment.lattice_spacing: need N > 0 and "
                                  "delta > 0 (delta > N degenerates to the "
                                  "single point 0)")
        if self.reference.kind == "self_refined" and self.reference.h_ref is None:
            object.__setattr__(self, "reference",
                               ReferenceKind.self_refined(self.h_min))

    @property
    def h_min(self):
        return self.horizon / 2 ** self.level

    @property
    def h_ladder(self):
        return np.array([self.horizon * 2.0 ** -e for e in self.h_exponents])

    @property
    def strides(self):
        return [2 ** (self.level - e) for e in self.h_exponents]


@dataclass(frozen=True)
class ErrorCurve:
    """Monte Carlo error estimates per step size, h strictly decreasing."""

    h: np.ndarray
    estimate: np.ndarray
    ci_half_width: np.ndarray
    m_effective: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if np.any(np.diff(h) >= 0.0):
            raise ConfigError("curve: h must be strictly decreasing")
        if np.any(np.asarray(self.estimate) < 0.0):
            raise ConfigError("curve: estimates must be nonnegative")

    def write_csv(self, fileobj):
        fileobj.write("h,error,ci,paths\n")
        for h, err, ci, m in zip(self.h, self.estimate, self.ci_half_width,
                                 self.m_effective):
            fileobj.write("%.17g,%.17g,%.17g,%d\n" % (h, err, ci, m))


@dataclass(frozen=True)
class RateFit:
    """Weighted log-log least-squares fit of an error curve."""

    slope: float
    intercept: float
    r_squared: float
    residuals: np.ndarray
    used_h: np.ndarray
    excluded_h: np.ndarray

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared,
                "residuals": [float(r) for r in self.residuals],
                "used_h": [float(h) for h in self.used_h],
                "excluded_h": [float(h) for h in self.excluded_h]}


def fit_rate(curve, exclude_floor=0.0):
    """Fit log(error) = intercept + slope * log(h) by least squares with
    weights 1/ci^2 (unweighted when any CI is zero).

    Points at or below ``exclude_floor`` are dropped as numerical-floor
    contamination; at least three must survive.
    """
    h = np.asarray(curve.h, dtype=float)
    err = np.asarray(curve.estimate, dtype=float)
    ci = np.asarray(curve.ci_half_width, dtype=float)
    keep = err > max(exclude_floor, 0.0)
    if keep.sum() < 3:
        raise RateFitError(f"rate fit needs >= 3 points above the floor, "
                           f"have {int(keep.sum())}")
    x = np.log(h[keep])
    y = np.log(err[keep])
    if np.all(ci[keep] > 0.0):
        weights = 1.0 / ci[keep] ** 2
    else:
        weights = np.ones_like(x)
    slope, intercept = np.polyfit(x, y, 1, w=np.sqrt(weights))
    predicted = intercept + slope * x
    residuals = y - predicted
    mean_y = np.sum(weights * y) / np.sum(weights)
    ss_res = float(np.sum(weights * residuals ** 2))
    ss_tot = float(np.sum(weights * (y - mean_y) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return RateFit(slope=float(slope), intercept=float(intercept),
                   r_squared=float(r_squared), residuals=residuals,
                   used_h=h[keep], excluded_h=h[~keep])


# ---------------------------------------------------------------------------
# Batched scheme engine
# ---------------------------------------------------------------------------

def _run_scheme_lanes(coeffs, d_w, d_z, x0_lanes, tau_cell, cfg, record_every=1):
    """March all lanes through the one-step map; record every record_every
    cells.  Lanes that trip the divergence guard turn NaN and stay dead."""
    n_lanes, n_cells, _ = d_w.shape
    n_rec = n_cells // record_every
    hist = np.empty((n_rec + 1, n_lanes, coeffs.dimension))
    hist[0] = x0_lanes
    x = np.array(x0_lanes, dtype=float)
    alive = np.ones(n_lanes, dtype=bool)
    for k in range(n_cells):
        idx = np.flatnonzero(alive)
        if idx.size:
            y, ok = _integrate_batch(coeffs, x[idx], tau_cell, d_w[idx, k],
                                     d_z[idx, k], cfg)
            x[idx] = y
            alive[idx[~ok]] = False
        if (k + 1) % record_every == 0:
            hist[(k + 1) // record_every] = x
    return hist, alive


def _tile_points(arr_per_path, n_points):
    return np.repeat(arr_per_path, n_points, axis=0)


def _stacked_cell_increments(paths, stride, n_points):
    d_w = np.stack([p.cell_increments(stride)[0] for p in paths])
    d_z = np.stack([p.cell_increments(stride)[1] for p in paths])
    if n_points > 1:
        d_w = _tile_points(d_w, n_points)
        d_z = _tile_points(d_z, n_points)
    return d_w, d_z


def _event_driven_history(coeffs, paths, x0_lanes, n_points, ref_stride, cfg):
    """Exact pathwise reference (b = 0) on the reference grid, batched over
    paths x initial points.  Jump-free cells advance in one flow call; cells
    containing jumps are split per event."""
    n_paths = len(paths)
    base = paths[0]
    n_cells = base.n_cells // ref_stride
    h_min = base.h_min
    delta = base.grid_time(ref_stride)
    comp_cell = ref_stride * base.comp_per_cell
    rate_eff = base.comp_per_cell / h_min
    m = base.dimension

    jumps_by_cell = [[] for _ in range(n_cells)]
    edges = base.grid_time(ref_stride * np.arange(n_cells + 1))
    for p_i, path in enumerate(paths):
        cells = np.searchsorted(edges, path.jump_times, side="left") - 1
        for cell, t, size in zip(cells, path.jump_times, path.jump_sizes):
            jumps_by_cell[int(cell)].append((p_i, t, size))

    n_lanes = n_paths * n_points
    hist = np.empty((n_cells + 1, n_lanes, coeffs.dimension))
    hist[0] = x0_lanes
    x = np.array(x0_lanes, dtype=float)
    alive = np.ones(n_lanes, dtype=bool)
    plain_z = np.tile(comp_cell, (n_lanes, 1))
    zeros_w = np.zeros((n_lanes, m))

    def advance(indices, state, span, jump=None):
        if jump is not None:
            z = np.tile(jump, (indices.size, 1))
            y, ok = _integrate_batch(coeffs, state, 0.0, zeros_w[:indices.size], z, cfg)
        elif span > 0.0:
            z = np.tile(span * rate_eff, (indices.size, 1))
            y, ok = _integrate_batch(coeffs, state, span, zeros_w[:indices.size], z, cfg)
        else:
            return state, np.ones(indices.size, dtype=bool)
        return y, ok

    for k in range(n_cells):
        events = jumps_by_cell[k]
        jumpy_paths = {p_i for p_i, _, _ in events}
        lane_is_jumpy = np.zeros(n_lanes, dtype=bool)
        for p_i in jumpy_paths:
            lane_is_jumpy[p_i * n_points:(p_i + 1) * n_points] = True
        idx = np.flatnonzero(alive & ~lane_is_jumpy)
        if idx.size:
            y, ok = _integrate_batch(coeffs, x[idx], delta, zeros_w[:idx.size],
                                     plain_z[:idx.size], cfg)
            x[idx] = y
            alive[idx[~ok]] = False
        for p_i in sorted(jumpy_paths):
            lanes = np.arange(p_i * n_points, (p_i + 1) * n_points)
            lanes = lanes[alive[lanes]]
            if not lanes.size:
                continue
            state = x[lanes]
            good = np.ones(lanes.size, dtype=bool)
            t_prev = edges[k]
            for q_i, t_jump, size in events:
                if q_i != p_i:
                    continue
                y, ok = advance(lanes, state, t_jump - t_prev)
                state, good = y, good & ok
                y, ok = advance(lanes, state, 0.0, jump=size)
                state, good = y, good & ok
                t_prev = t_jump
            y, ok = advance(lanes, state, edges[k + 1] - t_prev)
            state, good = y, good & ok
            x[lanes] = state
            alive[lanes[~good]] = False
        hist[k + 1] = x
    return hist, alive


def _closed_form_history(coeffs, paths, x0_lanes, ref_stride):
    params = coeffs.params or {}
    try:
        alpha, beta, gamma = params["alpha"], params["beta"], params["gamma"]
    except KeyError:
        raise ConfigError("reference: closed_form_linear needs scalar_linear "
                          "parameters alpha, beta, gamma") from None
    base = paths[0]
    n_cells = base.n_cells // ref_stride
    times = base.grid_time(ref_stride * np.arange(n_cells + 1))
    n_lanes = len(paths)
    hist = np.empty((n_cells + 1, n_lanes, 1))
    for p_i, path in enumerate(paths):
        w = path._brownian_prefix[::ref_stride, 0]
        pos = np.searchsorted(path.jump_times, times, side="right")
        z = path._jump_prefix[pos, 0] + ref_stride * np.arange(n_cells + 1) \
            * path.comp_per_cell[0]
        hist[:, p_i, 0] = x0_lanes[p_i, 0] * np.exp(alpha * times + beta * w + gamma * z)
    return hist, np.ones(n_lanes, dtype=bool)


def _reference_history(cfg, coeffs, paths, x0_lanes, n_points, ref_stride):
    kind = cfg.reference.kind
    if kind == "event_driven":
        return _event_driven_history(coeffs, paths, x0_lanes, n_points, ref_stride,
                                     cfg.reference_ode)
    if kind == "closed_form_linear":
        if n_points != 1:
            raise ConfigError("reference: closed_form_linear supports a single "
                              "initial point")
        return _closed_form_history(coeffs, paths, x0_lanes, ref_stride)
    d_w, d_z = _stacked_cell_increments(paths, 1, n_points)
    tau = paths[0].grid_time(1)
    return _run_scheme_lanes(coeffs, d_w, d_z, x0_lanes, tau, cfg.ode,
                             record_every=ref_stride)


def _lattice_points(dimension, radius, spacing):
    n_steps = int(math.floor(radius / spacing + 1e-9))
    axis = spacing * np.arange(-n_steps, n_steps + 1)
    if dimension == 1:
        return axis[:, None]
    grids = np.meshgrid(*([axis] * dimension), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    return points[np.linalg.norm(points, axis=1) <= radius + 1e-9]


def _floor_scale(cfg, coeffs, x0):
    """Upper estimate of the inner-integrator error per run, via step
    doubling on a probe path."""
    path = sample_path(cfg.model, cfg.horizon, cfg.level, cfg.master_seed, 0)
    worst = 0.0
    for stride, n_cells_e in zip(cfg.strides, cfg.h_exponents):
        n_cells = 2 ** n_cells_e
        tau = path.grid_time(stride)
        probe_cells = range(0, path.n_cells, max(1, path.n_cells // 8) * stride)
        for start in list(probe_cells)[:8]:
            if start + stride > path.n_cells:
                continue
            d_w, d_z = path.increments_by_index(start, start + stride)
            try:
                _, est = flow_error_estimate(coeffs, x0, tau, d_w, d_z, cfg.ode)
            except Exception:
                continue
            worst = max(worst, est * n_cells)
    return worst


def _estimate_with_ci(values, p):
    powered = values ** p
    mean_p = float(powered.mean())
    sd = float(powered.std(ddof=1)) if powered.size > 1 else 0.0
    ci_p = 1.96 * sd / math.sqrt(powered.size)
    if p == 1.0:
        return mean_p, ci_p
    estimate = mean_p ** (1.0 / p)
    if mean_p == 0.0:
        return 0.0, 0.0
    return estimate, ci_p * estimate / (p * mean_p)


def _run_blocks(n_paths, block_size, threads, worker):
    ranges = [(i, min(i + block_size, n_paths)) for i in range(0, n_paths, block_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda span: worker(*span), ranges))
    else:
        for span in ranges:
            worker(*span)


def _error_experiment(cfg, threads, x0_points, per_path_reduce,
                      keep_path_errors=False):
    """Shared driver for strong/uniform error: fills (n_h, M) sup-error and
    validity arrays block by block, then reduces sequentially."""
    coeffs = cfg.coefficients
    cfg.reference.validate(coeffs)
    n_points = x0_points.shape[0]
    strides = cfg.strides
    ref_stride = min(strides)
    n_h = len(strides)
    sup_err = np.full((n_h, cfg.n_paths), np.nan)
    valid = np.zeros((n_h, cfg.n_paths), dtype=bool)

    def worker(i0, i1):
        paths = [sample_path(cfg.model, cfg.horizon, cfg.level, cfg.master_seed, i)
                 for i in range(i0, i1)]
        n_blk = len(paths)
        x0_lanes = np.tile(x0_points, (n_blk, 1))
        ref_hist, ref_alive = _reference_history(cfg, coeffs, paths, x0_lanes,
                                                 n_points, ref_stride)
        for h_i, stride in enumerate(strides):
            d_w, d_z = _stacked_cell_increments(paths, stride, n_points)
            tau = paths[0].grid_time(stride)
            hist, alive = _run_scheme_lanes(coeffs, d_w, d_z, x0_lanes, tau, cfg.ode)
            ref_sub = ref_hist[::stride // ref_stride]
            diff = np.linalg.norm(hist - ref_sub, axis=-1)
            lane_sup = diff.max(axis=0)
            lane_ok = alive & ref_alive
            path_sup, path_ok = per_path_reduce(lane_sup, lane_ok, n_blk, n_points)
            sup_err[h_i, i0:i1] = path_sup
            valid[h_i, i0:i1] = path_ok

    _run_blocks(cfg.n_paths, cfg.block_size, threads, worker)

    divergence_counts = (~valid).sum(axis=1)
    worst_fraction = float(divergence_counts.max()) / cfg.n_paths
    if worst_fraction > 0.01:
        raise DivergenceAbortError(
            f"{worst_fraction:.1%} of paths hit the divergence guard (> 1% allowed)")

    estimates = np.empty(n_h)
    cis = np.empty(n_h)
    m_eff = np.empty(n_h, dtype=int)
    for h_i in range(n_h):
        vals = sup_err[h_i, valid[h_i]]
        estimates[h_i], cis[h_i] = _estimate_with_ci(vals, cfg.p)
        m_eff[h_i] = vals.size

    floor = _floor_scale(cfg, coeffs, x0_points[0])
    meta = {
        "reference": cfg.reference.kind,
        "metric_p": cfg.p,
        "floor_scale": floor,
        "scheme_exact": bool(np.all(estimates <= 100.0 * floor)),
        "divergence_counts": [int(c) for c in divergence_counts],
        "master_seed": cfg.master_seed,
    }
    if keep_path_errors:
        meta["path_sup_errors"] = sup_err
        meta["path_valid"] = valid
    return ErrorCurve(h=cfg.h_ladder, estimate=estimates, ci_half_width=cis,
                      m_effective=m_eff, meta=meta)


def strong_error(cfg, threads=1, keep_path_errors=False):
    """Pathwise worst-knot error E[ max_k |X_ref(kh) - X^h_kh| ] (or its L^p
    analog) per ladder step, with common random numbers across steps.

    ``keep_path_errors`` stashes the per-path sup errors in the curve meta
    for pathwise diagnostics (coupling monotonicity, quantiles)."""

    def reduce_single(lane_sup, lane_ok, n_blk, n_points):
        return lane_sup, lane_ok

    curve = _error_experiment(cfg, threads, cfg.x0[None, :], reduce_single,
                              keep_path_errors=keep_path_errors)
    if curve.meta["scheme_exact"]:
        warnings.warn("errors sit at the inner-integrator floor "
                      "(scheme-exact family); rate fits are meaningless here",
                      stacklevel=2)
    return curve


def uniform_error(cfg, threads=1):
    """Locally uniform error: per path the max over a lattice of initial
    points of the worst-knot error, averaged over paths.

    The lattice sup understates the ball sup by O(spacing) through the
    Lipschitz dependence on the initial point; the gap is recorded in
    meta rather than extrapolated away.
    """
    if cfg.lattice_spacing is None or cfg.ball_radius is None:
        raise ConfigError("uniform_error: ball_radius and lattice_spacing required")
    points = _lattice_points(cfg.coefficients.dimension, cfg.ball_radius,
                             cfg.lattice_spacing)

    def reduce_max(lane_sup, lane_ok, n_blk, n_points):
        by_path = lane_sup.reshape(n_blk, n_points)
        ok = lane_ok.reshape(n_blk, n_points).all(axis=1)
        return by_path.max(axis=1), ok

    meta_note = {
        "lattice_points": int(points.shape[0]),
        "lattice_spacing": cfg.lattice_spacing,
        "ball_radius": cfg.ball_radius,
        "note": "lattice max understates the ball sup from below by "
                "O(spacing) via the Lipschitz-in-x bound",
        "target_rate": (1.0 - cfg.rate_epsilon) / (4.0 * cfg.coefficients.dimension),
    }
    try:
        constants = estimate_constants(cfg.coefficients,
                                       probe_radius=max(2.0 * cfg.ball_radius, 8.0),
                                       margin=cfg.moment_margin)
        required = 2.0 * cfg.coefficients.dimension * constants.big_k
        exp_moment_check(cfg.model, required)
        meta_note["exp_moment_at_2dK"] = "finite"
    except ArithmeticError:
        warnings.warn("exponential moment at 2dK diverges; uniform-rate "
                      "guarantees may not apply, proceeding anyway", stacklevel=2)
        meta_note["exp_moment_at_2dK"] = "divergent"

    curve = _error_experiment(cfg, threads, points, reduce_max)
    curve.meta.update(meta_note)
    return curve


OBSERVABLES = {
    "constant": lambda x: np.ones(x.shape[:-1]),
    "identity": lambda x: x[..., 0],
    "square": lambda x: x[..., 0] ** 2,
    "norm_square": lambda x: np.sum(x * x, axis=-1),
    "cosine": lambda x: np.cos(x[..., 0]),
}


def weak_error(cfg, observable="square", threads=1):
    """|E f(X^h_T) - E f(X_ref,T)| per ladder step, estimated from paired
    per-path differences (coupling keeps the variance down)."""
    try:
        func = OBSERVABLES[observable]
    except KeyError:
        known = ", ".join(sorted(OBSERVABLES))
        raise ConfigError(f"observable: unknown {observable!r} (have: {known})") \
            from None
    coeffs = cfg.coefficients
    cfg.reference.validate(coeffs)
    strides = cfg.strides
    ref_stride = min(strides)
    n_h = len(strides)
    diffs = np.full((n_h, cfg.n_paths), np.nan)
    valid = np.zeros((n_h, cfg.n_paths), dtype=bool)

    def worker(i0, i1):
        paths = [sample_path(cfg.model, cfg.horizon, cfg.level, cfg.master_seed, i)
                 for i in range(i0, i1)]
        x0_lanes = np.tile(cfg.x0[None, :], (len(paths), 1))
        ref_hist, ref_alive = _reference_history(cfg, coeffs, paths, x0_lanes, 1,
                                                 ref_stride)
        f_ref = func(ref_hist[-1])
        for h_i, stride in enumerate(strides):
            d_w, d_z = _stacked_cell_increments(paths, stride, 1)
            tau = paths[0].grid_time(stride)
            hist, alive = _run_scheme_lanes(coeffs, d_w, d_z, x0_lanes, tau,
                                            cfg.ode)
            diffs[h_i, i0:i1] = func(hist[-1]) - f_ref
            valid[h_i, i0:i1] = alive & ref_alive

    _run_blocks(cfg.n_paths, cfg.block_size, threads, worker)

    estimates = np.empty(n_h)
    cis = np.empty(n_h)
    m_eff = np.empty(n_h, dtype=int)
    for h_i in range(n_h):
        vals = diffs[h_i, valid[h_i]]
        estimates[h_i] = abs(float(vals.mean()))
        cis[h_i] = 1.96 * float(vals.std(ddof=1)) / math.sqrt(vals.size)
        m_eff[h_i] = vals.size
    noisy = [float(h) for h, e, c in zip(cfg.h_ladder, estimates, cis) if c >= e]
    meta = {"observable": observable, "reference": cfg.reference.kind,
            "noise_dominated_h": noisy, "master_seed": cfg.master_seed}
    if noisy:
        warnings.warn(f"weak-error CI exceeds the estimate at h={noisy}; "
                      "increase the path count", stacklevel=2)
    return ErrorCurve(h=cfg.h_ladder, estimate=estimates, ci_half_width=cis,
                      m_effective=m_eff, meta=meta)


# ---------------------------------------------------------------------------
# Moment-scaling studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingStudy:
    """Regression of a Monte Carlo statistic against a scale variable."""

    scale: np.ndarray
    estimate: np.ndarray
    slope: float
    intercept: float
    r_squared: float


def _affine_fit(u, y):
    slope, intercept = np.polyfit(u, y, 1)
    predicted = intercept + slope * u
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    return float(slope), float(intercept), 1.0 - ss_res / ss_tot if ss_tot else 1.0


def _history_sup_study(coeffs, model, horizon, level, h_exponent, n_paths,
                       x0_points, master_seed, ode, stat):
    stride = 2 ** (level - h_exponent)
    n_points = x0_points.shape[0]
    out = np.full((n_paths, stat["width"]), np.nan)
    ok = np.zeros(n_paths, dtype=bool)
    for i0 in range(0, n_paths, BLOCK_SIZE):
        i1 = min(i0 + BLOCK_SIZE, n_paths)
        paths = [sample_path(model, horizon, level, master_seed, i)
                 for i in range(i0, i1)]
        x0_lanes = np.tile(x0_points, (len(paths), 1))
        d_w, d_z = _stacked_cell_increments(paths, stride, n_points)
        tau = paths[0].grid_time(stride)
        hist, alive = _run_scheme_lanes(coeffs, d_w, d_z, x0_lanes, tau, ode)
        out[i0:i1] = stat["reduce"](hist, len(paths), n_points)
        ok[i0:i1] = alive.reshape(len(paths), n_points).all(axis=1)
    return out[ok], int(ok.sum())


def moment_scaling_study(coeffs, model, horizon, level, h_exponent, n_paths,
                         x_norms, master_seed=0, ode=DEFAULT_CONFIG):
    """E sup_k |X^h(x)|^2 for several |x|, regressed affinely on 1 + |x|^2."""
    x_norms = np.asarray(x_norms, dtype=float)
    points = np.zeros((x_norms.size, coeffs.dimension))
    points[:, 0] = x_norms

    def reduce(hist, n_blk, n_points):
        sup = np.linalg.norm(hist, axis=-1).max(axis=0)
        return (sup ** 2).reshape(n_blk, n_points)

    stat = {"width": x_norms.size, "reduce": reduce}
    rows, _ = _history_sup_study(coeffs, model, horizon, level, h_exponent,
                                 n_paths, points, master_seed, ode, stat)
    estimates = rows.mean(axis=0)
    slope, intercept, r2 = _affine_fit(1.0 + x_norms ** 2, estimates)
    return ScalingStudy(scale=x_norms, estimate=estimates, slope=slope,
                        intercept=intercept, r_squared=r2)


def lipschitz_scaling_study(coeffs, model, horizon, level, h_exponent, n_paths,
                            x0, separations, master_seed=0, ode=DEFAULT_CONFIG):
    """E sup_k |X^h(x) - X^h(x + delta e1)| across dyadic separations;
    the slope of the log-log fit measures the Lipschitz scaling in x."""
    separations = np.asarray(separations, dtype=float)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    points = np.tile(x0, (separations.size + 1, 1))
    points[1:, 0] += separations

    def reduce(hist, n_blk, n_points):
        by_point = hist.reshape(hist.shape[0], n_blk, n_points, -1)
        gap = by_point[:, :, 1:, :] - by_point[:, :, :1, :]
        return np.linalg.norm(gap, axis=-1).max(axis=0)

    stat = {"width": separations.size, "reduce": reduce}
    rows, _ = _history_sup_study(coeffs, model, horizon, level, h_exponent,
                                 n_paths, points, master_seed, ode, stat)
    estimates = rows.mean(axis=0)
    slope, intercept, r2 = _affine_fit(np.log(separations), np.log(estimates))
    return ScalingStudy(scale=separations, estimate=estimates, slope=slope,
                        intercept=intercept, r_squared=r2)
