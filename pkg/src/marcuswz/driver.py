"""Driving noise for Marcus SDEs: Brownian motion plus a compensated
compound Poisson process, sampled once on a finest dyadic grid.

A path is always sampled at resolution ``h_min = T / 2**level`` and then
aggregated exactly to any coarser step.  To make aggregation associative in
floating point, Brownian increments and jump sizes are rounded onto the
dyadic lattice ``2**-32`` and the per-cell compensator contribution onto
``2**-40``.  Every quantity that enters an increment is then an integer
multiple of ``2**-40`` with magnitude far below ``2**13``, so all sums and
differences of stored values are computed exactly: coarse increments equal
the sum of their fine parts bit for bit, regardless of summation order or
batch layout.  The rounding perturbs each sample by at most ``2**-33``,
orders of magnitude below both the scheme error and Monte Carlo resolution.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, MomentDivergenceError

INCREMENT_QUANTUM = 2.0 ** -32
COMPENSATOR_QUANTUM = 2.0 ** -40
# Partial sums stay exact only while they fit in 53 mantissa bits on the
# 2**-40 lattice; 2**12 leaves a safety factor of two.
_EXACT_RANGE = 2.0 ** 12

_TAG_JUMPS = 0x4A
_TAG_BROWNIAN = 0x57
_TAG_MOMENT = 0x4D

MAX_LEVEL = 30


def _quantize(values, quantum):
    return np.round(np.asarray(values, dtype=float) / quantum) * quantum


def _rng_for(master_seed, path_index, tag):
    seq = np.random.SeedSequence((int(master_seed), int(path_index), tag))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class JumpDistribution:
    """Law of a single jump in R^m with analytic moment evaluators.

    Use the classmethod constructors; they compute ``first_moment`` (the
    mean vector) and ``second_moment`` (E|J|^2) in closed form and validate
    the parameters.
    """

    kind: str
    dimension: int
    first_moment: np.ndarray
    second_moment: float
    atoms: np.ndarray | None = None
    probabilities: np.ndarray | None = None
    halfwidth: float = 0.0
    inner: float = 0.0
    outer: float = 0.0
    rate: float = 0.0
    cut: float | None = None

    @classmethod
    def discrete(cls, atoms, probabilities):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        probs = np.asarray(probabilities, dtype=float)
        if atoms.shape[0] != probs.shape[0]:
            raise ConfigError("jump_law: atoms and probabilities lengths differ")
        if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError("jump_law.probabilities: must be nonnegative and sum to 1")
        first = probs @ atoms
        second = float(probs @ np.sum(atoms * atoms, axis=1))
        return cls(kind="discrete", dimension=atoms.shape[1], first_moment=first,
                   second_moment=second, atoms=atoms, probabilities=probs)

    @classmethod
    def uniform_box(cls, halfwidth, dimension=1):
        if halfwidth <= 0.0:
            raise ConfigError("jump_law.halfwidth: must be positive")
        if dimension > 3:
            raise ConfigError("jump_law: uniform_box supports dimension <= 3")
        second = dimension * halfwidth ** 2 / 3.0
        return cls(kind="uniform_box", dimension=dimension,
                   first_moment=np.zeros(dimension), second_moment=second,
                   halfwidth=float(halfwidth))

    @classmethod
    def uniform_annulus(cls, inner, outer, dimension=1):
        if not 0.0 <= inner < outer:
            raise ConfigError("jump_law: need 0 <= inner < outer")
        second = (inner ** 2 + inner * outer + outer ** 2) / 3.0
        return cls(kind="uniform_annulus", dimension=dimension,
                   first_moment=np.zeros(dimension), second_moment=second,
                   inner=float(inner), outer=float(outer))

    @classmethod
    def two_sided_exponential(cls, rate, cut=None):
        """Symmetric exponential magnitude with optional truncation radius."""
        if rate <= 0.0:
            raise ConfigError("jump_law.rate: must be positive")
        if cut is None:
            second = 2.0 / rate ** 2
        else:
            if cut <= 0.0:
                raise ConfigError("jump_law.cut: must be positive")
            mass = 1.0 - math.exp(-rate * cut)
            second = (2.0 / rate ** 2
                      - math.exp(-rate * cut) * (cut ** 2 + 2.0 * cut / rate + 2.0 / rate ** 2)) / mass
        return cls(kind="two_sided_exponential", dimension=1,
                   first_moment=np.zeros(1), second_moment=second,
                   rate=float(rate), cut=None if cut is None else float(cut))

    @property
    def bounded_support(self):
        if self.kind == "discrete":
            return True
        if self.kind in ("uniform_box", "uniform_annulus"):
            return True
        return self.cut is not None

    def exp_moment(self, a):
        """E exp(a |J|), exact or by deterministic quadrature.

        Raises MomentDivergenceError when the law has unbounded support and
        ``a`` is at or beyond its critical exponent.
        """
        a = float(a)
        if a < 0.0:
            raise ConfigError("exp_moment: exponent must be nonnegative")
        if a == 0.0:
            return 1.0
        if self.kind == "discrete":
            return float(self.probabilities @ np.exp(a * np.linalg.norm(self.atoms, axis=1)))
        if self.kind == "uniform_box":
            return self._box_exp_moment(a)
        if self.kind == "uniform_annulus":
            lo, hi = self.inner, self.outer
            return (math.exp(a * hi) - math.exp(a * lo)) / (a * (hi - lo))
        # two-sided exponential
        theta, cut = self.rate, self.cut
        if cut is None:
            if a >= theta:
                raise MomentDivergenceError(
                    f"exp moment diverges: exponent {a} >= critical rate {theta}",
                    condition="exponential tail")
            return theta / (theta - a)
        mass = 1.0 - math.exp(-theta * cut)
        if a == theta:
            return theta * cut / mass
        return theta / (theta - a) * (1.0 - math.exp(-(theta - a) * cut)) / mass

    def _box_exp_moment(self, a):
        nodes, weights = np.polynomial.legendre.leggauss(64)
        r = self.halfwidth
        axes = [0.5 * r * (nodes + 1.0)] * self.dimension  # exploit symmetry: restrict to positive orthant
        grids = np.meshgrid(*axes, indexing="ij")
        norm = np.sqrt(sum(g * g for g in grids))
        w = weights * 0.5  # maps U[-r,r] component to U[0,r] by symmetry of |J|
        wgrid = np.ones_like(norm)
        for axis_index in range(self.dimension):
            shape = [1] * self.dimension
            shape[axis_index] = -1
            wgrid = wgrid * (2.0 * w).reshape(shape)
        return float(np.sum(wgrid * np.exp(a * norm)))

    def sample(self, rng, n):
        """Draw n jumps, shape (n, dimension)."""
        m = self.dimension
        if n == 0:
            return np.zeros((0, m))
        if self.kind == "discrete":
            idx = rng.choice(self.atoms.shape[0], size=n, p=self.probabilities)
            return self.atoms[idx]
        if self.kind == "uniform_box":
            return rng.uniform(-self.halfwidth, self.halfwidth, size=(n, m))
        if self.kind == "uniform_annulus":
            radius = rng.uniform(self.inner, self.outer, size=n)
            if m == 1:
                signs = rng.integers(0, 2, size=n) * 2 - 1
                return (radius * signs)[:, None]
            direction = rng.normal(size=(n, m))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            return radius[:, None] * direction
        # two-sided exponential
        signs = rng.integers(0, 2, size=n) * 2 - 1
        u = rng.random(n)
        if self.cut is None:
            magnitude = -np.log1p(-u) / self.rate
        else:
            mass = 1.0 - math.exp(-self.rate * self.cut)
            magnitude = -np.log1p(-u * mass) / self.rate
        return (signs * magnitude)[:, None]


@dataclass(frozen=True)
class LevyModel:
    """Finite-activity Levy driver: jump intensity times a jump law."""

    intensity: float
    jump_dist: JumpDistribution

    def __post_init__(self):
        if self.intensity < 0.0:
            raise ConfigError("model.lambda: intensity must be nonnegative")
        if not np.isfinite(self.second_moment_integral):
            raise ConfigError("model: jump law must be square integrable")

    @property
    def dimension(self):
        return self.jump_dist.dimension

    @property
    def compensator_rate(self):
        """Drift -lambda * E[J] that centers the jump part, per unit time."""
        return -self.intensity * self.jump_dist.first_moment

    @property
    def second_moment_integral(self):
        """integral |z|^2 nu(dz) = lambda * E|J|^2."""
        return self.intensity * self.jump_dist.second_moment


def exp_moment_check(model, a):
    """integral exp(a|z|) nu(dz) = lambda * E exp(a|J|).

    Finite for every a when the jump support is bounded; raises
    MomentDivergenceError past the critical exponent of an unbounded law.
    """
    return model.intensity * model.jump_dist.exp_moment(a)


@dataclass(frozen=True)
class DrivingPath:
    """One realization of (W, Z) on the finest grid, shared by every step size.

    ``brownian_increments`` holds the 2**level fine Brownian increments,
    ``jump_times``/``jump_sizes`` the explicit jump events, and
    ``comp_per_cell`` the exact lattice value of the compensator drift
    accumulated over one finest cell.  ``compensator_rate`` records the
    nominal rate -lambda*E[J]; increment arithmetic always goes through
    ``comp_per_cell`` so that aggregation is exact.
    """

    horizon: float
    level: int
    brownian_increments: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    compensator_rate: np.ndarray
    comp_per_cell: np.ndarray
    master_seed: int = 0
    path_index: int = 0
    _brownian_prefix: np.ndarray = field(init=False, repr=False, compare=False)
    _jump_prefix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n, m = self.brownian_increments.shape
        if n != 2 ** self.level:
            raise ConfigError("path: brownian_increments must have 2**level rows")
        if self.jump_times.shape[0] != self.jump_sizes.shape[0]:
            raise ConfigError("path: jump_times and jump_sizes lengths differ")
        if self.jump_times.size:
            if np.any(np.diff(self.jump_times) <= 0.0):
                raise ConfigError("path: jump times must be strictly increasing")
            if self.jump_times[0] <= 0.0 or self.jump_times[-1] > self.horizon:
                raise ConfigError("path: jump times must lie in (0, T]")
        bprefix = np.zeros((n + 1, m))
        np.cumsum(self.brownian_increments, axis=0, out=bprefix[1:])
        jprefix = np.zeros((self.jump_sizes.shape[0] + 1, m))
        np.cumsum(self.jump_sizes, axis=0, out=jprefix[1:])
        total_comp = abs(2 ** self.level * self.comp_per_cell).max() if m else 0.0
        if max(np.abs(bprefix).max(), np.abs(jprefix).max(), total_comp) >= _EXACT_RANGE:
            raise ConfigError("path: increment magnitudes exceed the exact-aggregation range")
        for arr in (self.brownian_increments, self.jump_times, self.jump_sizes,
                    self.compensator_rate, self.comp_per_cell, bprefix, jprefix):
            arr.setflags(write=False)
        object.__setattr__(self, "_brownian_prefix", bprefix)
        object.__setattr__(self, "_jump_prefix", jprefix)

    @property
    def h_min(self):
        return self.horizon / 2 ** self.level

    @property
    def n_cells(self):
        return 2 ** self.level

    @property
    def dimension(self):
        return self.brownian_increments.shape[1]

    def grid_index(self, t):
        """Index of a finest-grid time; rejects off-grid times."""
        ratio = t / self.h_min
        idx = int(round(ratio))
        if idx < 0 or idx > self.n_cells or abs(ratio - idx) > 1e-9 * max(1.0, abs(ratio)):
            raise ConfigError(f"time {t!r} is not on the finest grid")
        return idx

    def grid_time(self, idx):
        return idx * self.h_min

    def increments(self, s, t):
        """Exact increments (dW, dZ) over the window (s, t].

        Both endpoints must lie on the finest grid.  Aggregation is exact:
        increments over adjacent windows sum bit for bit to the increment
        over their union.
        """
        i, j = self.grid_index(s), self.grid_index(t)
        if i > j:
            raise ConfigError("increments: need s <= t")
        return self.increments_by_index(i, j)

    def increments_by_index(self, i, j):
        d_w = self._brownian_prefix[j] - self._brownian_prefix[i]
        k1 = np.searchsorted(self.jump_times, self.grid_time(i), side="right")
        k2 = np.searchsorted(self.jump_times, self.grid_time(j), side="right")
        d_z = (self._jump_prefix[k2] - self._jump_prefix[k1]) + (j - i) * self.comp_per_cell
        return d_w, d_z

    def cell_increments(self, stride):
        """Increments of every scheme cell at step stride*h_min in one shot.

        Returns (dW, dZ) of shape (n_cells, m).  Row k equals
        increments_by_index(k*stride, (k+1)*stride) bit for bit: the lattice
        representation makes the vectorized aggregation exact.
        """
        n_cells = self.n_cells // stride
        usable = n_cells * stride
        m = self.dimension
        d_w = self.brownian_increments[:usable].reshape(n_cells, stride, m).sum(axis=1)
        edges = self.grid_time(stride * np.arange(n_cells + 1))
        pos = np.searchsorted(self.jump_times, edges, side="right")
        d_z = (self._jump_prefix[pos[1:]] - self._jump_prefix[pos[:-1]]
               + stride * self.comp_per_cell)
        return d_w, d_z

    def brownian_value(self, t):
        """W_t at a finest-grid time."""
        return self._brownian_prefix[self.grid_index(t)]

    def levy_value(self, t):
        """Z_t at a finest-grid time (jump sum plus compensator drift)."""
        idx = self.grid_index(t)
        k = np.searchsorted(self.jump_times, self.grid_time(idx), side="right")
        return self._jump_prefix[k] + idx * self.comp_per_cell

    def with_jump_size(self, event_index, new_size):
        """Copy of the path with one jump size replaced (lattice-rounded)."""
        sizes = self.jump_sizes.copy()
        sizes[event_index] = _quantize(new_size, INCREMENT_QUANTUM)
        return replace(self, jump_sizes=sizes)


def sample_path(model, horizon, level, master_seed, path_index):
    """Sample one driving path of (W, Z) at resolution T / 2**level.

    Fully determined by (master_seed, path_index): the jump stream and the
    Brownian stream are independent counter-based generators, so the result
    does not depend on evaluation order or thread schedule.
    """
    if horizon <= 0.0:
        raise ConfigError("experiment.T: horizon must be positive")
    if level < 0 or level > MAX_LEVEL:
        raise ConfigError(f"experiment.level: must be in [0, {MAX_LEVEL}]")
    lam = model.intensity
    m = model.dimension
    n_cells = 2 ** level
    h_min = horizon / n_cells

    rng_j = _rng_for(master_seed, path_index, _TAG_JUMPS)
    n_jumps = int(rng_j.poisson(lam * horizon)) if lam > 0.0 else 0
    times = np.sort(horizon - horizon * rng_j.random(n_jumps))
    sizes = _quantize(model.jump_dist.sample(rng_j, n_jumps), INCREMENT_QUANTUM)

    rng_w = _rng_for(master_seed, path_index, _TAG_BROWNIAN)
    increments = _quantize(rng_w.normal(0.0, math.sqrt(h_min), size=(n_cells, m)),
                           INCREMENT_QUANTUM)

    comp_per_cell = _quantize(model.compensator_rate * h_min, COMPENSATOR_QUANTUM)
    return DrivingPath(horizon=horizon, level=level,
                       brownian_increments=increments,
                       jump_times=times, jump_sizes=sizes,
                       compensator_rate=np.array(model.compensator_rate, dtype=float),
                       comp_per_cell=comp_per_cell,
                       master_seed=master_seed, path_index=path_index)


def increments(path, s, t):
    """Functional form of DrivingPath.increments."""
    return path.increments(s, t)


@dataclass(frozen=True)
class MomentRatio:
    h: float
    ratio: float
    ci_half_width: float


def moment_lemma_check(model, p, kappa1, kappa2, big_k, h_grid, n_samples,
                       master_seed=0):
    """Monte Carlo check that E (s+|W_s|+|Z_s|)^p exp(p k1 s + p k2 |W_s| + p K |Z_s|)
    at s=h stays O(h): returns (h, estimate/h, ci/h) rows across the grid.

    Requires the exponential moment at p*K to be finite; the divergence
    error from that check propagates.
    """
    exp_moment_check(model, p * big_k)
    m = model.dimension
    lam = model.intensity
    rows = []
    for index, h in enumerate(h_grid):
        rng = _rng_for(master_seed, index, _TAG_MOMENT)
        w = rng.normal(0.0, math.sqrt(h), size=(n_samples, m))
        jump_sum = np.zeros((n_samples, m))
        if lam > 0.0:
            counts = rng.poisson(lam * h, size=n_samples)
            total = int(counts.sum())
            if total:
                sizes = model.jump_dist.sample(rng, total)
                offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
                nonempty = counts > 0
                jump_sum[nonempty] = np.add.reduceat(sizes, offsets[nonempty], axis=0)
        z = jump_sum + h * model.compensator_rate
        wn = np.linalg.norm(w, axis=1)
        zn = np.linalg.norm(z, axis=1)
        values = (h + wn + zn) ** p * np.exp(p * (kappa1 * h + kappa2 * wn + big_k * zn))
        est = float(values.mean())
        ci = 1.96 * float(values.std(ddof=1)) / math.sqrt(n_samples)
        rows.append(MomentRatio(h=float(h), ratio=est / h, ci_half_width=ci / h))
    return rows
