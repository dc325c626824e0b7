"""Built-in coefficient families, selected by name and parameters.

Experiments only ever run coefficients from this registry (or sets
composed in code), so a run is reproducible from its config file alone and
never executes user-supplied source.  Each family ships analytic Jacobians
and exact sup-norm bounds for the derivatives, which feed the integrator's
substep rule and the growth-constant checks.
"""

import dataclasses

import numpy as np

from .errors import ConfigError
from .flows import CoefficientSet


def _const_jac(value_shape, value):
    def jac(x):
        return np.broadcast_to(value, x.shape[:-1] + value_shape).copy()
    return jac


def _tag(coeff_set, **params):
    return dataclasses.replace(coeff_set, params=params)


def zero(dimension=1, noise_dim=1):
    """No dynamics at all: a = b = c = 0."""
    return _tag(CoefficientSet(dimension=dimension, noise_dim=noise_dim, name="zero",
                               derivative_norm_bounds=(0.0, 0.0, 0.0)),
                dimension=dimension, noise_dim=noise_dim)


def additive(matrix):
    """Constant jump coefficient c(x) = C: the jump flow is x + C z exactly."""
    c_matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    d, m = c_matrix.shape

    def c(x):
        return np.broadcast_to(c_matrix, x.shape[:-1] + (d, m)).copy()

    return _tag(CoefficientSet(dimension=d, noise_dim=m, name="additive", c=c,
                               dc=_const_jac((d, m, d), 0.0),
                               derivative_norm_bounds=(0.0, 0.0, 0.0)),
                matrix=c_matrix.tolist())


def scalar_linear(alpha=0.5, beta=0.3, gamma=0.4):
    """dX = alpha X dt + beta X (Stratonovich) dW + gamma X (Marcus) dZ.

    Solved exactly by X_t = x exp(alpha t + beta W_t + gamma Z_t); the
    one-step map is the exact exponential of the lumped cell increments, so
    the scheme reproduces the solution at knots up to integrator error.
    The coefficients are unbounded but the explicit exponential form gives
    the one-step growth bounds directly.
    """
    a = (lambda x: alpha * x) if alpha != 0.0 else None
    b = (lambda x: (beta * x)[..., None]) if beta != 0.0 else None
    c = (lambda x: (gamma * x)[..., None]) if gamma != 0.0 else None
    return _tag(CoefficientSet(
        dimension=1, noise_dim=1, name="scalar_linear",
        a=a, b=b, c=c,
        da=_const_jac((1, 1), alpha) if a else None,
        db=_const_jac((1, 1, 1), beta) if b else None,
        dc=_const_jac((1, 1, 1), gamma) if c else None,
        derivative_norm_bounds=(abs(alpha) if a else 0.0,
                                abs(beta) if b else 0.0,
                                abs(gamma) if c else 0.0)),
        alpha=alpha, beta=beta, gamma=gamma)


def rotation(theta=1.0):
    """Planar rotation generator c(x) = theta J x (skew-symmetric).

    The jump flow rotates by angle theta*z and preserves the norm.
    """
    gen = theta * np.array([[0.0, -1.0], [1.0, 0.0]])

    def c(x):
        return (x @ gen.T)[..., None]

    def dc(x):
        return np.broadcast_to(gen[:, None, :], x.shape[:-1] + (2, 1, 2)).copy()

    return _tag(CoefficientSet(dimension=2, noise_dim=1, name="rotation", c=c, dc=dc,
                               derivative_norm_bounds=(0.0, 0.0, abs(theta))),
                theta=theta)


def bounded_smooth(alpha=1.0, beta=0.0, gamma=0.8):
    """Smooth bounded benchmark on the line:
    a = alpha sin x, b = beta cos x, c = gamma cos x."""
    a = (lambda x: alpha * np.sin(x)) if alpha != 0.0 else None
    b = (lambda x: (beta * np.cos(x))[..., None]) if beta != 0.0 else None
    c = (lambda x: (gamma * np.cos(x))[..., None]) if gamma != 0.0 else None
    return _tag(CoefficientSet(
        dimension=1, noise_dim=1, name="bounded_smooth",
        a=a, b=b, c=c,
        da=(lambda x: (alpha * np.cos(x))[..., None]) if a else None,
        db=(lambda x: (-beta * np.sin(x))[..., None, None]) if b else None,
        dc=(lambda x: (-gamma * np.sin(x))[..., None, None]) if c else None,
        derivative_norm_bounds=(abs(alpha), abs(beta), abs(gamma))),
        alpha=alpha, beta=beta, gamma=gamma)


def bounded_smooth_two_noise(alpha=1.0, beta1=0.8, beta2=0.8,
                             gamma1=0.4, gamma2=0.4):
    """Bounded benchmark driven by two noise components:
    a = alpha sin x, b = [beta1 cos x, beta2 sin x], c = [gamma1 cos x, gamma2 sin x].

    The two diffusion fields do not commute (their bracket is the constant
    beta1*beta2), so the one-step scheme misses the Levy area and exhibits
    the generic square-root strong rate.
    """

    def a(x):
        return alpha * np.sin(x)

    def da(x):
        return (alpha * np.cos(x))[..., None]

    def _pair(c1, c2):
        def mat(x):
            u = x[..., 0]
            return np.stack([c1 * np.cos(u), c2 * np.sin(u)], axis=-1)[..., None, :]
        return mat

    def _pair_jac(c1, c2):
        def jac(x):
            u = x[..., 0]
            return np.stack([-c1 * np.sin(u), c2 * np.cos(u)],
                            axis=-1)[..., None, :, None]
        return jac

    return _tag(CoefficientSet(
        dimension=1, noise_dim=2, name="bounded_smooth_two_noise",
        a=a if alpha != 0.0 else None,
        b=_pair(beta1, beta2) if (beta1, beta2) != (0.0, 0.0) else None,
        c=_pair(gamma1, gamma2) if (gamma1, gamma2) != (0.0, 0.0) else None,
        da=da if alpha != 0.0 else None,
        db=_pair_jac(beta1, beta2) if (beta1, beta2) != (0.0, 0.0) else None,
        dc=_pair_jac(gamma1, gamma2) if (gamma1, gamma2) != (0.0, 0.0) else None,
        derivative_norm_bounds=(abs(alpha),
                                max(abs(beta1), abs(beta2)),
                                max(abs(gamma1), abs(gamma2)))),
        alpha=alpha, beta1=beta1, beta2=beta2, gamma1=gamma1, gamma2=gamma2)


def linear_sine(drift_slope=0.4, alpha=0.5, gamma=0.5):
    """Linear-growth drift with a smooth wiggle and bounded jump coefficient:
    a = drift_slope x + alpha sin x, c = gamma cos x.

    States (and hence errors) grow proportionally to the initial condition,
    which makes the affine error-versus-|x0| scaling visible.
    """

    def a(x):
        return drift_slope * x + alpha * np.sin(x)

    def da(x):
        return (drift_slope + alpha * np.cos(x))[..., None]

    return _tag(CoefficientSet(
        dimension=1, noise_dim=1, name="linear_sine",
        a=a, da=da,
        c=lambda x: (gamma * np.cos(x))[..., None],
        dc=lambda x: (-gamma * np.sin(x))[..., None, None],
        derivative_norm_bounds=(abs(drift_slope) + abs(alpha), 0.0, abs(gamma))),
        drift_slope=drift_slope, alpha=alpha, gamma=gamma)


FAMILIES = {
    "zero": zero,
    "additive": additive,
    "scalar_linear": scalar_linear,
    "rotation": rotation,
    "bounded_smooth": bounded_smooth,
    "bounded_smooth_two_noise": bounded_smooth_two_noise,
    "linear_sine": linear_sine,
}


def get_coefficients(name, **params):
    """Build a registry coefficient set by name."""
    try:
        builder = FAMILIES[name]
    except KeyError:
        known = ", ".join(sorted(FAMILIES))
        raise ConfigError(f"coefficients.name: unknown family {name!r} (have: {known})") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ConfigError(f"coefficients.params: {exc}") from None
