"""Config-file handling for the command-line runs.

A run is described by a YAML document with sections ``model``,
``coefficients``, ``experiment`` and optional ``ode``/``reference_ode``.
Validation errors carry the offending field path.  The fully resolved
document (defaults filled in) is echoed into every run manifest and
re-parses to an equivalent run.
"""

import yaml

import numpy as np

from .coefficients import get_coefficients
from .driver import JumpDistribution, LevyModel
from .errors import ConfigError
from .experiments import ExperimentConfig
from .flows import DEFAULT_CONFIG, REFERENCE_CONFIG, OdeConfig
from .scheme import ReferenceKind


def _require(section, key, path):
    if key not in section:
        raise ConfigError(f"{path}.{key}: missing required field")
    return section[key]


def build_jump_distribution(section):
    kind = _require(section, "kind", "model.jump_law")
    extras = {k: v for k, v in section.items() if k != "kind"}
    try:
        if kind == "discrete":
            return JumpDistribution.discrete(
                _require(section, "atoms", "model.jump_law"),
                _require(section, "probabilities", "model.jump_law"))
        if kind == "uniform_box":
            return JumpDistribution.uniform_box(
                _require(section, "halfwidth", "model.jump_law"),
                dimension=int(section.get("dimension", 1)))
        if kind == "uniform_annulus":
            return JumpDistribution.uniform_annulus(
                _require(section, "inner", "model.jump_law"),
                _require(section, "outer", "model.jump_law"),
                dimension=int(section.get("dimension", 1)))
        if kind == "two_sided_exponential":
            return JumpDistribution.two_sided_exponential(
                _require(section, "rate", "model.jump_law"),
                cut=section.get("cut"))
    except TypeError as exc:
        raise ConfigError(f"model.jump_law: bad parameters {extras}: {exc}") from None
    raise ConfigError(f"model.jump_law.kind: unknown kind {kind!r}")


def build_model(section):
    if not isinstance(section, dict):
        raise ConfigError("model: must be a mapping")
    dist = build_jump_distribution(_require(section, "jump_law", "model"))
    lam = float(_require(section, "lambda", "model"))
    model = LevyModel(intensity=lam, jump_dist=dist)
    declared = section.get("dimension")
    if declared is not None and int(declared) != model.dimension:
        raise ConfigError(f"model.dimension: {declared} does not match the jump "
                          f"law dimension {model.dimension}")
    return model


def build_coefficients(section):
    if not isinstance(section, dict):
        raise ConfigError("coefficients: must be a mapping")
    name = _require(section, "name", "coefficients")
    params = section.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("coefficients.params: must be a mapping")
    return get_coefficients(name, **params)


def build_ode(section, default):
    if section is None:
        return default
    if not isinstance(section, dict):
        raise ConfigError("ode: must be a mapping")
    allowed = {"n_min", "rho", "divergence_threshold", "richardson"}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"ode: unknown fields {sorted(unknown)}")
    return OdeConfig(n_min=int(section.get("n_min", default.n_min)),
                     rho=float(section.get("rho", default.rho)),
                     divergence_threshold=float(section.get(
                         "divergence_threshold", default.divergence_threshold)),
                     richardson=bool(section.get("richardson", default.richardson)))


def _reference_from_name(name, h_min):
    if name == "closed_form":
        name = "closed_form_linear"
    if name == "self_refined":
        return ReferenceKind.self_refined(h_min)
    return ReferenceKind(name)


def build_experiment(document, seed_override=None):
    """Assemble an ExperimentConfig from a parsed config document."""
    if not isinstance(document, dict):
        raise ConfigError("config: top level must be a mapping")
    model = build_model(_require(document, "model", "config"))
    coeffs = build_coefficients(_require(document, "coefficients", "config"))
    ode = build_ode(document.get("ode"), DEFAULT_CONFIG)
    reference_ode = build_ode(document.get("reference_ode"), REFERENCE_CONFIG)
    exp = _require(document, "experiment", "config")
    if not isinstance(exp, dict):
        raise ConfigError("experiment: must be a mapping")

    horizon = float(_require(exp, "T", "experiment"))
    level = int(_require(exp, "level", "experiment"))
    h_min = horizon / 2 ** level
    reference = _reference_from_name(str(exp.get("reference", "self_refined")),
                                     h_min)
    seed = int(exp.get("master_seed", 0)) if seed_override is None \
        else int(seed_override)
    x0 = exp.get("x0", [0.0] * coeffs.dimension)
    if np.ndim(x0) == 0:
        x0 = [x0]
    try:
        return ExperimentConfig(
            coefficients=coeffs,
            model=model,
            horizon=horizon,
            level=level,
            h_exponents=tuple(int(e) for e in _require(exp, "h_exponents",
                                                       "experiment")),
            n_paths=int(_require(exp, "paths", "experiment")),
            x0=np.asarray(x0, dtype=float),
            reference=reference,
            master_seed=seed,
            p=float(exp.get("p", 1.0)),
            rate_epsilon=float(exp.get("rate_epsilon", 0.1)),
            ball_radius=(None if exp.get("ball_radius") is None
                         else float(exp["ball_radius"])),
            lattice_spacing=(None if exp.get("lattice_spacing") is None
                             else float(exp["lattice_spacing"])),
            ode=ode,
            reference_ode=reference_ode,
            moment_margin=float(exp.get("moment_margin", 0.1)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"experiment: {exc}") from None


def load_document(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML in {path}: {exc}") from None
    if not isinstance(document, dict):
        raise ConfigError("config: top level must be a mapping")
    return document


def resolved_document(document, cfg, command, observable=None):
    """The config echo for the manifest: original document with defaults
    made explicit, enough to re-run the experiment identically."""
    exp = dict(document.get("experiment", {}))
    exp.update({
        "T": cfg.horizon,
        "level": cfg.level,
        "h_exponents": list(cfg.h_exponents),
        "paths": cfg.n_paths,
        "x0": [float(v) for v in cfg.x0],
        "reference": cfg.reference.kind,
        "master_seed": cfg.master_seed,
        "p": cfg.p,
        "rate_epsilon": cfg.rate_epsilon,
        "moment_margin": cfg.moment_margin,
    })
    if cfg.ball_radius is not None:
        exp["ball_radius"] = cfg.ball_radius
    if cfg.lattice_spacing is not None:
        exp["lattice_spacing"] = cfg.lattice_spacing
    if observable is not None:
        exp["observable"] = observable
    resolved = {
        "command": command,
        "model": document.get("model"),
        "coefficients": {"name": cfg.coefficients.name,
                         "params": cfg.coefficients.params or {}},
        "ode": {"n_min": cfg.ode.n_min, "rho": cfg.ode.rho,
                "divergence_threshold": cfg.ode.divergence_threshold,
                "richardson": cfg.ode.richardson},
        "reference_ode": {"n_min": cfg.reference_ode.n_min,
                          "rho": cfg.reference_ode.rho,
                          "divergence_threshold":
                              cfg.reference_ode.divergence_threshold,
                          "richardson": cfg.reference_ode.richardson},
        "experiment": exp,
    }
    return resolved
