"""Prior and hyper-prior densities for the three-groups model.

Everything is evaluated in log space with log-gamma; with thousands of genes
raw gamma functions overflow long before the model prior becomes small.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .model import GeneLabel, GroupProbabilities

LOG2 = math.log(2.0)
LOG2PI = math.log(2.0 * math.pi)
MODALITIES = ("rna", "gwas")


@dataclass(frozen=True)
class DirichletConfig:
    kappa: float = 1.0
    a: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if len(self.a) != 3 or not all(ai > 0 for ai in self.a):
            raise ValueError("a must be a positive 3-vector")

    @property
    def alpha(self) -> np.ndarray:
        return self.kappa * np.asarray(self.a, dtype=float)


def log_model_prior(k1: int, k2: int, k3: int, config: DirichletConfig = DirichletConfig()) -> float:
    """Log marginal prior mass of one particular label vector with counts (k1, k2, k3).

    This is the Dirichlet-categorical marginal (lambda integrated out); it is
    the mass of a single labelling, not of all labellings sharing the counts.
    """
    k = np.array([k1, k2, k3], dtype=float)
    if (k < 0).any():
        raise ValueError("group counts must be non-negative")
    alpha = config.alpha
    return float(
        special.gammaln(alpha.sum())
        + special.gammaln(alpha + k).sum()
        - special.gammaln(alpha).sum()
        - special.gammaln(alpha.sum() + k.sum())
    )


def log_label_move_ratio(counts, old: int, new: int, config: DirichletConfig = DirichletConfig()) -> float:
    """Change in ``log_model_prior`` when one gene moves from group ``old`` to ``new``.

    ``counts`` include the moving gene in ``old``.
    """
    if old == new:
        return 0.0
    alpha = config.alpha
    return math.log(alpha[new - 1] + counts[new - 1]) - math.log(alpha[old - 1] + counts[old - 1] - 1)


def sample_lambda_given_labels(k1, k2, k3, config: DirichletConfig, rng: np.random.Generator) -> GroupProbabilities:
    """Draw lambda from its full conditional through the two-stick representation."""
    a1, a2, a3 = config.alpha
    v1 = rng.beta(a1 + k1, a2 + a3 + k2 + k3)
    v2 = rng.beta(a2 + k2, a3 + k3)
    return GroupProbabilities.from_sticks(v1, v2)


def _sign(sign) -> int:
    if sign in ("+", 1, 1.0):
        return 1
    if sign in ("-", -1, -1.0):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def log_pimom(beta, tau, r=2.0):
    """Log density of the (symmetric) product inverse moment prior."""
    beta = np.asarray(beta, dtype=float)
    b2 = beta * beta
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            0.5 * r * np.log(tau)
            - special.gammaln(0.5 * r)
            - 0.5 * (r + 1.0) * np.log(b2)
            - tau / b2
        )
    out = np.where(b2 > 0, out, -np.inf)
    return out if out.ndim else float(out)


def log_half_pimom(beta, tau, r=2.0, sign="+"):
    """piMOM truncated to one half-line (doubled so it still integrates to 1)."""
    s = _sign(sign)
    beta = np.asarray(beta, dtype=float)
    out = np.where(s * beta > 0, log_pimom(beta, tau, r) + LOG2, -np.inf)
    return out if out.ndim else float(out)


def sample_half_pimom(tau, r=2.0, sign="+", rng=None, size=None):
    # beta^-2 ~ Gamma(shape=r/2, rate=tau)
    rng = np.random.default_rng() if rng is None else rng
    u = rng.gamma(0.5 * r, 1.0 / tau, size=size)
    return _sign(sign) / np.sqrt(u)


def log_half_normal(beta, sigma, sign="+", mean=0.0):
    """Normal(sign*mean, sigma) truncated to the signed half-line.

    With ``mean=0`` this is the ordinary half-normal.
    """
    s = _sign(sign)
    beta = np.asarray(beta, dtype=float)
    z = (s * beta - mean) / sigma
    out = -0.5 * z * z - 0.5 * LOG2PI - math.log(sigma) - special.log_ndtr(mean / sigma)
    out = np.where(s * beta > 0, out, -np.inf)
    return out if out.ndim else float(out)


def sample_half_normal(sigma, sign="+", mean=0.0, rng=None, size=None):
    rng = np.random.default_rng() if rng is None else rng
    if mean == 0.0:
        x = np.abs(rng.normal(0.0, sigma, size=size))
    else:
        x = stats.truncnorm.rvs(-mean / sigma, np.inf, loc=mean, scale=sigma, size=size, random_state=rng)
    # exact zeros would fall outside the open half-line
    x = np.maximum(x, np.finfo(float).tiny)
    return _sign(sign) * x


def log_half_t(x, nu=4.0, scale=1.0):
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, stats.t.logpdf(x, nu, scale=scale) + LOG2, -np.inf)
    return out if out.ndim else float(out)


def log_inv_gamma(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(scale) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x
    out = np.where(x > 0, out, -np.inf)
    return out if out.ndim else float(out)


def log_normal(x, mean=0.0, precision=1.0):
    """Normal log density parametrized by precision."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * math.log(precision) - 0.5 * LOG2PI - 0.5 * precision * (x - mean) ** 2
    return out if out.ndim else float(out)


class PriorFamily(str, enum.Enum):
    LOCAL_FIXED = "local-fixed"
    LOCAL_HYPER = "local-hyper"
    NONLOCAL_FIXED = "nonlocal-fixed"
    NONLOCAL_PIMOM = "nonlocal-pimom"
    NONLOCAL_INVGAMMA = "nonlocal-invgamma"

    @property
    def is_local(self) -> bool:
        return self in (PriorFamily.LOCAL_FIXED, PriorFamily.LOCAL_HYPER)

    @property
    def has_hyper(self) -> bool:
        return self not in (PriorFamily.LOCAL_FIXED, PriorFamily.NONLOCAL_FIXED)


@dataclass(frozen=True)
class PriorConfig:
    family: PriorFamily = PriorFamily.NONLOCAL_PIMOM
    r: float = 2.0
    fixed_tau: float = 1.0
    fixed_sigma: float = 1.0
    hyper_pimom_tau: float = 1.0
    hyper_pimom_r: float = 2.0
    invgamma_shape: float = 2.0
    invgamma_scale: float = 2.0
    tau0_nu: float = 4.0
    tau0_scale: float = 1.0
    mu0_precision: float = 1e-2
    alpha_precision: float = 1e-3
    beta_precision: float = 1e-3
    dirichlet: DirichletConfig = field(default_factory=DirichletConfig)

    def __post_init__(self):
        object.__setattr__(self, "family", PriorFamily(self.family))
        for name in ("r", "fixed_tau", "fixed_sigma", "hyper_pimom_tau", "hyper_pimom_r",
                     "invgamma_shape", "invgamma_scale", "tau0_nu", "tau0_scale",
                     "mu0_precision", "alpha_precision", "beta_precision"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _key(modality: str, sign: int) -> str:
    return f"{modality}{'+' if sign > 0 else '-'}"


@dataclass
class HyperState:
    """Effect hyper-parameters keyed like ``"gwas+"`` plus the dispersion hierarchy."""

    tau: dict[str, float] = field(default_factory=dict)
    mu: dict[str, float] = field(default_factory=dict)
    sigma: dict[str, float] = field(default_factory=dict)
    mu0: float = math.log(0.5)
    tau0: float = 1.0

    @classmethod
    def initial(cls, config: PriorConfig, modalities=MODALITIES) -> "HyperState":
        h = cls()
        keys = [_key(m, s) for m in modalities for s in (1, -1)]
        if config.family in (PriorFamily.NONLOCAL_PIMOM, PriorFamily.NONLOCAL_INVGAMMA):
            h.tau = {k: config.fixed_tau for k in keys}
        elif config.family is PriorFamily.LOCAL_HYPER:
            h.mu = {k: 1.0 for k in keys}
            h.sigma = {k: config.fixed_sigma for k in keys}
        return h

    def copy(self) -> "HyperState":
        return HyperState(dict(self.tau), dict(self.mu), dict(self.sigma), self.mu0, self.tau0)

    def as_dict(self) -> dict[str, float]:
        out = {"mu0": self.mu0, "tau0": self.tau0}
        for name in ("tau", "mu", "sigma"):
            for k, v in getattr(self, name).items():
                out[f"{name}[{k}]"] = v
        return out


def effect_prior_params(modality: str, sign: int, config: PriorConfig, hyper: HyperState):
    """Return ``("pimom", tau)`` or ``("normal", mean, sigma)`` for one slab."""
    fam = config.family
    if fam is PriorFamily.LOCAL_FIXED:
        return ("normal", 0.0, config.fixed_sigma)
    if fam is PriorFamily.LOCAL_HYPER:
        k = _key(modality, sign)
        return ("normal", hyper.mu[k], hyper.sigma[k])
    if fam is PriorFamily.NONLOCAL_FIXED:
        return ("pimom", config.fixed_tau)
    return ("pimom", hyper.tau[_key(modality, sign)])


def log_slab(effect, sign: int, params, r: float):
    if params[0] == "pimom":
        return log_half_pimom(effect, params[1], r, sign)
    return log_half_normal(effect, params[2], sign, mean=params[1])


def log_effect_prior(effect, label, modality: str, config: PriorConfig, hyper: HyperState) -> float:
    """Log prior of one gene effect given its label.

    A null gene carries a point mass at zero, contributing nothing.
    """
    label = GeneLabel(label)
    if label is GeneLabel.NULL:
        return 0.0 if effect == 0 else -math.inf
    sign = label.sign
    return float(log_slab(effect, sign, effect_prior_params(modality, sign, config, hyper), config.r))


def sample_effect_prior(label, modality: str, config: PriorConfig, hyper: HyperState, rng, size=None):
    label = GeneLabel(label)
    if label is GeneLabel.NULL:
        return 0.0 if size is None else np.zeros(size)
    sign = label.sign
    params = effect_prior_params(modality, sign, config, hyper)
    if params[0] == "pimom":
        return sample_half_pimom(params[1], config.r, sign, rng, size)
    return sample_half_normal(params[2], sign, params[1], rng, size)


def log_hyper_prior(hyper: HyperState, config: PriorConfig, log_phi=None) -> float:
    """Sum of hyper-prior log densities.

    Includes the dispersion hierarchy (``log_phi`` terms when given, the
    location ``mu0`` and the precision ``tau0``) and the family-specific
    priors on the slab scales.
    """
    if not hyper.tau0 > 0:
        return -math.inf
    total = log_normal(hyper.mu0, 0.0, config.mu0_precision)
    total += log_half_t(hyper.tau0, config.tau0_nu, config.tau0_scale)
    if log_phi is not None and len(log_phi):
        total += float(np.sum(log_normal(np.asarray(log_phi), hyper.mu0, hyper.tau0)))
    return float(total + log_slab_hyper_prior(hyper, config))


def log_slab_hyper_prior(hyper: HyperState, config: PriorConfig) -> float:
    """Family-specific hyper-prior terms on the slab scales/locations only."""
    total = 0.0
    fam = config.family
    if fam is PriorFamily.NONLOCAL_PIMOM:
        for t in hyper.tau.values():
            total += log_half_pimom(t, config.hyper_pimom_tau, config.hyper_pimom_r, "+")
    elif fam is PriorFamily.NONLOCAL_INVGAMMA:
        for t in hyper.tau.values():
            total += log_inv_gamma(t, config.invgamma_shape, config.invgamma_scale)
    elif fam is PriorFamily.LOCAL_HYPER:
        for k in hyper.mu:
            total += log_inv_gamma(hyper.mu[k], config.invgamma_shape, config.invgamma_scale)
            total += log_half_pimom(hyper.sigma[k], config.hyper_pimom_tau, config.hyper_pimom_r, "+")
    return float(total)
