"""
Models Module.
Log-posterior densities with analytic gradients for the three hierarchical
well production models, on an unconstrained parameter vector.

Kind A (spatial):          mu = alpha_b + beta_b * L
                           beta_b ~ N(gamma + delta * Wbar_b, sigma_beta)
Kind B (spatio-temporal):  mu = alpha_b + tau_t + (gamma_t + delta_b * Ebar_b) * L
Kind C (expanded):         mu = alpha_b + tau_t
                                + (gamma_b * EWbar_b + delta_b * ESbar_b
                                   + phi_t * EWbar_t + omega_t * ESbar_t) * L

Scale parameters live on the log scale; their half-normal priors include the
log-Jacobian of sigma = exp(log_sigma).
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from src.config import ModelKind, PriorConfig
from src.exceptions import DimensionError
from src.preprocessor import PreparedDataset

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Bumped whenever the flat parameter order changes
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class ParamBlock:
    name: str
    size: int
    axis: str  # "block", "time" or "scalar"


def _layout_blocks(kind: ModelKind, n_blocks: int, n_times: int) -> List[ParamBlock]:
    if kind is ModelKind.A:
        return [
            ParamBlock("alpha", n_blocks, "block"),
            ParamBlock("beta", n_blocks, "block"),
            ParamBlock("gamma", 1, "scalar"),
            ParamBlock("delta", 1, "scalar"),
            ParamBlock("log_sigma_y", 1, "scalar"),
            ParamBlock("log_sigma_beta", 1, "scalar"),
        ]
    if kind is ModelKind.B:
        return [
            ParamBlock("alpha", n_blocks, "block"),
            ParamBlock("delta", n_blocks, "block"),
            ParamBlock("tau", n_times, "time"),
            ParamBlock("gamma_t", n_times, "time"),
            ParamBlock("log_sigma_y", 1, "scalar"),
        ]
    return [
        ParamBlock("alpha", n_blocks, "block"),
        ParamBlock("gamma", n_blocks, "block"),
        ParamBlock("delta", n_blocks, "block"),
        ParamBlock("tau", n_times, "time"),
        ParamBlock("phi", n_times, "time"),
        ParamBlock("omega", n_times, "time"),
        ParamBlock("log_sigma_y", 1, "scalar"),
    ]


class ParamLayout:
    """
    Fixed order of the flat parameter vector for a model kind and (B, T).
    Vector entries are labelled `alpha[1]`, `tau[3]`, ... (1-based) and plain
    names for scalars.
    """

    def __init__(self, kind, n_blocks: int, n_times: int):
        self.kind = ModelKind.parse(kind)
        self.n_blocks = n_blocks
        self.n_times = n_times
        self.blocks = _layout_blocks(self.kind, n_blocks, n_times)
        self.slices: Dict[str, slice] = {}
        start = 0
        for block in self.blocks:
            self.slices[block.name] = slice(start, start + block.size)
            start += block.size
        self.dim = start

    def names(self) -> List[str]:
        labels = []
        for block in self.blocks:
            if block.axis == "scalar":
                labels.append(block.name)
            else:
                labels.extend(f"{block.name}[{i}]" for i in range(1, block.size + 1))
        return labels

    def unpack(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        """Views into `theta` (shape (..., dim)); scalars drop their last axis."""
        out = {}
        for block in self.blocks:
            part = theta[..., self.slices[block.name]]
            out[block.name] = part[..., 0] if block.axis == "scalar" else part
        return out

    def pack(self, values: Dict[str, np.ndarray]) -> np.ndarray:
        theta = np.empty(self.dim)
        for block in self.blocks:
            value = np.asarray(values[block.name], dtype=float).reshape(-1)
            if value.size != block.size:
                raise DimensionError(f"{block.name} needs {block.size} values, got {value.size}")
            theta[self.slices[block.name]] = value
        return theta


# --- prior terms: (log density, gradient wrt x) ---

def _normal_term(x, mean, sd) -> Tuple[float, np.ndarray]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = (x - mean) / sd
    lp = -0.5 * float(z @ z) - x.size * (math.log(sd) + 0.5 * LOG_2PI)
    return lp, -z / sd


def _walk_term(x, sd) -> Tuple[float, np.ndarray]:
    """x_1 ~ N(0, sd), x_t ~ N(x_{t-1}, sd)."""
    steps = np.diff(np.asarray(x, dtype=float), prepend=0.0)
    lp, g_steps = _normal_term(steps, 0.0, sd)
    grad = g_steps.copy()
    grad[:-1] -= g_steps[1:]
    return lp, grad


def _half_normal_log_term(log_sigma: float, sd: float, loc: float = 0.0) -> Tuple[float, float]:
    """
    sigma ~ Normal(loc, sd) truncated to sigma > 0 (HalfNormal(sd) when loc is
    0), expressed on log_sigma, Jacobian included.
    """
    sigma = np.exp(log_sigma)
    z = (sigma - loc) / sd
    lp = -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI - float(special.log_ndtr(loc / sd)) + log_sigma
    return lp, 1.0 - z * sigma / sd


class SmallAreaModel:
    """
    Posterior of one model kind over a prepared dataset.

    Missing group averages (empty periods) are treated as zero covariates;
    the corresponding random-walk terms are then informed by the prior only.
    """

    def __init__(self, kind, data: PreparedDataset, priors: Optional[PriorConfig] = None):
        self.kind = ModelKind.parse(kind)
        if data.kind is not self.kind:
            raise DimensionError(f"Dataset was prepared for kind {data.kind.value}, not {self.kind.value}")
        if data.y is None:
            raise DimensionError("Dataset has no outcome")
        self.data = data
        self.priors = priors or PriorConfig.for_kind(self.kind)
        self.layout = ParamLayout(self.kind, data.n_blocks, data.n_times)

        self.y = np.asarray(data.y, dtype=float)
        self.l = np.asarray(data.l, dtype=float)
        self.b = data.block_of
        self.t = data.time_of
        self.n = len(self.y)

        def covariate(name: str) -> np.ndarray:
            value = getattr(data, name)
            if value is None:
                raise DimensionError(f"Kind {self.kind.value} needs '{name}' in the dataset")
            return np.nan_to_num(np.asarray(value, dtype=float), nan=0.0)

        if self.kind is ModelKind.A:
            self.w_bar_b = covariate("w_bar_b")
        elif self.kind is ModelKind.B:
            self.e_bar_b = covariate("e_bar_b")
            self._e_well = self.e_bar_b[self.b]
        else:
            self.ew_bar_b = covariate("ew_bar_b")
            self.es_bar_b = covariate("es_bar_b")
            self.ew_bar_t = covariate("ew_bar_t")
            self.es_bar_t = covariate("es_bar_t")
            self._ew_b_well = self.ew_bar_b[self.b]
            self._es_b_well = self.es_bar_b[self.b]
            self._ew_t_well = self.ew_bar_t[self.t]
            self._es_t_well = self.es_bar_t[self.t]

    @property
    def dim(self) -> int:
        return self.layout.dim

    def param_names(self) -> List[str]:
        return self.layout.names()

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.dim:
            raise DimensionError(f"Expected parameter vector of length {self.dim}, got shape {theta.shape}")
        return theta

    def _mean(self, p: Dict[str, np.ndarray]) -> np.ndarray:
        b, t, l = self.b, self.t, self.l
        if self.kind is ModelKind.A:
            return p["alpha"][..., b] + p["beta"][..., b] * l
        if self.kind is ModelKind.B:
            slope = p["gamma_t"][..., t] + p["delta"][..., b] * self._e_well
            return p["alpha"][..., b] + p["tau"][..., t] + slope * l
        slope = (p["gamma"][..., b] * self._ew_b_well + p["delta"][..., b] * self._es_b_well
                 + p["phi"][..., t] * self._ew_t_well + p["omega"][..., t] * self._es_t_well)
        return p["alpha"][..., b] + p["tau"][..., t] + slope * l

    def predict_mean(self, theta) -> np.ndarray:
        """Per-well mean on the standardized scale; accepts a batch of shape (..., dim)."""
        theta = self._check(theta)
        return self._mean(self.layout.unpack(theta))

    def sigma_y(self, theta) -> np.ndarray:
        return np.exp(self.layout.unpack(self._check(theta))["log_sigma_y"])

    def log_likelihood(self, theta) -> float:
        theta = self._check(theta)
        p = self.layout.unpack(theta)
        log_sigma = float(p["log_sigma_y"])
        with np.errstate(over="ignore", invalid="ignore"):
            resid = self.y - self._mean(p)
            ss = float(resid @ resid)
            return -0.5 * self.n * LOG_2PI - self.n * log_sigma - 0.5 * ss * np.exp(-2.0 * log_sigma)

    def log_prior(self, theta) -> float:
        return self._log_prior_and_grad(self._check(theta))[0]

    def _log_prior_and_grad(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        p = self.layout.unpack(theta)
        s = self.layout.slices
        pr = self.priors
        grad = np.zeros(self.dim)
        total = 0.0

        def add(name, term):
            nonlocal total
            lp, g = term
            total += lp
            grad[s[name]] += g

        if self.kind is ModelKind.A:
            add("alpha", _normal_term(p["alpha"], 0.0, pr.scale_loc))
            add("gamma", _normal_term(p["gamma"], 0.0, pr.scale_loc))
            add("delta", _normal_term(p["delta"], 0.0, pr.scale_loc))
            # beta_b ~ N(gamma + delta * Wbar_b, sigma_beta)
            log_sb = float(p["log_sigma_beta"])
            sb = np.exp(log_sb)
            dev = p["beta"] - (p["gamma"] + p["delta"] * self.w_bar_b)
            scaled = dev / (sb * sb)
            total += (-0.5 * float(dev @ dev) / (sb * sb)
                      - self.layout.n_blocks * (log_sb + 0.5 * LOG_2PI))
            grad[s["beta"]] -= scaled
            grad[s["gamma"]] += scaled.sum()
            grad[s["delta"]] += scaled @ self.w_bar_b
            grad[s["log_sigma_beta"]] += -self.layout.n_blocks + float(dev @ dev) / (sb * sb)
            add("log_sigma_beta", _half_normal_log_term(log_sb, pr.scale_sigma))
        elif self.kind is ModelKind.B:
            add("alpha", _normal_term(p["alpha"], 0.0, pr.scale_loc))
            add("delta", _normal_term(p["delta"], 0.0, pr.scale_loc))
            add("tau", _walk_term(p["tau"], pr.scale_walk))
            add("gamma_t", _walk_term(p["gamma_t"], pr.scale_walk))
        else:
            add("alpha", _normal_term(p["alpha"], 0.0, pr.scale_loc))
            add("gamma", _normal_term(p["gamma"], 0.0, pr.scale_loc))
            add("delta", _normal_term(p["delta"], 0.0, pr.scale_loc))
            add("tau", _walk_term(p["tau"], pr.scale_walk))
            add("phi", _walk_term(p["phi"], pr.scale_walk))
            add("omega", _walk_term(p["omega"], pr.scale_walk))

        add("log_sigma_y", _half_normal_log_term(float(p["log_sigma_y"]), pr.sigma_y_sd, pr.sigma_y_loc))
        return total, grad

    def log_posterior_and_grad(self, theta) -> Tuple[float, np.ndarray]:
        """
        Log posterior (up to a constant) and its gradient in one pass.
        Non-finite values come back as -inf so the sampler can treat them as
        divergent.
        """
        theta = self._check(theta)
        p = self.layout.unpack(theta)
        s = self.layout.slices
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lp_prior, grad = self._log_prior_and_grad(theta)

            log_sigma = float(p["log_sigma_y"])
            inv_var = np.exp(-2.0 * log_sigma)
            resid = self.y - self._mean(p)
            ss = float(resid @ resid)
            lp_lik = -0.5 * self.n * LOG_2PI - self.n * log_sigma - 0.5 * ss * inv_var

            g_mu = resid * inv_var
            g_l = g_mu * self.l
            nb, nt = self.layout.n_blocks, self.layout.n_times
            grad[s["log_sigma_y"]] += -self.n + ss * inv_var
            grad[s["alpha"]] += np.bincount(self.b, weights=g_mu, minlength=nb)

            if self.kind is ModelKind.A:
                grad[s["beta"]] += np.bincount(self.b, weights=g_l, minlength=nb)
            else:
                grad[s["tau"]] += np.bincount(self.t, weights=g_mu, minlength=nt)
                gl_b = np.bincount(self.b, weights=g_l, minlength=nb)
                gl_t = np.bincount(self.t, weights=g_l, minlength=nt)
                if self.kind is ModelKind.B:
                    grad[s["gamma_t"]] += gl_t
                    grad[s["delta"]] += gl_b * self.e_bar_b
                else:
                    grad[s["gamma"]] += gl_b * self.ew_bar_b
                    grad[s["delta"]] += gl_b * self.es_bar_b
                    grad[s["phi"]] += gl_t * self.ew_bar_t
                    grad[s["omega"]] += gl_t * self.es_bar_t

        value = lp_lik + lp_prior
        if not math.isfinite(value):
            return -math.inf, grad
        return value, grad

    def log_posterior(self, theta) -> float:
        return self.log_posterior_and_grad(theta)[0]

    def grad_log_posterior(self, theta) -> np.ndarray:
        return self.log_posterior_and_grad(theta)[1]

    def posterior_predictive_draw(self, theta, rng: np.random.Generator) -> np.ndarray:
        """One replicated outcome vector (standardized scale) per parameter vector."""
        theta = self._check(theta)
        mu = self.predict_mean(theta)
        sigma = self.sigma_y(theta)
        return mu + np.asarray(sigma)[..., None] * rng.standard_normal(mu.shape)

    def derived_beta(self, theta) -> np.ndarray:
        """Kind B lateral slope per (block, period): gamma_t + delta_b * Ebar_b, shape (..., B, T)."""
        if self.kind is not ModelKind.B:
            raise ValueError("derived_beta is only defined for model kind B")
        p = self.layout.unpack(self._check(theta))
        return p["gamma_t"][..., None, :] + (p["delta"] * self.e_bar_b)[..., :, None]


# --- functional entry points ---

def log_likelihood(kind, params, data: PreparedDataset) -> float:
    return SmallAreaModel(kind, data).log_likelihood(params)


def log_prior(kind, params, prior_config: PriorConfig, data: PreparedDataset) -> float:
    """The kind A prior depends on the block water averages, hence `data`."""
    return SmallAreaModel(kind, data, prior_config).log_prior(params)


def grad_log_posterior(kind, params, data: PreparedDataset,
                       prior_config: Optional[PriorConfig] = None) -> np.ndarray:
    return SmallAreaModel(kind, data, prior_config).grad_log_posterior(params)


def posterior_predictive_draw(kind, params, data: PreparedDataset, rng: np.random.Generator) -> np.ndarray:
    return SmallAreaModel(kind, data).posterior_predictive_draw(params, rng)


def log_posterior(kind, params, data: PreparedDataset, prior_config: Optional[PriorConfig] = None) -> float:
    return SmallAreaModel(kind, data, prior_config).log_posterior(params)


def predict_mean(kind, params, data: PreparedDataset) -> np.ndarray:
    return SmallAreaModel(kind, data).predict_mean(params)
