"""
Sampler Module.
No-U-Turn Sampler (multinomial trajectory sampling, generalized U-turn check)
with dual-averaging step size and windowed diagonal mass-matrix adaptation,
plus the multi-chain driver and the model fitting entry point.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config import RHAT_THRESHOLD, ModelKind, PriorConfig, SamplerConfig
from src.diagnostics import summarize
from src.exceptions import DimensionError, SamplerStartupError
from src.models import SmallAreaModel
from src.preprocessor import PreparedDataset

logger = logging.getLogger(__name__)

ValueAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]

STAT_COLUMNS = ("accept_stat", "tree_depth", "n_leapfrog", "divergent", "energy")

# Heuristic step-size search bounds
_STEP_MIN = 1e-10
_STEP_MAX = 1e7


def leapfrog(position, momentum, step, grad_fn, mass_diag) -> Tuple[np.ndarray, np.ndarray]:
    """
    One velocity-Verlet step for H(q, p) = -log p(q) + 0.5 * p' M^-1 p with
    diagonal mass M. Non-finite output signals a divergence to the caller.
    """
    q = np.asarray(position, dtype=float)
    p = np.asarray(momentum, dtype=float)
    inv_mass = 1.0 / np.asarray(mass_diag, dtype=float)
    p_half = p + 0.5 * step * grad_fn(q)
    q_new = q + step * inv_mass * p_half
    p_new = p_half + 0.5 * step * grad_fn(q_new)
    return q_new, p_new


def _safe_value_and_grad(value_and_grad: ValueAndGrad, q: np.ndarray) -> Tuple[float, np.ndarray]:
    try:
        with np.errstate(all="ignore"):
            logp, grad = value_and_grad(q)
    except (FloatingPointError, OverflowError, ValueError):
        return -math.inf, np.zeros_like(q)
    logp = float(logp)
    if not math.isfinite(logp) or not np.all(np.isfinite(grad)):
        return -math.inf, np.zeros_like(q)
    return logp, np.asarray(grad, dtype=float)


# --- trajectory tree ---

@dataclass
class _State:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    left: _State
    right: _State
    proposal: _State
    proposal_energy: float
    log_weight: float
    rho: np.ndarray
    p_sharp_left: np.ndarray
    p_sharp_right: np.ndarray
    sum_accept: float = 0.0
    n_leapfrog: int = 0
    turning: bool = False
    diverging: bool = False


def _no_uturn(p_sharp_minus: np.ndarray, p_sharp_plus: np.ndarray, rho: np.ndarray) -> bool:
    return float(p_sharp_plus @ rho) > 0 and float(p_sharp_minus @ rho) > 0


class NutsKernel:
    """
    One NUTS transition per call. The tree is kept in spatial order (left is
    the backward end, right the forward end) whatever the doubling direction.
    """

    def __init__(self, value_and_grad: ValueAndGrad, rng: np.random.Generator,
                 max_tree_depth: int = 10, divergence_threshold: float = 1000.0):
        self.value_and_grad = value_and_grad
        self.rng = rng
        self.max_tree_depth = max_tree_depth
        self.divergence_threshold = divergence_threshold

    def _momentum(self, inv_mass: np.ndarray) -> np.ndarray:
        return self.rng.standard_normal(inv_mass.shape) / np.sqrt(inv_mass)

    @staticmethod
    def _kinetic(p: np.ndarray, inv_mass: np.ndarray) -> float:
        return 0.5 * float(p @ (inv_mass * p))

    def _step(self, state: _State, step: float, inv_mass: np.ndarray) -> _State:
        p_half = state.p + 0.5 * step * state.grad
        q = state.q + step * inv_mass * p_half
        logp, grad = _safe_value_and_grad(self.value_and_grad, q)
        p = p_half + 0.5 * step * grad
        return _State(q, p, logp, grad)

    def _leaf(self, start: _State, step: float, inv_mass: np.ndarray, h0: float) -> _Tree:
        state = self._step(start, step, inv_mass)
        energy = -state.logp + self._kinetic(state.p, inv_mass)
        if not math.isfinite(energy):
            energy = math.inf
        delta = energy - h0
        p_sharp = inv_mass * state.p
        return _Tree(
            left=state, right=state, proposal=state, proposal_energy=energy,
            log_weight=-delta,
            rho=state.p.copy(), p_sharp_left=p_sharp, p_sharp_right=p_sharp,
            sum_accept=math.exp(min(0.0, -delta)) if math.isfinite(delta) else 0.0,
            n_leapfrog=1,
            diverging=not (delta <= self.divergence_threshold),
        )

    def _merge(self, left: _Tree, right: _Tree, take_from: _Tree, log_weight: float) -> _Tree:
        rho = left.rho + right.rho
        merged = _Tree(
            left=left.left, right=right.right,
            proposal=take_from.proposal, proposal_energy=take_from.proposal_energy,
            log_weight=log_weight, rho=rho,
            p_sharp_left=left.p_sharp_left, p_sharp_right=right.p_sharp_right,
            sum_accept=left.sum_accept + right.sum_accept,
            n_leapfrog=left.n_leapfrog + right.n_leapfrog,
        )
        # Full-span criterion plus the two checks across the join
        merged.turning = not (
            _no_uturn(left.p_sharp_left, right.p_sharp_right, rho)
            and _no_uturn(left.p_sharp_left, right.p_sharp_left, left.rho + right.left.p)
            and _no_uturn(left.p_sharp_right, right.p_sharp_right, right.rho + left.right.p)
        )
        return merged

    def _build(self, start: _State, depth: int, step: float, inv_mass: np.ndarray, h0: float) -> _Tree:
        if depth == 0:
            return self._leaf(start, step, inv_mass, h0)

        first = self._build(start, depth - 1, step, inv_mass, h0)
        if first.turning or first.diverging:
            return first

        edge = first.right if step > 0 else first.left
        second = self._build(edge, depth - 1, step, inv_mass, h0)
        if second.turning or second.diverging:
            first.sum_accept += second.sum_accept
            first.n_leapfrog += second.n_leapfrog
            first.turning = second.turning
            first.diverging = second.diverging
            return first

        log_weight = np.logaddexp(first.log_weight, second.log_weight)
        take_second = np.log(self.rng.random()) < second.log_weight - log_weight
        left, right = (first, second) if step > 0 else (second, first)
        return self._merge(left, right, second if take_second else first, log_weight)

    def transition(self, q: np.ndarray, logp: float, grad: np.ndarray, step: float,
                   inv_mass: np.ndarray) -> Tuple[_State, Dict]:
        p0 = self._momentum(inv_mass)
        start = _State(q, p0, logp, grad)
        h0 = -logp + self._kinetic(p0, inv_mass)
        p_sharp = inv_mass * p0
        tree = _Tree(left=start, right=start, proposal=start, proposal_energy=h0,
                     log_weight=0.0, rho=p0.copy(), p_sharp_left=p_sharp, p_sharp_right=p_sharp)

        depth = 0
        diverging = False
        sum_accept, n_leapfrog = 0.0, 0
        while depth < self.max_tree_depth:
            forward = self.rng.random() < 0.5
            edge = tree.right if forward else tree.left
            sub = self._build(edge, depth, step if forward else -step, inv_mass, h0)
            sum_accept += sub.sum_accept
            n_leapfrog += sub.n_leapfrog
            depth += 1

            if sub.diverging:
                diverging = True
                break
            if sub.turning:
                break

            # Biased progressive sampling favours the new subtree
            take_sub = np.log(self.rng.random()) < sub.log_weight - tree.log_weight
            log_weight = np.logaddexp(tree.log_weight, sub.log_weight)
            left, right = (tree, sub) if forward else (sub, tree)
            tree = self._merge(left, right, sub if take_sub else tree, log_weight)
            if tree.turning:
                break

        info = {
            "accept_stat": sum_accept / n_leapfrog if n_leapfrog else 0.0,
            "tree_depth": depth,
            "n_leapfrog": n_leapfrog,
            "divergent": diverging,
            "energy": tree.proposal_energy,
        }
        return tree.proposal, info

    def find_reasonable_step(self, q: np.ndarray, logp: float, grad: np.ndarray, step: float,
                             inv_mass: np.ndarray) -> float:
        """Doubles or halves the step until a single step's acceptance crosses 0.8."""
        log_target = math.log(0.8)
        direction = 0
        for _ in range(100):
            p = self._momentum(inv_mass)
            h0 = -logp + self._kinetic(p, inv_mass)
            state = self._step(_State(q, p, logp, grad), step, inv_mass)
            h = -state.logp + self._kinetic(state.p, inv_mass)
            delta = h0 - h if math.isfinite(h) else -math.inf
            if direction == 0:
                direction = 1 if delta > log_target else -1
            if direction == 1 and not delta > log_target:
                break
            if direction == -1 and not delta < log_target:
                break
            step = step * 2.0 if direction == 1 else step * 0.5
            if not _STEP_MIN < step < _STEP_MAX:
                break
        return float(min(max(step, _STEP_MIN), _STEP_MAX))


# --- warm-up adaptation ---

class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, step_size: float, target_accept: float,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size: float) -> None:
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.h_bar = 0.0
        self.log_step = math.log(step_size)
        self.log_step_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept)
        self.log_step = self.mu - math.sqrt(self.counter) / self.gamma * self.h_bar
        weight = self.counter ** (-self.kappa)
        self.log_step_bar = weight * self.log_step + (1.0 - weight) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def final_step(self) -> float:
        return math.exp(self.log_step_bar)


class WelfordVariance:
    """Running per-coordinate variance, regularized toward 1e-3 for short windows."""

    def __init__(self, dim: int):
        self.dim = dim
        self.reset()

    def reset(self) -> None:
        self.count = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def add(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def variance(self) -> np.ndarray:
        n = self.count
        var = self.m2 / (n - 1) if n > 1 else np.ones(self.dim)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


@dataclass(frozen=True)
class WarmupSchedule:
    """
    Fast initial buffer, a sequence of doubling slow windows for the mass
    matrix, and a fast terminal buffer. Short warm-ups shrink the buffers
    (15% / 10%); fewer than 20 iterations disable mass adaptation.
    """
    warmup: int
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    windows: Tuple[Tuple[int, int], ...] = field(init=False, default=())

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self._plan()))

    def _plan(self) -> List[Tuple[int, int]]:
        if self.warmup < 20:
            return []
        init, term, base = self.init_buffer, self.term_buffer, self.base_window
        if init + term + base > self.warmup:
            init = int(0.15 * self.warmup)
            term = int(0.1 * self.warmup)
            base = self.warmup - (init + term)
        last = self.warmup - term
        windows = []
        start, size = init, base
        while start < last:
            end = start + size
            if end + 2 * size > last:
                end = last
            windows.append((start, end))
            start, size = end, size * 2
        return windows

    def in_slow_window(self, iteration: int) -> bool:
        return any(start <= iteration < end for start, end in self.windows)

    def is_window_end(self, iteration: int) -> bool:
        return any(iteration + 1 == end for _, end in self.windows)


# --- draws container ---

@dataclass
class PosteriorDraws:
    """Post-warm-up draws (chains, draws, dim) plus per-iteration sampler statistics."""
    draws: np.ndarray
    param_names: List[str]
    stats: Dict[str, np.ndarray]
    step_size: np.ndarray
    mass_diag: np.ndarray
    wall_time: np.ndarray
    warmup_divergences: np.ndarray = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3:
            raise DimensionError(f"draws must be (chains, draws, dim), got {self.draws.shape}")
        if self.draws.shape[2] != len(self.param_names):
            raise DimensionError(f"{len(self.param_names)} names for {self.draws.shape[2]} parameters")
        for name, values in self.stats.items():
            if np.shape(values) != self.draws.shape[:2]:
                raise DimensionError(f"stat {name} has shape {np.shape(values)}")
        if self.warmup_divergences is None:
            self.warmup_divergences = np.zeros(self.n_chains, dtype=np.int64)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def divergences(self) -> np.ndarray:
        return np.asarray(self.stats["divergent"], dtype=bool).sum(axis=1)

    def tree_depth_histogram(self) -> Dict[int, int]:
        depths, counts = np.unique(np.asarray(self.stats["tree_depth"], dtype=int), return_counts=True)
        return {int(d): int(c) for d, c in zip(depths, counts)}

    def parameter(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.param_names.index(name)]

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.dim)

    def to_frame(self) -> pd.DataFrame:
        chains, n = self.draws.shape[:2]
        frame = pd.DataFrame(self.flat(), columns=self.param_names)
        frame.insert(0, "draw", np.tile(np.arange(n), chains))
        frame.insert(0, "chain", np.repeat(np.arange(chains), n))
        for name in STAT_COLUMNS:
            frame[f"{name}__"] = np.asarray(self.stats[name]).reshape(-1)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "PosteriorDraws":
        stat_cols = [f"{name}__" for name in STAT_COLUMNS]
        names = [c for c in frame.columns if c not in ("chain", "draw") and c not in stat_cols]
        frame = frame.sort_values(["chain", "draw"], kind="mergesort")
        chains = int(frame["chain"].nunique())
        n = len(frame) // chains
        draws = frame[names].to_numpy(dtype=float).reshape(chains, n, len(names))
        stats = {name: frame[f"{name}__"].to_numpy().reshape(chains, n)
                 for name in STAT_COLUMNS if f"{name}__" in frame.columns}
        return cls(draws=draws, param_names=names, stats=stats,
                   step_size=np.full(chains, np.nan), mass_diag=np.full((chains, len(names)), np.nan),
                   wall_time=np.full(chains, np.nan))


# --- chain driver ---

@dataclass
class _ChainResult:
    draws: np.ndarray
    stats: Dict[str, np.ndarray]
    step_size: float
    mass_diag: np.ndarray
    wall_time: float
    warmup_divergences: int


def _initial_point(value_and_grad: ValueAndGrad, dim: int, rng: np.random.Generator,
                   config: SamplerConfig, chain: int) -> Tuple[np.ndarray, float, np.ndarray]:
    for attempt in range(1, config.max_init_attempts + 1):
        q = rng.uniform(-config.init_radius, config.init_radius, size=dim)
        logp, grad = _safe_value_and_grad(value_and_grad, q)
        if math.isfinite(logp):
            if attempt > 1:
                logger.debug("Chain %d initialized after %d attempts", chain, attempt)
            return q, logp, grad
    raise SamplerStartupError(
        f"Chain {chain}: no finite log density after {config.max_init_attempts} initialization attempts"
    )


def _run_chain(chain: int, value_and_grad: ValueAndGrad, dim: int, config: SamplerConfig,
               seed_seq: np.random.SeedSequence) -> _ChainResult:
    started = time.perf_counter()
    rng = np.random.default_rng(seed_seq)
    q, logp, grad = _initial_point(value_and_grad, dim, rng, config, chain)
    kernel = NutsKernel(value_and_grad, rng, config.max_tree_depth, config.divergence_threshold)

    inv_mass = np.ones(dim)
    step = config.step_size_init
    adapt_step = config.adapt_step_size and config.warmup > 0
    if adapt_step:
        step = kernel.find_reasonable_step(q, logp, grad, step, inv_mass)
    dual = DualAveraging(step, config.target_accept)
    schedule = WarmupSchedule(config.warmup if config.adapt_mass else 0)
    welford = WelfordVariance(dim)

    draws = np.empty((config.draws, dim))
    stats = {
        "accept_stat": np.empty(config.draws),
        "tree_depth": np.empty(config.draws, dtype=np.int64),
        "n_leapfrog": np.empty(config.draws, dtype=np.int64),
        "divergent": np.empty(config.draws, dtype=bool),
        "energy": np.empty(config.draws),
    }
    warmup_divergences = 0

    total = config.warmup + config.draws
    iterations = tqdm(range(total), desc=f"chain {chain}", position=chain, leave=False,
                      disable=not config.progress)
    for it in iterations:
        state, info = kernel.transition(q, logp, grad, step, inv_mass)
        q, logp, grad = state.q, state.logp, state.grad

        if it < config.warmup:
            warmup_divergences += int(info["divergent"])
            if adapt_step:
                step = dual.update(info["accept_stat"])
            if schedule.in_slow_window(it):
                welford.add(q)
            if schedule.is_window_end(it):
                inv_mass = welford.variance()
                welford.reset()
                if adapt_step:
                    step = kernel.find_reasonable_step(q, logp, grad, step, inv_mass)
                    dual.restart(step)
            if it == config.warmup - 1 and adapt_step:
                step = dual.final_step
                logger.debug("Chain %d adapted step size %.4g", chain, step)
            continue

        k = it - config.warmup
        draws[k] = q
        for name in STAT_COLUMNS:
            stats[name][k] = info[name]

    return _ChainResult(
        draws=draws, stats=stats, step_size=step, mass_diag=1.0 / inv_mass,
        wall_time=time.perf_counter() - started, warmup_divergences=warmup_divergences,
    )


def run_nuts(logdensity_fn: Optional[Callable[[np.ndarray], float]],
             grad_fn: Optional[Callable[[np.ndarray], np.ndarray]],
             dim: int, config: SamplerConfig,
             value_and_grad_fn: Optional[ValueAndGrad] = None,
             param_names: Optional[List[str]] = None) -> PosteriorDraws:
    """
    Runs `config.chains` independent NUTS chains.

    Chain c draws from its own generator spawned from SeedSequence(config.seed),
    so results do not depend on thread scheduling or core count.

    Args:
        logdensity_fn / grad_fn: Log density and gradient, or pass a combined
            `value_and_grad_fn` returning both (one model evaluation per step).
        dim (int): Dimension of the unconstrained parameter space.
        config (SamplerConfig): Chains, iterations, adaptation and seed.

    Returns:
        PosteriorDraws: (chains, draws, dim) post-warm-up draws and statistics.
    """
    if value_and_grad_fn is None:
        if logdensity_fn is None or grad_fn is None:
            raise ValueError("Provide logdensity_fn and grad_fn, or value_and_grad_fn")

        def value_and_grad_fn(q):
            return logdensity_fn(q), grad_fn(q)

    if dim < 1:
        raise DimensionError("dim must be >= 1")
    names = list(param_names) if param_names is not None else [f"theta[{i}]" for i in range(1, dim + 1)]
    if len(names) != dim:
        raise DimensionError(f"{len(names)} parameter names for dim {dim}")

    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    workers = min(config.cores or config.chains, config.chains)
    logger.info("Sampling %d chains (%d warm-up + %d draws, %d workers)",
                config.chains, config.warmup, config.draws, workers)

    def run_one(chain: int) -> _ChainResult:
        return _run_chain(chain, value_and_grad_fn, dim, config, seeds[chain])

    if workers == 1:
        results = [run_one(c) for c in range(config.chains)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, range(config.chains)))

    draws = PosteriorDraws(
        draws=np.stack([r.draws for r in results]),
        param_names=names,
        stats={name: np.stack([r.stats[name] for r in results]) for name in STAT_COLUMNS},
        step_size=np.array([r.step_size for r in results]),
        mass_diag=np.stack([r.mass_diag for r in results]),
        wall_time=np.array([r.wall_time for r in results]),
        warmup_divergences=np.array([r.warmup_divergences for r in results]),
    )
    if draws.divergences.sum():
        logger.warning("%d divergent transitions after warm-up", int(draws.divergences.sum()))
    return draws


# --- model fitting ---

@dataclass
class FitResult:
    kind: ModelKind
    draws: PosteriorDraws
    summary: pd.DataFrame

    @property
    def max_rhat(self) -> float:
        rhat = self.summary["rhat"]
        return float(rhat.max()) if rhat.notna().any() else math.nan

    @property
    def min_ess_bulk(self) -> float:
        ess = self.summary["ess_bulk"]
        return float(ess.min()) if ess.notna().any() else math.nan

    @property
    def divergences(self) -> int:
        return int(self.draws.divergences.sum())

    def problems(self) -> List[str]:
        """Reasons the fit fails the convergence gate (empty when it passes)."""
        issues = []
        rhat = self.summary["rhat"]
        high = rhat[rhat > RHAT_THRESHOLD]
        if len(high):
            issues.append(f"{len(high)} parameter(s) with R-hat > {RHAT_THRESHOLD} (max {high.max():.3f})")
        undefined = rhat[rhat.isna()]
        if len(undefined):
            issues.append(f"R-hat undefined for {', '.join(undefined.index[:5])}"
                          + (" ..." if len(undefined) > 5 else ""))
        if self.divergences:
            issues.append(f"{self.divergences} divergent transition(s)")
        return issues

    @property
    def converged(self) -> bool:
        return not self.problems()

    def diagnostics(self) -> Dict:
        return {
            "max_rhat": self.max_rhat,
            "min_ess_bulk": self.min_ess_bulk,
            "divergences": self.divergences,
            "divergences_per_chain": self.draws.divergences.tolist(),
            "warmup_divergences": self.draws.warmup_divergences.tolist(),
            "step_size": self.draws.step_size.tolist(),
            "tree_depth_histogram": self.draws.tree_depth_histogram(),
            "mean_accept_stat": float(np.mean(self.draws.stats["accept_stat"])),
            "converged": self.converged,
            "problems": self.problems(),
        }


def _derived_quantities(model: SmallAreaModel, draws: PosteriorDraws) -> Dict[str, np.ndarray]:
    derived = {"sigma_y": np.exp(draws.parameter("log_sigma_y"))}
    if model.kind is ModelKind.A:
        derived["sigma_beta"] = np.exp(draws.parameter("log_sigma_beta"))
    return derived


def fit(kind, data: PreparedDataset, prior_config: Optional[PriorConfig] = None,
        sampler_config: Optional[SamplerConfig] = None) -> FitResult:
    """
    Samples the posterior of a model kind and summarizes it.

    Raises:
        SamplerStartupError: No chain found a finite starting point.
        DimensionError: Dataset and kind do not match.
    """
    kind = ModelKind.parse(kind)
    sampler_config = sampler_config or SamplerConfig()
    model = SmallAreaModel(kind, data, prior_config)
    logger.info("Fitting kind %s: %d wells, %d blocks, %d periods, %d parameters",
                kind.value, data.n_wells, data.n_blocks, data.n_times, model.dim)

    draws = run_nuts(None, None, model.dim, sampler_config,
                     value_and_grad_fn=model.log_posterior_and_grad,
                     param_names=model.param_names())
    summary = summarize(draws.draws, draws.param_names, _derived_quantities(model, draws))
    result = FitResult(kind=kind, draws=draws, summary=summary)
    for issue in result.problems():
        logger.warning("Convergence check: %s", issue)
    return result
