"""Negative log-likelihood of measurement data and the two-stage optimizer."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import line_search

from .data import Dataset, exact_state_tangents, rotate_dense
from .errors import DomainError, NumericError, ResourceError
from .hamiltonian import HamiltonianModel
from .mps import parse_basis, product_state, rotated_sites
from .tebd import DEFAULT_CHI, DEFAULT_DT, born_probabilities, evolve, outcome_table

log = logging.getLogger(__name__)

P_FLOOR = 1e-12
SCORE_SITE_CAP = 8
INIT_LOW, INIT_HIGH = -2.0, 2.0


@dataclass(frozen=True)
class SimConfig:
    """Simulator settings used inside the loss."""

    dt: float = DEFAULT_DT
    chi: int = DEFAULT_CHI

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.chi < 1:
            raise DomainError("chi must be positive")


@dataclass(frozen=True)
class LossValue:
    """Loss at one parameter point.

    Attributes:
        value: Mean negative log-probability over the selected records.
        gradient: ``nu``-vector, or ``None`` if not requested.
        per_cell: ``(J, K)`` mean negative log-probability per cell, NaN for
            cells without selected records.
        cell_counts: ``(J, K)`` number of selected records per cell.
        clamp_count: Records whose probability fell below the floor.
        discarded_weight: Truncation weight accumulated by the simulation.
    """

    value: float
    gradient: NDArray[np.float64] | None
    per_cell: NDArray[np.float64]
    cell_counts: NDArray[np.int64]
    clamp_count: int
    discarded_weight: float = 0.0


class _Groups:
    """Records collapsed to unique (cell, bit-string) groups with multiplicities."""

    def __init__(self, ds: Dataset, idx: NDArray | None = None):
        cells = ds.cells if idx is None else ds.cells[idx]
        samples = ds.samples if idx is None else ds.samples[idx]
        self.total = int(cells.shape[0])
        if self.total == 0:
            raise DomainError("loss over an empty selection")
        keys = np.concatenate([cells.astype(np.int64), samples.astype(np.int64)], axis=1)
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        self.j = uniq[:, 0]
        self.k = uniq[:, 1]
        self.bits = uniq[:, 2:].astype(np.uint8)
        self.weight = counts.astype(np.float64)
        basis_idx = np.array([parse_basis(b, ds.n) for b in ds.bases])
        self.basis = basis_idx[self.k]
        self.stamps = np.unique(self.j)
        self.shape = (ds.J, ds.K)


class LossProblem:
    """A dataset and model bound together for repeated loss evaluations.

    Grouping of the full record set is done once here.
    """

    def __init__(self, dataset: Dataset, model: HamiltonianModel, sim: SimConfig = SimConfig(),
                 p_floor: float = P_FLOOR):
        if dataset.n != model.n:
            raise DomainError(f"dataset has n = {dataset.n}, model n = {model.n}")
        self.dataset = dataset
        self.model = model
        self.sim = sim
        self.p_floor = p_floor
        self.full = _Groups(dataset)
        self.evaluations = 0

    def evaluate(self, theta: ArrayLike, with_grad: bool = True, subset: ArrayLike | None = None) -> LossValue:
        groups = self.full if subset is None else _Groups(self.dataset, np.asarray(subset))
        return self._evaluate(np.asarray(theta, dtype=np.float64), groups, with_grad)

    def _evaluate(self, theta: NDArray, g: _Groups, with_grad: bool) -> LossValue:
        theta = self.model._check_theta(theta)
        self.evaluations += 1
        times = [self.dataset.times[j] for j in g.stamps]
        snaps = evolve(product_state(self.model.n, self.sim.chi), self.model, theta, times,
                       dt=self.sim.dt, chi=self.sim.chi, with_tangents=with_grad)
        nu = self.model.nu
        p = np.empty(g.j.shape[0])
        dp = np.zeros((g.j.shape[0], nu)) if with_grad else None
        for snap, j in zip(snaps, g.stamps):
            sel = np.flatnonzero(g.j == j)
            pj, gj = born_probabilities(snap, g.basis[sel], g.bits[sel], rotated_sites(snap))
            p[sel] = pj
            if with_grad:
                dp[sel] = gj
        clamped = p < self.p_floor
        logp = np.log(np.where(clamped, self.p_floor, p))
        nll = -g.weight * logp
        value = float(np.sum(nll)) / g.total
        if not np.isfinite(value):
            raise NumericError(f"loss is not finite at theta = {theta.tolist()}")
        grad = None
        if with_grad:
            coef = np.where(clamped, 0.0, g.weight / np.where(clamped, 1.0, p))
            grad = -(coef @ dp) / g.total
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"gradient is not finite at theta = {theta.tolist()}")
        counts = np.zeros(g.shape)
        sums = np.zeros(g.shape)
        np.add.at(counts, (g.j, g.k), g.weight)
        np.add.at(sums, (g.j, g.k), nll)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_cell = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), np.nan)
        return LossValue(
            value=value,
            gradient=grad,
            per_cell=per_cell,
            cell_counts=counts.astype(np.int64),
            clamp_count=int(np.sum(g.weight[clamped])),
            discarded_weight=float(snaps[-1].discarded_weight),
        )


def loss(dataset: Dataset, model: HamiltonianModel, theta: ArrayLike, sim: SimConfig = SimConfig(),
         subset: ArrayLike | None = None, with_grad: bool = True) -> LossValue:
    """Negative log-likelihood ``-(1/d) sum log P(s | theta)`` of ``dataset``.

    One evolution covers all time stamps; probabilities below ``1e-12`` are
    clamped and contribute no gradient.

    Args:
        subset: Optional record indices; the mean is taken over them.
        with_grad: Propagate parameter tangents and return the gradient.
    """
    return LossProblem(dataset, model, sim).evaluate(theta, with_grad, subset)


def score_mean_exact(model: HamiltonianModel, theta_star: ArrayLike, times: Sequence[float],
                     bases: Sequence[str], engine: str = "exact", sim: SimConfig = SimConfig()) -> NDArray:
    """Mean score ``sum_s P grad log P`` at ``theta_star`` by full enumeration.

    Averaged over all (time stamp, basis) cells; outcomes with zero probability
    are skipped. For the true distribution the result vanishes identically.
    """
    n = model.n
    if n > SCORE_SITE_CAP:
        raise ResourceError(f"enumeration over 2^{n} outcomes exceeds the cap of {SCORE_SITE_CAP} sites")
    theta_star = model._check_theta(theta_star)
    outcomes = outcome_table(n)
    acc = np.zeros(model.nu)
    cells = 0
    if engine == "exact":
        states = [exact_state_tangents(model, theta_star, t) for t in times]
        for st in states:
            for b in bases:
                amp = rotate_dense(st, n, b)
                p = np.abs(amp[0]) ** 2
                dp = 2.0 * np.real(np.conj(amp[0])[None, :] * amp[1:])
                acc += dp[:, p > 0].sum(axis=1)
                cells += 1
    elif engine == "tebd":
        snaps = evolve(product_state(n, sim.chi), model, theta_star, list(times), dt=sim.dt,
                       chi=sim.chi, with_tangents=True)
        for snap in snaps:
            rot = rotated_sites(snap)
            for b in bases:
                idx = np.tile(parse_basis(b, n), (outcomes.shape[0], 1))
                p, dp = born_probabilities(snap, idx, outcomes, rot)
                acc += dp[p > 0].sum(axis=0)
                cells += 1
    else:
        raise DomainError(f"unknown engine {engine!r}")
    return acc / cells


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    max_steps: int | None = None
    plateau_window: int = 10
    plateau_rel: float = 1e-3


@dataclass(frozen=True)
class BfgsConfig:
    c1: float = 1e-4
    c2: float = 0.9
    gtol: float = 1e-7
    max_iter: int = 200


@dataclass(frozen=True)
class OptimizerConfig:
    """ADAM on mini-batches of one record per cell, then full-batch BFGS."""

    adam: AdamConfig = field(default_factory=AdamConfig)
    bfgs: BfgsConfig = field(default_factory=BfgsConfig)

    def __post_init__(self):
        a, b = self.adam, self.bfgs
        for name, val in [("learning_rate", a.learning_rate), ("eps", a.eps), ("plateau_rel", a.plateau_rel),
                          ("c1", b.c1), ("gtol", b.gtol)]:
            if not val > 0:
                raise DomainError(f"{name} must be positive")
        if not (0 < a.beta1 < 1 and 0 < a.beta2 < 1):
            raise DomainError("ADAM betas must lie in (0, 1)")
        if a.max_epochs < 0 or b.max_iter < 0 or a.plateau_window < 1:
            raise DomainError("iteration limits must be non-negative")
        if a.max_steps is not None and a.max_steps < 0:
            raise DomainError("max_steps must be non-negative")
        if not 0 < b.c1 < b.c2 < 1:
            raise DomainError("line search constants need 0 < c1 < c2 < 1")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(AdamConfig(**d.get("adam", {})), BfgsConfig(**d.get("bfgs", {})))


@dataclass
class LearnResult:
    """Outcome of one fit.

    Attributes:
        theta_hat: Final parameters.
        final_loss: Full-batch loss at ``theta_hat``.
        loss_trace: Full-batch loss at the start of stage 2 and after each
            accepted BFGS step.
        gradient_norm_trace: Matching gradient norms.
        adam_epoch_losses: Mean mini-batch loss of each ADAM epoch.
        adam_steps, adam_epochs, bfgs_iterations: Work done per stage.
        fallback_steps: BFGS iterations that used the steepest-descent fallback.
        converged: Gradient-norm tolerance reached.
        message: Why stage 2 stopped.
    """

    theta_hat: NDArray[np.float64]
    final_loss: float
    theta_init: NDArray[np.float64]
    loss_trace: list[float]
    gradient_norm_trace: list[float]
    adam_epoch_losses: list[float]
    adam_steps: int
    adam_epochs: int
    bfgs_iterations: int
    fallback_steps: int
    converged: bool
    message: str
    wall_clock: float
    init_seed: int | None = None
    run_index: int = 0
    best: bool = False


def adam(problem: LossProblem, theta0: NDArray, cfg: AdamConfig, rng: np.random.Generator):
    """Stage 1: ADAM with one record per (time stamp, basis) cell per step.

    Each cell's records are reshuffled every epoch; an epoch visits every
    record once. Stops after ``max_epochs``, ``max_steps`` or when the epoch
    mean loss improves by less than ``plateau_rel`` over ``plateau_window``
    epochs.
    """
    ds = problem.dataset
    order = np.lexsort((np.arange(ds.d), ds.cells[:, 1], ds.cells[:, 0]))
    cell_id = ds.cells[order, 0] * ds.K + ds.cells[order, 1]
    bounds = np.flatnonzero(np.diff(cell_id)) + 1
    per_cell = np.split(order, bounds)
    steps_per_epoch = max(len(c) for c in per_cell)

    theta = theta0.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    epoch_losses: list[float] = []
    step = 0
    for _ in range(cfg.max_epochs):
        perms = [c[rng.permutation(len(c))] for c in per_cell]
        losses = []
        for i in range(steps_per_epoch):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            batch = np.array([p[i] for p in perms if i < len(p)])
            lv = problem.evaluate(theta, True, batch)
            step += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * lv.gradient
            v = cfg.beta2 * v + (1 - cfg.beta2) * lv.gradient**2
            mhat = m / (1 - cfg.beta1**step)
            vhat = v / (1 - cfg.beta2**step)
            theta = theta - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
            losses.append(lv.value)
        if losses:
            epoch_losses.append(float(np.mean(losses)))
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
        w = cfg.plateau_window
        if len(epoch_losses) > w:
            old, new = epoch_losses[-w - 1], epoch_losses[-1]
            if (old - new) < cfg.plateau_rel * abs(old):
                break
    return theta, epoch_losses, step


@dataclass
class BfgsOutcome:
    x: NDArray[np.float64]
    f: float
    g: NDArray[np.float64]
    iterations: int
    fallback_steps: int
    converged: bool
    message: str
    f_trace: list[float]
    gnorm_trace: list[float]


def bfgs(fun: Callable[[NDArray], tuple[float, NDArray]], x0: ArrayLike, cfg: BfgsConfig = BfgsConfig()) -> BfgsOutcome:
    """Full-batch BFGS with an inverse-Hessian update and a strong Wolfe line search.

    ``fun`` returns ``(value, gradient)``. When the line search fails the
    iteration falls back to a backtracking step along the negative gradient
    (counted in ``fallback_steps``). Accepted steps never increase the value.
    """
    cache: dict[bytes, tuple[float, NDArray]] = {}

    def evaluate(x):
        key = np.asarray(x, dtype=np.float64).tobytes()
        hit = cache.get(key)
        if hit is None:
            f, g = fun(np.array(x, dtype=np.float64))
            f = float(f)
            g = np.asarray(g, dtype=np.float64)
            if not np.isfinite(f) or not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite loss or gradient at {np.asarray(x).tolist()}")
            hit = (f, g)
            if len(cache) > 64:
                cache.clear()
            cache[key] = hit
        return hit

    x = np.array(x0, dtype=np.float64)
    nu = x.shape[0]
    f, g = evaluate(x)
    h = np.eye(nu)
    f_trace, gnorm_trace = [f], [float(np.linalg.norm(g))]
    fallback = 0
    message = "max_iter"
    converged = False
    it = 0
    while True:
        if gnorm_trace[-1] <= cfg.gtol:
            converged, message = True, "gtol"
            break
        if it >= cfg.max_iter:
            break
        p = -h @ g
        if not g @ p < 0:
            h = np.eye(nu)
            p = -g
        with warnings.catch_warnings():
            # a failed search is handled below by the backtracking fallback
            warnings.filterwarnings("ignore", message="The line search algorithm did not converge")
            res = line_search(lambda z: evaluate(z)[0], lambda z: evaluate(z)[1], x, p, gfk=g,
                              old_fval=f, c1=cfg.c1, c2=cfg.c2)
        alpha = res[0]
        if alpha is not None:
            x_new = x + alpha * p
            f_new, g_new = evaluate(x_new)
            if f_new > f:
                alpha = None
            else:
                x_new, f_new, g_new = _secant_refine(evaluate, x, f, g, p, alpha, x_new, f_new, g_new, cfg)
        if alpha is None:
            fallback += 1
            step = _backtrack(evaluate, x, f, g, cfg.c1)
            if step is None:
                message = "no_progress"
                break
            x_new = x + step
            f_new, g_new = evaluate(x_new)
            h = np.eye(nu)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-300:
            if it == 0 and alpha is not None:
                h = np.eye(nu) * (sy / float(y @ y))
            rho = 1.0 / sy
            hy = h @ y
            h = h + ((sy + y @ hy) * rho**2) * np.outer(s, s) - rho * (np.outer(hy, s) + np.outer(s, hy))
        x, f, g = x_new, f_new, g_new
        it += 1
        f_trace.append(f)
        gnorm_trace.append(float(np.linalg.norm(g)))
        if s @ s == 0:
            message = "no_progress"
            break
    return BfgsOutcome(x, f, g, it, fallback, converged, message, f_trace, gnorm_trace)


def _secant_refine(evaluate, x, f, g, p, alpha, x_new, f_new, g_new, cfg):
    """Move a Wolfe step to the root of the linearized directional derivative.

    Exact on quadratics, which restores the finite termination of BFGS there.
    The refined point replaces the Wolfe point only if it still satisfies the
    strong Wolfe conditions and has a lower value.
    """
    d0 = float(g @ p)
    d1 = float(g_new @ p)
    if d1 == d0:
        return x_new, f_new, g_new
    a_star = alpha * d0 / (d0 - d1)
    if not a_star > 0 or abs(a_star - alpha) <= 1e-6 * alpha:
        return x_new, f_new, g_new
    x2 = x + a_star * p
    f2, g2 = evaluate(x2)
    if f2 <= f + cfg.c1 * a_star * d0 and abs(g2 @ p) <= cfg.c2 * abs(d0) and f2 <= f_new:
        return x2, f2, g2
    return x_new, f_new, g_new


def _backtrack(evaluate, x, f, g, c1, shrink=0.5, tries=40):
    """Armijo backtracking along ``-g``; ``None`` if no decrease is found."""
    gg = float(g @ g)
    if gg == 0:
        return None
    step = 1.0 / max(1.0, np.sqrt(gg))
    for _ in range(tries):
        f_new = evaluate(x - step * g)[0]
        if f_new <= f - c1 * step * gg:
            return -step * g
        step *= shrink
    return None


def fit(dataset: Dataset, model: HamiltonianModel, theta_init: ArrayLike,
        cfg: OptimizerConfig = OptimizerConfig(), sim: SimConfig = SimConfig(),
        shuffle_seed: int | Sequence[int] = 0, problem: LossProblem | None = None) -> LearnResult:
    """Minimize the negative log-likelihood starting from ``theta_init``."""
    theta0 = np.asarray(theta_init, dtype=np.float64)
    if theta0.shape != (model.nu,):
        raise DomainError(f"theta_init must have length {model.nu}")
    problem = problem or LossProblem(dataset, model, sim)
    t0 = time.perf_counter()
    rng = np.random.default_rng(shuffle_seed)
    theta1, epoch_losses, steps = adam(problem, theta0, cfg.adam, rng)

    def fun(x):
        lv = problem._evaluate(x, problem.full, True)
        return lv.value, lv.gradient

    out = bfgs(fun, theta1, cfg.bfgs)
    log.info("fit: %d ADAM steps, %d BFGS iterations (%s), loss %.6g", steps, out.iterations,
             out.message, out.f)
    return LearnResult(
        theta_hat=out.x,
        final_loss=out.f,
        theta_init=theta0,
        loss_trace=out.f_trace,
        gradient_norm_trace=out.gnorm_trace,
        adam_epoch_losses=epoch_losses,
        adam_steps=steps,
        adam_epochs=len(epoch_losses),
        bfgs_iterations=out.iterations,
        fallback_steps=out.fallback_steps,
        converged=out.converged,
        message=out.message,
        wall_clock=time.perf_counter() - t0,
    )


def draw_inits(nu: int, count: int, init_seed: int) -> NDArray[np.float64]:
    """``count`` starting points drawn i.i.d. from ``Uniform[-2, 2]^nu``."""
    return np.random.default_rng(init_seed).uniform(INIT_LOW, INIT_HIGH, size=(count, nu))


def multi_start(dataset: Dataset, model: HamiltonianModel, inits: int, init_seed: int,
                cfg: OptimizerConfig = OptimizerConfig(), sim: SimConfig = SimConfig(),
                progress: Callable[[int, LearnResult], None] | None = None) -> list[LearnResult]:
    """Independent fits from random starts, sorted by final loss; the first is flagged best."""
    if inits < 1:
        raise DomainError("need at least one initial point")
    problem = LossProblem(dataset, model, sim)
    results = []
    for r, theta0 in enumerate(draw_inits(model.nu, inits, init_seed)):
        res = fit(dataset, model, theta0, cfg, sim, shuffle_seed=(init_seed, r), problem=problem)
        res.init_seed = init_seed
        res.run_index = r
        if progress is not None:
            progress(r, res)
        results.append(res)
    results.sort(key=lambda res: (res.final_loss, res.run_index))
    results[0] = replace(results[0], best=True)
    return results
