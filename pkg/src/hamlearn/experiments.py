"""Run configuration, error metrics and the experiment drivers behind the CLI."""

from __future__ import annotations

import copy
import dataclasses
import csv
import io
import json
import logging
import platform
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy
from numpy.typing import ArrayLike, NDArray

from . import __version__
from .data import Dataset, generate_dataset, protocol_times, random_bases, read_dataset, write_dataset
from .errors import DomainError, ParseError, ResourceError
from .hamiltonian import HeisenbergParams, draw_target, make_model
from .learner import LearnResult, LossProblem, OptimizerConfig, SimConfig, multi_start

log = logging.getLogger(__name__)

OUTLIER_THRESHOLD = 0.2

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "model": {"name": "heisenberg", "n": 6, "target_seed": 1, "theta_star": None},
    "protocol": {"J": 5, "tau": 0.2, "K": 20, "bases_seed": 3, "M": 100, "engine": "exact"},
    "simulator": {"dt": 0.05, "chi": 30},
    "optimizer": {
        "adam": {"learning_rate": 0.05, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "max_epochs": 200,
                 "max_steps": None, "plateau_window": 10, "plateau_rel": 1e-3},
        "bfgs": {"c1": 1e-4, "c2": 0.9, "gtol": 1e-7, "max_iter": 200},
    },
    "learn": {"inits": 10, "init_seed": 0, "dataset": None},
    "scaling": {"sizes": [1000, 3000, 10000, 30000, 100000], "repetitions": 1, "inits": 10,
                "engine": "tebd", "adam_max_steps": 1500},
    "landscape": {
        "params": ["h", "jz"],
        "ranges": [[-0.5, 1.5], [-1.4, 0.6]],
        "resolution": [21, 21],
        "target_h": 0.5,
        "bases": ["X", "Y", "Z"],
        "M": 1000,
        "times": [0.2, 0.4, 0.6, 0.8, 1.0],
        "dt": 0.05,
        "chi": 10,
        "max_points": 10000,
    },
    "selftest": {"corrupt": []},
}


def relative_error(theta: ArrayLike, theta_star: ArrayLike) -> float:
    """``||theta - theta*|| / ||theta*||`` in the Euclidean norm."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta.shape != theta_star.shape:
        raise DomainError("parameter vectors differ in length")
    ref = np.linalg.norm(theta_star)
    if ref == 0:
        raise DomainError("relative error undefined for theta* = 0")
    return float(np.linalg.norm(theta - theta_star) / ref)


@dataclass(frozen=True)
class ErrorRecord:
    """Summary of one fit for tabulation."""

    run: int
    init_seed: int
    final_loss: float
    loss_per_site: float
    epsilon: float | None
    outlier: bool | None
    converged: bool
    best: bool

    def __post_init__(self):
        if self.epsilon is not None:
            if self.epsilon < 0:
                raise DomainError("epsilon must be non-negative")
            if self.outlier != (self.epsilon > OUTLIER_THRESHOLD):
                raise DomainError("outlier flag disagrees with the threshold")


def error_records(results: Sequence[LearnResult], n: int, theta_star: ArrayLike | None) -> list[ErrorRecord]:
    out = []
    for r in results:
        eps = None if theta_star is None else relative_error(r.theta_hat, theta_star)
        out.append(ErrorRecord(
            run=r.run_index,
            init_seed=int(r.init_seed or 0),
            final_loss=r.final_loss,
            loss_per_site=r.final_loss / n,
            epsilon=eps,
            outlier=None if eps is None else eps > OUTLIER_THRESHOLD,
            converged=r.converged,
            best=r.best,
        ))
    return out


def loss_separates(records: Sequence[ErrorRecord]) -> bool | None:
    """Whether every non-outlier has lower loss per site than every outlier.

    ``None`` when one of the two groups is empty (nothing to separate).
    """
    good = [r.loss_per_site for r in records if r.outlier is False]
    bad = [r.loss_per_site for r in records if r.outlier]
    if not good or not bad:
        return None
    return max(good) < min(bad)


def fit_loglog_slope(d: ArrayLike, eps: ArrayLike) -> tuple[float, float]:
    """Least-squares line through ``(log d, log eps)``; returns ``(slope, intercept)``."""
    d = np.asarray(d, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if d.shape != eps.shape:
        raise DomainError("d and epsilon differ in length")
    if len(np.unique(d)) < 2:
        raise DomainError("a slope needs at least two distinct dataset sizes")
    if np.any(d <= 0) or np.any(eps <= 0):
        raise DomainError("log-log fit needs positive values")
    slope, intercept = np.polyfit(np.log(d), np.log(eps), 1)
    return float(slope), float(intercept)


# -- configuration ----------------------------------------------------------

def deep_merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        where = f"{path}{key}"
        if key not in out:
            raise ParseError(f"unknown configuration key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ParseError(f"configuration key {where!r} must be an object")
            out[key] = deep_merge(out[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value`` with ``value`` parsed as JSON when possible."""
    if "=" not in text:
        raise ParseError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip().split("."), val


def resolve_config(path: str | Path | None = None, overrides: Sequence[str] = (), seed: int | None = None) -> dict:
    """Defaults, then the config file, then ``--set`` overrides, then ``--seed``."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"configuration is not valid JSON ({exc.msg})", exc.lineno) from None
        if not isinstance(user, dict):
            raise ParseError("configuration must be a JSON object")
        cfg = deep_merge(cfg, user)
    for text in overrides:
        keys, val = parse_override(text)
        nested: Any = val
        for k in reversed(keys):
            nested = {k: nested}
        cfg = deep_merge(cfg, nested)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def _positive_int(value, name):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise DomainError(f"{name} must be a positive integer, got {value!r}")


def validate_config(cfg: dict) -> None:
    """Check every field before any computation starts."""
    if not isinstance(cfg["seed"], int):
        raise DomainError("seed must be an integer")
    m = cfg["model"]
    make_model(m["name"], m["n"])
    _positive_int(m["n"], "model.n")
    if m["theta_star"] is not None and len(m["theta_star"]) != make_model(m["name"], m["n"]).nu:
        raise DomainError("model.theta_star has the wrong length")
    p = cfg["protocol"]
    for key in ("J", "K", "M"):
        _positive_int(p[key], f"protocol.{key}")
    if not p["tau"] > 0:
        raise DomainError("protocol.tau must be positive")
    if p["engine"] not in ("exact", "tebd"):
        raise DomainError("protocol.engine must be 'exact' or 'tebd'")
    SimConfig(**cfg["simulator"])
    optimizer_config(cfg)
    _positive_int(cfg["learn"]["inits"], "learn.inits")
    s = cfg["scaling"]
    if not s["sizes"]:
        raise DomainError("scaling.sizes is empty")
    for d in s["sizes"]:
        _positive_int(d, "scaling.sizes entry")
    _positive_int(s["repetitions"], "scaling.repetitions")
    _positive_int(s["inits"], "scaling.inits")
    if s["adam_max_steps"] is not None:
        _positive_int(s["adam_max_steps"], "scaling.adam_max_steps")
    if s["engine"] not in ("exact", "tebd"):
        raise DomainError("scaling.engine must be 'exact' or 'tebd'")
    ls = cfg["landscape"]
    if len(ls["params"]) != 2 or len(ls["ranges"]) != 2 or len(ls["resolution"]) != 2:
        raise DomainError("landscape needs exactly two parameters, ranges and resolutions")
    for r in ls["resolution"]:
        _positive_int(r, "landscape.resolution entry")
    SimConfig(ls["dt"], ls["chi"])
    unknown = set(cfg["selftest"]["corrupt"]) - set(SELFTEST_SUITES)
    if unknown:
        raise DomainError(f"unknown selftest suites {sorted(unknown)}")


def optimizer_config(cfg: dict) -> OptimizerConfig:
    return OptimizerConfig.from_dict(cfg["optimizer"])


def sim_config(cfg: dict) -> SimConfig:
    return SimConfig(**cfg["simulator"])


def target_theta(cfg: dict) -> NDArray[np.float64]:
    m = cfg["model"]
    if m["theta_star"] is not None:
        return np.asarray(m["theta_star"], dtype=np.float64)
    return draw_target(m["n"], m["target_seed"]).to_theta()


# -- output helpers ---------------------------------------------------------

def fmt(x) -> str:
    """Stable text form for CSV cells."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def provenance() -> str:
    """Package and library versions plus the source revision when available."""
    rev = "unknown"
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if res.returncode == 0 and res.stdout.strip():
            rev = res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return (f"hamlearn {__version__} rev {rev}; python {platform.python_version()}; "
            f"numpy {np.__version__}; scipy {scipy.__version__}")


def prepare_outdir(out: str | Path, cfg: dict, command: str) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg)
    seeds = {"seed": cfg["seed"], "target_seed": cfg["model"]["target_seed"],
             "bases_seed": cfg["protocol"]["bases_seed"], "init_seed": cfg["learn"]["init_seed"]}
    (out / "provenance.txt").write_text(
        f"command: {command}\n{provenance()}\nseeds: {json.dumps(seeds, sort_keys=True)}\n",
        encoding="utf-8", newline="\n")
    return out


def plot_spec(path: Path, title: str, csv_name: str, x: str, y: str, series: str | None = None,
              **extra) -> None:
    spec = {"title": title, "data": csv_name, "x": x, "y": y, "series": series}
    spec.update(extra)
    write_json(path, spec)


# -- commands ---------------------------------------------------------------

def build_dataset(cfg: dict, *, M: int | None = None, seed: int | None = None, engine: str | None = None) -> Dataset:
    m, p = cfg["model"], cfg["protocol"]
    model = make_model(m["name"], m["n"])
    sim = sim_config(cfg)
    return generate_dataset(
        model, target_theta(cfg), protocol_times(p["J"], p["tau"]), (p["K"], p["bases_seed"]),
        p["M"] if M is None else M, engine or p["engine"], cfg["seed"] if seed is None else seed,
        dt=sim.dt, chi=sim.chi)


def cmd_generate(cfg: dict, out: str | Path) -> Path:
    """Write a synthetic dataset plus its configuration and provenance."""
    outdir = prepare_outdir(out, cfg, "generate")
    ds = build_dataset(cfg)
    path = outdir / "dataset.txt"
    write_dataset(ds, path)
    counts = ds.counts()
    write_csv(outdir / "counts.csv", ["j", "k", "time", "basis", "count"],
              [(j + 1, k + 1, ds.times[j], ds.bases[k], counts[j, k])
               for j in range(ds.J) for k in range(ds.K)])
    return path


def _result_rows(results: Sequence[LearnResult], records: Sequence[ErrorRecord], with_eps: bool):
    header = ["rank", "run", "init_seed", "best", "final_loss", "loss_per_site"]
    if with_eps:
        header += ["epsilon", "outlier"]
    header += ["converged", "adam_steps", "adam_epochs", "bfgs_iterations", "fallback_steps", "stop"]
    nu = len(results[0].theta_hat)
    header += [f"theta_{i}" for i in range(nu)]
    rows = []
    for rank, (res, rec) in enumerate(zip(results, records)):
        row = [rank, res.run_index, rec.init_seed, res.best, res.final_loss, rec.loss_per_site]
        if with_eps:
            row += [rec.epsilon, rec.outlier]
        row += [res.converged, res.adam_steps, res.adam_epochs, res.bfgs_iterations, res.fallback_steps,
                res.message]
        row += list(res.theta_hat)
        rows.append(row)
    return header, rows


def cmd_learn(cfg: dict, out: str | Path, dataset_path: str | Path | None = None,
              progress: Callable[[int, LearnResult], None] | None = None) -> dict:
    """Fit a dataset from several random starts and tabulate the runs."""
    outdir = prepare_outdir(out, cfg, "learn")
    dataset_path = dataset_path or cfg["learn"]["dataset"]
    ds = read_dataset(dataset_path) if dataset_path else build_dataset(cfg)
    model_name = ds.metadata.get("model", cfg["model"]["name"])
    model = make_model(model_name, ds.n)
    theta_star = ds.theta_star
    if theta_star is not None and theta_star.shape != (model.nu,):
        theta_star = None
    lc = cfg["learn"]
    results = multi_start(ds, model, lc["inits"], lc["init_seed"], optimizer_config(cfg), sim_config(cfg),
                          progress=progress)
    records = error_records(results, ds.n, theta_star)
    with_eps = theta_star is not None
    header, rows = _result_rows(results, records, with_eps)
    write_csv(outdir / "runs.csv", header, rows)
    trace_rows = []
    for res in sorted(results, key=lambda r: r.run_index):
        for e, v in enumerate(res.adam_epoch_losses):
            trace_rows.append((res.run_index, "adam", e, v, None))
        for i, (v, g) in enumerate(zip(res.loss_trace, res.gradient_norm_trace)):
            trace_rows.append((res.run_index, "bfgs", i, v, g))
    write_csv(outdir / "traces.csv", ["run", "stage", "iteration", "loss", "gradient_norm"], trace_rows)
    plot_spec(outdir / "traces.plot.json", "Loss trace per run", "traces.csv", "iteration", "loss",
              series="run", facet="stage", yscale="log")
    summary: dict[str, Any] = {"runs": len(results), "best_loss": results[0].final_loss,
                               "best_theta": [float(x) for x in results[0].theta_hat]}
    if with_eps:
        write_csv(outdir / "loss_vs_error.csv", ["run", "loss_per_site", "epsilon", "outlier"],
                  [(r.run, r.loss_per_site, r.epsilon, r.outlier) for r in records])
        plot_spec(outdir / "loss_vs_error.plot.json", "Relative error against loss per site",
                  "loss_vs_error.csv", "loss_per_site", "epsilon", series="outlier", yscale="log",
                  threshold=OUTLIER_THRESHOLD)
        summary.update(
            successes_eps_below_0_1=sum(r.epsilon < 0.1 for r in records),
            outliers=sum(bool(r.outlier) for r in records),
            separation=loss_separates(records),
            best_epsilon=records[0].epsilon,
        )
    write_json(outdir / "summary.json", summary)
    return summary


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def scaling_optimizer(cfg: dict) -> OptimizerConfig:
    """Optimizer for the scaling sweep: the ADAM stage is capped in steps.

    ADAM takes one step per record of the largest cell each epoch, so without a
    cap the stage-1 cost grows linearly with the dataset size.
    """
    opt = optimizer_config(cfg)
    cap = cfg["scaling"]["adam_max_steps"]
    if cap is None:
        return opt
    steps = cap if opt.adam.max_steps is None else min(cap, opt.adam.max_steps)
    return dataclasses.replace(opt, adam=dataclasses.replace(opt.adam, max_steps=steps))


def cmd_scaling(cfg: dict, out: str | Path, progress: Callable[[str], None] | None = None) -> dict:
    """Median relative error against dataset size and the fitted log-log slope."""
    outdir = prepare_outdir(out, cfg, "scaling")
    sc, p = cfg["scaling"], cfg["protocol"]
    if len(set(sc["sizes"])) < 2:
        raise DomainError("scaling needs at least two distinct dataset sizes")
    cells = p["J"] * p["K"]
    model = make_model(cfg["model"]["name"], cfg["model"]["n"])
    theta_star = target_theta(cfg)
    opt, sim = scaling_optimizer(cfg), sim_config(cfg)
    run_rows, point_rows, fit_d, fit_eps = [], [], [], []
    for i, d in enumerate(sc["sizes"]):
        if d % cells:
            raise DomainError(f"dataset size {d} is not a multiple of J*K = {cells}")
        m_per_cell = d // cells
        eps_all = []
        for rep in range(sc["repetitions"]):
            ds = build_dataset(cfg, M=m_per_cell, seed=derived_seed(cfg["seed"], i, rep), engine=sc["engine"])
            results = multi_start(ds, model, sc["inits"], derived_seed(cfg["learn"]["init_seed"], i, rep), opt, sim)
            for rec in error_records(results, model.n, theta_star):
                run_rows.append((d, rep, rec.run, rec.final_loss, rec.loss_per_site, rec.epsilon, rec.outlier))
                eps_all.append(rec.epsilon)
            if progress:
                progress(f"d={d} rep={rep}: best eps {min(eps_all):.4g}")
        good = [e for e in eps_all if e <= OUTLIER_THRESHOLD]
        median = float(np.median(good)) if good else None
        flagged = not good
        point_rows.append((d, m_per_cell, len(eps_all), len(good), median, flagged))
        if not flagged:
            fit_d.append(d)
            fit_eps.append(median)
    write_csv(outdir / "scaling_runs.csv", ["d", "repetition", "run", "final_loss", "loss_per_site",
                                            "epsilon", "outlier"], run_rows)
    write_csv(outdir / "scaling.csv", ["d", "M", "runs", "non_outliers", "median_epsilon", "excluded"],
              point_rows)
    if len(fit_d) < 2:
        excluded = [row[0] for row in point_rows if row[5]]
        raise DomainError(f"slope undefined: only {len(fit_d)} usable dataset sizes "
                          f"(all runs were outliers at d = {excluded})")
    slope, intercept = fit_loglog_slope(fit_d, fit_eps)
    write_csv(outdir / "slope.csv", ["slope", "intercept", "points"], [(slope, intercept, len(fit_d))])
    plot_spec(outdir / "scaling.plot.json", "Median relative error against dataset size", "scaling.csv",
              "d", "median_epsilon", xscale="log", yscale="log", fit={"slope": slope, "intercept": intercept})
    summary = {"slope": slope, "intercept": intercept, "points": len(fit_d),
               "excluded": [row[0] for row in point_rows if row[5]]}
    write_json(outdir / "summary.json", summary)
    return summary


def slice_theta(theta_star: NDArray, names: Sequence[str], param: str, value: float) -> NDArray:
    """Set one slice coordinate; ``"h"`` sets every field component at once."""
    theta = theta_star.copy()
    if param == "h":
        idx = [i for i, nm in enumerate(names) if nm.startswith("h_")]
    elif param in names:
        idx = [names.index(param)]
    else:
        raise DomainError(f"unknown slice parameter {param!r}")
    theta[idx] = value
    return theta


def landscape_target(cfg: dict) -> NDArray[np.float64]:
    """Target of the landscape scan: fixed couplings and a uniform field."""
    n = cfg["model"]["n"]
    base = draw_target(n, cfg["model"]["target_seed"])
    return HeisenbergParams(base.jx, base.jy, base.jz, (float(cfg["landscape"]["target_h"]),) * n).to_theta()


def landscape_grid(cfg: dict, ds: Dataset | None = None):
    """Loss on the two-parameter grid; returns ``(axes, values, theta_star)``."""
    ls = cfg["landscape"]
    npts = ls["resolution"][0] * ls["resolution"][1]
    if npts > ls["max_points"]:
        raise ResourceError(f"landscape grid of {npts} points exceeds the cap of {ls['max_points']}")
    model = make_model(cfg["model"]["name"], cfg["model"]["n"])
    theta_star = landscape_target(cfg)
    sim = SimConfig(ls["dt"], ls["chi"])
    if ds is None:
        bases = [b * model.n for b in ls["bases"]]
        ds = generate_dataset(model, theta_star, ls["times"], bases, ls["M"], "exact", cfg["seed"])
    problem = LossProblem(ds, model, sim)
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(ls["ranges"], ls["resolution"])]
    values = np.empty((len(axes[0]), len(axes[1])))
    for a, x in enumerate(axes[0]):
        for b, y in enumerate(axes[1]):
            theta = slice_theta(slice_theta(theta_star, model.theta_names, ls["params"][0], x),
                                model.theta_names, ls["params"][1], y)
            values[a, b] = problem.evaluate(theta, with_grad=False).value
    return axes, values, theta_star


def cmd_landscape(cfg: dict, out: str | Path) -> dict:
    """Loss on a two-parameter slice through the target, with argmin and target cells marked."""
    outdir = prepare_outdir(out, cfg, "landscape")
    ls = cfg["landscape"]
    axes, values, theta_star = landscape_grid(cfg)
    model = make_model(cfg["model"]["name"], cfg["model"]["n"])
    star = [_slice_value(theta_star, model.theta_names, p) for p in ls["params"]]
    star_cell = [int(np.argmin(np.abs(ax - s))) for ax, s in zip(axes, star)]
    arg = np.unravel_index(int(np.argmin(values)), values.shape)
    rows = []
    for a, x in enumerate(axes[0]):
        for b, y in enumerate(axes[1]):
            rows.append((a, b, x, y, values[a, b], (a, b) == tuple(arg), [a, b] == star_cell))
    p0, p1 = ls["params"]
    write_csv(outdir / "landscape.csv", ["i", "j", p0, p1, "loss", "argmin", "target"], rows)
    plot_spec(outdir / "landscape.plot.json", f"Loss over ({p0}, {p1})", "landscape.csv", p0, p1,
              z="loss", kind="heatmap", markers={"argmin": "argmin", "target": "target"})
    summary = {"argmin_cell": [int(arg[0]), int(arg[1])], "target_cell": star_cell,
               "argmin": [float(axes[0][arg[0]]), float(axes[1][arg[1]])], "target": star,
               "min_loss": float(values[arg])}
    write_json(outdir / "summary.json", summary)
    return summary


def _slice_value(theta: NDArray, names: Sequence[str], param: str) -> float:
    if param == "h":
        return float(np.mean([theta[i] for i, nm in enumerate(names) if nm.startswith("h_")]))
    return float(theta[list(names).index(param)])


# -- self test --------------------------------------------------------------

def _suite_svd(rng):
    from .linalg_ad import svd_jvp_stack

    worst = 0.0
    for n, m in [(12, 12), (10, 14), (14, 10)]:
        a = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
        da = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
        u, s, vh, _ = svd_jvp_stack(np.stack([a, da]))
        h = 1e-5
        up, sp_, vhp, _ = svd_jvp_stack((a + h * da)[None])
        um, sm, vhm, _ = svd_jvp_stack((a - h * da)[None])
        for exact, plus, minus in [(u, up, um), (s, sp_, sm), (vh, vhp, vhm)]:
            fd = (plus[0] - minus[0]) / (2 * h)
            worst = max(worst, float(np.linalg.norm(fd - exact[1]) / np.linalg.norm(exact[1])))
    return worst, 1e-6


def _suite_tebd(rng):
    from .data import exact_evolve
    from .hamiltonian import HeisenbergModel
    from .mps import product_state
    from .tebd import evolve

    model = HeisenbergModel(6)
    theta = draw_target(6, 1).to_theta()
    psi = evolve(product_state(6, 64), model, theta, [1.0], dt=0.01, chi=64)[0]
    ex = exact_evolve(model, theta, 1.0)
    return float(1 - abs(np.vdot(ex.vector, psi.to_dense()))), 1e-4


def _suite_sampling(rng):
    from .data import exact_evolve
    from .hamiltonian import HeisenbergModel

    model = HeisenbergModel(4)
    theta = draw_target(4, 2).to_theta()
    basis = "XYZX"
    ds = generate_dataset(model, theta, [0.5], [basis], 100000, "exact", 5)
    idx = ds.samples @ (1 << np.arange(3, -1, -1))
    freq = np.bincount(idx, minlength=16) / ds.d
    p = exact_evolve(model, theta, 0.5).probabilities(basis)
    return float(0.5 * np.abs(freq - p).sum()), 0.01


def _suite_score(rng):
    from .hamiltonian import HeisenbergModel
    from .learner import score_mean_exact

    model = HeisenbergModel(3)
    theta = draw_target(3, 4).to_theta()
    bases = random_bases(3, 4, 6)
    return float(np.max(np.abs(score_mean_exact(model, theta, [0.2, 0.4], bases)))), 1e-8


def _suite_gradient(rng):
    from .hamiltonian import HeisenbergModel

    model = HeisenbergModel(4)
    theta = draw_target(4, 3).to_theta()
    ds = generate_dataset(model, theta, [0.2, 0.4], (3, 8), 20, "exact", 9)
    problem = LossProblem(ds, model, SimConfig(0.05, 16))
    x = theta + rng.uniform(-0.3, 0.3, size=theta.shape)
    g = problem.evaluate(x).gradient
    h = 1e-6
    fd = np.array([(problem.evaluate(x + h * e, False).value - problem.evaluate(x - h * e, False).value) / (2 * h)
                   for e in np.eye(model.nu)])
    return float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1e-3))), 1e-5


SELFTEST_SUITES: dict[str, Callable] = {
    "svd_jvp": _suite_svd,
    "tebd_exact": _suite_tebd,
    "sampling_tv": _suite_sampling,
    "score_mean": _suite_score,
    "gradient": _suite_gradient,
}


def run_selftest(corrupt: Sequence[str] = (), seed: int = 0) -> list[tuple[str, float, float, bool]]:
    """Run every oracle suite; ``corrupt`` names suites whose tolerance is forced to zero."""
    rows = []
    for name, suite in SELFTEST_SUITES.items():
        metric, tol = suite(np.random.default_rng([seed, len(rows)]))
        if name in corrupt:
            tol = 0.0
        rows.append((name, metric, tol, bool(metric <= tol)))
    return rows


def cmd_selftest(cfg: dict, out: str | Path) -> list[tuple[str, float, float, bool]]:
    outdir = prepare_outdir(out, cfg, "selftest")
    rows = run_selftest(cfg["selftest"]["corrupt"], cfg["seed"])
    write_csv(outdir / "selftest.csv", ["suite", "metric", "tolerance", "pass"], rows)
    return rows
