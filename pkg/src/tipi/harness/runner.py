"""Seeded execution of experiments, parameter sweeps and log export."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..analysis import BehaviorLog
from ..errors import ConfigError, ContractError
from ..exploration import (CovTracker, ExplorationConfig, _decentralized_model_update,
                           exploration_step, simulate_loop_tau2, simulate_onedim)
from ..plants import ChainPlant, LoopPlant, OscillatorPlant
from ..sml_core import (ControllerParams, ForwardModel, LoopState, controller_forward,
                        get_activation, model_update)
from .config import ExperimentConfig


def derive_seed(*parts: int) -> int:
    """Independent 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> 1)


def build_plant(config: ExperimentConfig):
    p = dict(config.plant)
    kind = p.pop("kind")
    p.setdefault("seed", config.seed)
    if kind == "loop":
        return LoopPlant(**p)
    if kind == "chain":
        return ChainPlant(**p)
    if kind == "oscillator":
        return OscillatorPlant(**p)
    raise ConfigError("plant.kind", f"unknown plant kind {kind!r}")


def _matrix(value, rows: int, cols: int, path: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        return float(value) * np.eye(rows, cols)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (rows, cols):
        raise ConfigError(path, f"expected a {rows}x{cols} matrix, got shape {arr.shape}")
    return arr


def _vector(value, n: int, path: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ConfigError(path, f"expected {n} entries, got {arr.size}")
    return arr


def build_loop(config: ExperimentConfig, plant):
    """Initial controller, forward model, tracker and exploration settings."""
    n, m = plant.sensor_dim, plant.motor_dim
    c = config.controller
    params = ControllerParams(_matrix(c["C0"], m, n, "controller.C0"),
                              _vector(c["h0"], m, "controller.h0"),
                              get_activation(c["activation"]))
    model = ForwardModel(_matrix(c["V0"], n, m, "controller.V0"),
                         _matrix(c["T0"], n, n, "controller.T0"),
                         _vector(c["b0"], n, "controller.b0"), c["eta_phi"])
    e = config.exploration
    try:
        ecfg = ExplorationConfig(epsilon=e["epsilon"], tau=e["tau"], alpha=e["alpha"], eta=e["eta"],
                                 mode=e["mode"], variant=e["variant"], learn_C=e["learn_C"],
                                 learn_h=e["learn_h"])
    except ContractError as exc:
        raise ConfigError("exploration", str(exc)) from exc
    lam = float(config.plant.get("lam", 0.0))
    tracker = CovTracker.create(n, ecfg.eta, lam=lam, floor=e["sigma_floor"],
                                init=e.get("sigma_init"))
    return params, model, tracker, ecfg


def _columns(n: int, m: int, extra: list[str]) -> list[str]:
    def names(prefix, k):
        return [prefix] if k == 1 else [f"{prefix}{i}" for i in range(k)]
    Cn = ["C"] if n == m == 1 else [f"C{i}_{j}" for i in range(m) for j in range(n)]
    return ["t"] + names("s", n) + names("a", m) + Cn + names("h", m) + ["tipi", "xi_norm"] + extra


def _fast_path_kind(config: ExperimentConfig):
    if not config.fast_path or config.controller["kind"] != "tipi":
        return None
    p, e = config.plant, config.exploration
    if p["kind"] != "loop" or p.get("n", 1) != 1 or e.get("freeze_after") is not None \
            or e.get("sigma_init") is not None:
        return None
    if config.controller["activation"] != "tanh":
        return None
    c = config.controller
    if e["mode"] == "onedim_deterministic" and p.get("lam", 0.0) == 0.0 and \
            c["V0"] == 1.0 and c["T0"] == 0.0 and c["b0"] == 0.0:
        return "onedim"
    if e["mode"] == "neural_tau2":
        return "tau2"
    return None


def _scalar(v) -> float:
    return float(np.asarray(v, dtype=float).reshape(-1)[0])


def _run_fast(config: ExperimentConfig, kind: str) -> BehaviorLog:
    c, e = config.controller, config.exploration
    s0 = _scalar(c["s0"]) if "s0" in c else 0.0
    if kind == "onedim":
        out = simulate_onedim(_scalar(c["C0"]), _scalar(c["h0"]), s0, e["epsilon"], config.steps,
                              learn_C=e["learn_C"], learn_h=e["learn_h"])
        xi = np.zeros(config.steps + 1)
        xi[0] = np.nan
    else:
        plant_seed = config.plant.get("seed", config.seed)
        out = simulate_loop_tau2(_scalar(c["C0"]), _scalar(c["h0"]), s0, e["epsilon"], config.steps,
                                 lam=float(config.plant.get("lam", 0.0)), seed=plant_seed,
                                 eta=e["eta"], eta_phi=c["eta_phi"], alpha=e["alpha"],
                                 V0=_scalar(c["V0"]), T0=_scalar(c["T0"]), b0=_scalar(c["b0"]),
                                 floor=e["sigma_floor"], learn_C=e["learn_C"], learn_h=e["learn_h"])
        xi = np.full(config.steps + 1, np.nan)
    t = np.arange(config.steps + 1, dtype=float)
    rows = np.column_stack([t, out["s"], out["a"], out["C"], out["h"], out["tipi"], xi])
    rows = rows[:: config.log_every]
    return BehaviorLog(_columns(1, 1, []), rows, meta={"config": config.to_dict(), "path": "fast"})


def run(config: ExperimentConfig) -> BehaviorLog:
    """Execute one experiment and return its log.

    The result is a deterministic function of the configuration (including
    its seed).  Rows are written every ``log_every`` steps starting with
    step 0.  Row ``t`` holds the sensor value ``s_t``, the action ``a_t``
    sent next, the parameters after the update of step ``t``, and the TiPI
    and residual norm of that update (``nan`` while the history is too short).
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    if config.steps == 0:
        plant = build_plant(config)
        extra = list(plant.diagnostics())
        return BehaviorLog(_columns(plant.sensor_dim, plant.motor_dim, extra), np.empty((0,)),
                           meta={"config": config.to_dict()})
    fast = _fast_path_kind(config)
    if fast is not None:
        return _run_fast(config, fast)

    plant = build_plant(config)
    params, model, tracker, ecfg = build_loop(config, plant)
    n, m = plant.sensor_dim, plant.motor_dim
    ctrl_kind = config.controller["kind"]
    rng = np.random.default_rng(derive_seed(config.seed, 7))
    freeze_after = config.exploration.get("freeze_after")
    need = 2 if ecfg.mode == "onedim_deterministic" else ecfg.tau + 1

    s0 = plant.observe()
    if s0 is None:
        s0 = _vector(config.controller.get("s0", 0.0), n, "controller.s0")
    if ctrl_kind == "noise_signal":
        s0 = rng.uniform(-1.0, 1.0, n)

    def act(s):
        if ctrl_kind == "tipi":
            return controller_forward(params, s)
        return rng.uniform(-1.0, 1.0, m)

    state = LoopState(s0, act(s0), 0, max_history=need)
    extra = list(plant.diagnostics())
    cols = _columns(n, m, extra)
    n_rows = config.steps // config.log_every + 1
    rows = np.empty((n_rows, len(cols)))
    r = 0

    def record(t, tipi, xi_norm):
        nonlocal r
        d = plant.diagnostics()
        rows[r] = np.concatenate([[t], state.s, state.a, params.C.ravel(), params.h,
                                  [tipi, xi_norm], [d[k] for k in extra]])
        r += 1

    record(0, np.nan, np.nan)
    frozen = ExplorationConfig(**{**ecfg.__dict__, "epsilon": 0.0}) if freeze_after is not None else None
    for t in range(1, config.steps + 1):
        if ctrl_kind == "noise_signal":
            s_new = rng.uniform(-1.0, 1.0, n)
        else:
            s_new = plant.step(state.a)
        state = state.advance(s_new)
        tipi = xi_norm = np.nan
        if ctrl_kind == "tipi":
            cfg = frozen if (freeze_after is not None and t > freeze_after) else ecfg
            if len(state.history) >= need:
                params, model, tracker, diag = exploration_step(state, params, model, tracker, cfg)
                tipi, xi_norm = diag.tipi, float(np.linalg.norm(diag.xi))
            elif ecfg.mode == "onedim_deterministic":
                model, xi = _decentralized_model_update(model, state.history[-2], state.a_prev, s_new)
                xi_norm = float(np.linalg.norm(xi))
            else:
                model, xi = model_update(model, state.history[-2], state.a_prev, s_new)
                xi_norm = float(np.linalg.norm(xi))
        state.a = act(s_new)
        if t % config.log_every == 0:
            record(t, tipi, xi_norm)
    meta = {"config": config.to_dict(), "path": "generic"}
    return BehaviorLog(cols, rows[:r], meta=meta)


def export(log: BehaviorLog, path, fmt: str = "csv") -> str:
    """Write ``log`` to ``path``; only CSV is supported."""
    if fmt != "csv":
        raise ContractError(f"unsupported export format {fmt!r}")
    log.to_csv(path)
    return str(path)


# ---------------------------------------------------------------------------
# sweeps

METRICS = ("displacement", "mean_tipi", "mean_abs_C")


@dataclass
class SweepSpec:
    """Sweep of one dotted config parameter over ``values`` with replicates.

    Replicate ``r`` runs with seed ``derive_seed(base.seed, r)``; the same
    replicate seed is reused across values so that values are compared on
    common random draws, while replicates never share a stream.
    ``metric_start`` is the first step included in the metric window.
    """

    base: ExperimentConfig
    parameter: str
    values: list
    replicates: int = 1
    metric: str = "displacement"
    metric_start: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ContractError("replicates must be >= 1")
        if self.metric not in METRICS:
            raise ContractError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if not self.values:
            raise ContractError("sweep needs at least one value")

    def configs(self) -> list[tuple[int, int, ExperimentConfig]]:
        out = []
        for i, v in enumerate(self.values):
            for r in range(self.replicates):
                cfg = self.base.with_overrides({self.parameter: v, "seed": derive_seed(self.base.seed, r)})
                out.append((i, r, cfg))
        return out


def sweep_metric(log: BehaviorLog, metric: str, start: int = 0) -> float:
    t = log.column("t")
    sel = t >= start
    if not np.any(sel):
        raise ContractError("metric window is empty")
    if metric == "displacement":
        if "com" not in log.columns:
            raise ContractError("displacement is only defined for plants reporting a centre of mass")
        com = log.column("com")[sel]
        return float(com[-1] - com[0])
    if metric == "mean_tipi":
        return float(np.nanmean(log.column("tipi")[sel]))
    if metric == "mean_abs_C":
        return float(np.mean(np.abs(log.block("C")[sel])))
    raise ContractError(f"unknown metric {metric!r}")


def _sweep_job(args):
    cfg, metric, start = args
    return sweep_metric(run(cfg), metric, start)


def sweep(spec: SweepSpec, threads: int = 1) -> np.ndarray:
    """Run all (value, replicate) pairs and return rows ``(value, mean, std, n)``.

    :func:`sweep_raw` gives the per-replicate metrics.  With ``threads > 1``
    runs are spread over worker processes; results are merged in index order
    so the table does not depend on scheduling.
    """
    raw = sweep_raw(spec, threads)
    return summarize(spec.values, raw)


def sweep_raw(spec: SweepSpec, threads: int = 1) -> np.ndarray:
    """Metric per (value index, replicate) as a ``len(values) x replicates`` array."""
    jobs = spec.configs()
    args = [(cfg, spec.metric, spec.metric_start) for _, _, cfg in jobs]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(_sweep_job, args))
    else:
        vals = [_sweep_job(a) for a in args]
    out = np.empty((len(spec.values), spec.replicates))
    for (i, r, _), v in zip(jobs, vals):
        out[i, r] = v
    return out


def summarize(values, raw: np.ndarray) -> np.ndarray:
    std = raw.std(axis=1, ddof=1) if raw.shape[1] > 1 else np.zeros(raw.shape[0])
    return np.column_stack([np.asarray(values, dtype=float), raw.mean(axis=1), std,
                            np.full(raw.shape[0], raw.shape[1])])


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


__all__ = ["run", "export", "SweepSpec", "sweep", "sweep_raw", "sweep_metric", "summarize",
           "build_plant", "build_loop", "derive_seed", "METRICS"]
