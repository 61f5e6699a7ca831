"""Named experiment presets and the multi-run studies built on them."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..analysis import (Dendrogram, dimension_curve, distance_matrix, hierarchical_cluster,
                        param_distance)
from ..errors import ContractError
from .config import ExperimentConfig
from .runner import SweepSpec, derive_seed, run

FIG4A = {
    "name": "fig4a", "seed": 0, "steps": 200_000, "log_every": 1,
    "plant": {"kind": "loop", "lam": 0.0},
    "controller": {"C0": 1.2, "h0": 0.1, "s0": 0.8},
    "exploration": {"mode": "onedim_deterministic", "epsilon": 0.002, "learn_C": False},
}

# A run started exactly at C = 0 never leaves it (the C update is proportional
# to C there); an infinitesimal positive start reproduces the rise from zero.
FIG4B = {
    "name": "fig4b", "seed": 0, "steps": 500_000, "log_every": 1,
    "plant": {"kind": "loop", "lam": 0.0},
    "controller": {"C0": 1e-6, "h0": 0.1, "s0": 0.8},
    "exploration": {"mode": "onedim_deterministic", "epsilon": 0.002},
}

# Same start through the noisy two-step neural rule; the sign that C settles
# on is picked by the noise.
FIG4B_NOISY = {
    "name": "fig4b-noisy", "seed": 0, "steps": 500_000, "log_every": 1,
    "plant": {"kind": "loop", "lam": 1e-3},
    "controller": {"C0": 0.0, "h0": 0.1, "s0": 0.8},
    "exploration": {"mode": "neural_tau2", "epsilon": 0.002, "eta": 0.01},
}

CHAIN_DECENTRALIZED = {
    "name": "chain", "seed": 0, "steps": 4000, "log_every": 10,
    "plant": {"kind": "chain", "N": 6},
    "controller": {"C0": 1.2, "V0": 1.0, "eta_phi": 0.01},
    "exploration": {"mode": "onedim_deterministic", "epsilon": 0.01},
}

CHAIN_SWEEP_VALUES = [0.0] + [float(v) for v in np.logspace(-4, -1.5, 6)]
CHAIN_SWEEP = {
    "base": CHAIN_DECENTRALIZED, "parameter": "exploration.epsilon",
    "values": CHAIN_SWEEP_VALUES, "replicates": 10, "metric": "displacement",
    "metric_start": 1000,
}

CHAIN_JOINT = {
    "name": "chain-joint", "seed": 0, "steps": 12000, "log_every": 1,
    "plant": {"kind": "chain", "N": 7, "stiction": False},
    "controller": {"C0": 1.2, "V0": 1.0, "eta_phi": 0.1},
    "exploration": {"mode": "neural_tau2", "epsilon": 0.01, "eta": 0.01, "sigma_init": 1e-2},
}

DIMENSION_VARIANTS = {
    "noise-signal": {"controller.kind": "noise_signal"},
    "noise-control": {"controller.kind": "noise_control"},
    "tipi-small": {"exploration.epsilon": 0.01},
    "tipi-large": {"exploration.epsilon": 0.03},
    "fixed": {"exploration.epsilon": 0.0},
}
DIMENSION_CHUNKS = [10, 30, 100, 300, 1000]
DIMENSION_BURN_IN = 2000

ENVIRONMENTS = {"dry": {"plant.drag": 0.0}, "mud": {"plant.drag": 120.0},
                "heavy-mud": {"plant.drag": 500.0}}
INITIAL_CONDITIONS = [0.0, 0.005, 0.05]
CLUSTER_BASE = {
    "name": "environment", "seed": 0, "steps": 4000, "log_every": 10,
    "plant": {"kind": "chain", "N": 7},
    "controller": {"C0": 1.2, "V0": 1.0, "eta_phi": 0.01},
    "exploration": {"mode": "onedim_deterministic", "epsilon": 0.003},
}
CLUSTER_AVERAGE_FROM = 800


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str          # "run", "sweep" or "study"
    description: str
    data: dict


PRESETS = {
    "fig4a": Preset("fig4a", "run", "1-D loop, fixed C=1.2: self-induced hysteresis oscillation", FIG4A),
    "fig4b": Preset("fig4b", "run", "1-D loop, full C and h dynamics from C0=0+", FIG4B),
    "fig4b-noisy": Preset("fig4b-noisy", "run", "1-D loop, noisy two-step neural rule from C0=0",
                          FIG4B_NOISY),
    "chain-sweep": Preset("chain-sweep", "sweep",
                          "decentralized chain: travelled distance versus epsilon", CHAIN_SWEEP),
    "dimension-study": Preset("dimension-study", "study",
                              "effective dimension curves on the 6-D chain", CHAIN_JOINT),
    "environment-clustering": Preset("environment-clustering", "study",
                                     "controller-matrix clustering across ground conditions",
                                     CLUSTER_BASE),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


def preset_config(name: str, seed: int | None = None) -> ExperimentConfig:
    p = get_preset(name)
    if p.kind != "run":
        data = p.data["base"] if p.kind == "sweep" else p.data
    else:
        data = p.data
    cfg = ExperimentConfig.from_dict(copy.deepcopy(data))
    return cfg if seed is None else cfg.with_overrides({"seed": seed})


def preset_sweep(name: str = "chain-sweep", seed: int | None = None) -> SweepSpec:
    p = get_preset(name)
    if p.kind != "sweep":
        raise ContractError(f"preset {name!r} is not a sweep")
    d = p.data
    base = preset_config(name, seed)
    return SweepSpec(base, d["parameter"], list(d["values"]), d["replicates"], d["metric"],
                     d["metric_start"])


# ---------------------------------------------------------------------------
# studies

def dimension_study(seed: int = 0, steps: int | None = None, chunk_lengths=None,
                    variants: dict | None = None,
                    burn_in: int = DIMENSION_BURN_IN) -> dict[str, np.ndarray]:
    """Effective-dimension curve of the sensor series for each variant.

    The first ``burn_in`` steps are discarded.  Returns
    ``{variant: rows (length, mean, std)}``.
    """
    chunk_lengths = chunk_lengths or DIMENSION_CHUNKS
    variants = variants or DIMENSION_VARIANTS
    base = preset_config("dimension-study", seed)
    if steps is not None:
        base = base.with_overrides({"steps": steps})
    out = {}
    for name, ov in variants.items():
        log = run(base.with_overrides(ov))
        out[name] = dimension_curve(log.block("s")[1 + burn_in:], chunk_lengths)
    return out


@dataclass
class ClusteringResult:
    labels: list[str]
    truth: np.ndarray
    assignment: np.ndarray
    distances: np.ndarray
    dendrogram: Dendrogram
    mean_abs_C: list

    @property
    def recovered(self) -> bool:
        """True when the 3-cluster cut reproduces the environment partition exactly."""
        return partitions_equal(self.truth, self.assignment)


def partitions_equal(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def time_averaged_abs_C(log, start: int = 0) -> np.ndarray:
    t = log.column("t")
    return np.abs(log.block("C")[t >= start]).mean(axis=0)


def environment_clustering(repetition: int, environments: dict | None = None,
                           initial_conditions=None, steps: int | None = None,
                           linkage: str = "average") -> ClusteringResult:
    """Run every (environment, initial condition) pair and cluster the controllers.

    All runs of one repetition share the base pose drawn from the
    repetition seed; initial conditions differ by a perturbation of that
    pose whose size is given in ``initial_conditions`` (fraction of the
    actuation range).  The distance between two runs is
    :func:`~tipi.analysis.param_distance` of their time-averaged ``|C|``.
    """
    environments = environments or ENVIRONMENTS
    initial_conditions = INITIAL_CONDITIONS if initial_conditions is None else initial_conditions
    base = preset_config("environment-clustering", repetition)
    if steps is not None:
        base = base.with_overrides({"steps": steps})
    pert_seed = derive_seed(repetition, 77)
    labels, truth, Cs = [], [], []
    for e, (env, ov) in enumerate(environments.items()):
        for k, pert in enumerate(initial_conditions):
            cfg = base.with_overrides({**ov, "plant.init_perturbation": pert,
                                       "plant.perturbation_seed": pert_seed})
            Cs.append(time_averaged_abs_C(run(cfg), CLUSTER_AVERAGE_FROM if steps is None
                                          else steps // 5))
            labels.append(f"{env}-{k}")
            truth.append(e)
    D = distance_matrix(Cs, param_distance)
    dend = hierarchical_cluster(D, labels, linkage)
    assignment = dend.cut(len(environments))
    return ClusteringResult(labels, np.array(truth), assignment, D, dend,
                            [float(c.mean()) for c in Cs])


__all__ = ["PRESETS", "Preset", "get_preset", "preset_config", "preset_sweep", "dimension_study",
           "environment_clustering", "ClusteringResult", "partitions_equal",
           "time_averaged_abs_C", "ENVIRONMENTS", "INITIAL_CONDITIONS", "DIMENSION_VARIANTS",
           "DIMENSION_CHUNKS", "CHAIN_SWEEP_VALUES"]
