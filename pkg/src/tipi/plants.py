"""Closed-loop environments.

``LoopPlant``
    The idealised loop ``s_t = a_{t-1} + lam * noise``.
``ChainPlant``
    Point masses on a line joined by actuated spring-dampers, with
    direction-dependent ground friction, so that internal oscillations can
    turn into net travel.  It stands in for an underactuated crawling robot.
``OscillatorPlant``
    A damped harmonic oscillator driven by the action, hosting a latent mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, PlantInstabilityError


def _action(a, m: int) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (m,):
        raise ContractError(f"action has shape {a.shape}, expected ({m},)")
    return a


# ---------------------------------------------------------------------------

@dataclass
class LoopPlant:
    """Identity world with additive Gaussian sensor noise of amplitude ``lam``."""

    n: int = 1
    lam: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError(f"noise amplitude must be >= 0, got {self.lam}")
        self.rng = np.random.default_rng(self.seed)

    @property
    def sensor_dim(self) -> int:
        return self.n

    @property
    def motor_dim(self) -> int:
        return self.n

    def observe(self) -> None:
        return None

    def diagnostics(self) -> dict[str, float]:
        return {}

    def step(self, a) -> np.ndarray:
        return loop_step(self, a)


def loop_step(plant: LoopPlant, a) -> np.ndarray:
    """``s = a + lam * xi`` with ``xi`` standard normal per channel.

    A draw is consumed every step, also when ``lam`` is zero, so runs that
    differ only in ``lam`` see the same noise sequence.
    """
    a = _action(a, plant.n)
    return a + plant.lam * plant.rng.standard_normal(plant.n)


# ---------------------------------------------------------------------------

@dataclass
class ChainPlant:
    """Frictional mass-spring chain.

    ``N`` masses sit on a line (optionally inclined); neighbours are joined by
    ``N - 1`` spring-dampers whose rest lengths are servo-driven towards the
    commanded targets ``L0 + amp * a``.  Spring forces are capped at
    ``f_max`` so that the chain is underactuated.  Ground contact applies
    Coulomb friction ``mu * F_normal * tanh(v / v_eps)`` with a small
    coefficient for forward (positive) motion and a large one backwards, plus
    optional viscous drag ``drag * v`` (a muddy floor).  With ``stiction``
    a mass whose velocity the friction impulse of one substep can cancel is
    brought to rest exactly, so statically loaded contacts hold instead of
    creeping at a rate set by the regularisation.  Sensors report the
    spring lengths as ``clip((length - L0) / amp, -1, 1)``.

    Integration uses ``n_sub`` substeps of size ``dt`` per control step.
    Spring forces are explicit; friction and drag are linearly implicit in
    the velocity, which keeps the stiff regularised friction stable without
    tiny steps.  Mass-specific friction coefficients can be supplied through
    ``mu_forward_per_mass`` / ``mu_backward_per_mass``.

    The initial spring lengths are ``L0 + amp * init_spread * U(-1/2, 1/2)``
    drawn from ``seed``, plus ``amp * init_perturbation * U(-1, 1)`` drawn
    from ``perturbation_seed``; velocities start at zero.
    """

    N: int = 6
    mass: float = 1.0
    k: float = 40.0
    c: float = 4.0
    L0: float = 1.0
    amp: float = 0.3
    f_max: float = 6.0
    t_servo: float = 0.05
    mu_forward: float = 0.05
    mu_backward: float = 0.4
    gravity: float = 9.81
    slope: float = 0.0
    drag: float = 0.0
    v_eps: float = 1e-3
    stiction: bool = True
    dt: float = 0.01
    n_sub: int = 10
    init_spread: float = 1.0
    init_perturbation: float = 0.0
    seed: int = 0
    perturbation_seed: int = 1
    mu_forward_per_mass: list | None = None
    mu_backward_per_mass: list | None = None
    audit: bool = False
    check_stability: bool = True

    def __post_init__(self):
        if self.N < 2:
            raise ContractError("a chain needs at least two masses")
        if not (self.dt > 0 and self.n_sub >= 1 and self.mass > 0 and self.amp > 0):
            raise ContractError("dt, n_sub, mass and amp must be positive")
        if not 0 <= self.mu_forward <= self.mu_backward:
            raise ContractError("friction must satisfy 0 <= mu_forward <= mu_backward")
        self.muf = list(self.mu_forward_per_mass or [self.mu_forward] * self.N)
        self.mub = list(self.mu_backward_per_mass or [self.mu_backward] * self.N)
        if len(self.muf) != self.N or len(self.mub) != self.N:
            raise ContractError("per-mass friction lists must have N entries")
        theta = math.atan(self.slope)
        self.f_normal = self.mass * self.gravity * math.cos(theta)
        self.f_ext = -self.mass * self.gravity * math.sin(theta)
        if self.check_stability:
            stability_probe(self)
        self.reset()

    # -- state ------------------------------------------------------------
    @property
    def sensor_dim(self) -> int:
        return self.N - 1

    @property
    def motor_dim(self) -> int:
        return self.N - 1

    def reset(self) -> None:
        n = self.N - 1
        lens = self.L0 + self.amp * self.init_spread * np.random.default_rng(self.seed).uniform(-0.5, 0.5, n)
        if self.init_perturbation:
            lens = lens + self.amp * self.init_perturbation * \
                np.random.default_rng(self.perturbation_seed).uniform(-1, 1, n)
        self.x = [0.0] + np.cumsum(lens).tolist()
        self.v = [0.0] * self.N
        self.rest = lens.tolist()
        self.t = 0
        self.last_audit_error = 0.0
        self.com0 = self.com()

    def com(self) -> float:
        return sum(self.x) / self.N

    def displacement(self) -> float:
        """Centre-of-mass travel since the last reset."""
        return self.com() - self.com0

    def lengths(self) -> np.ndarray:
        x = self.x
        return np.array([x[i + 1] - x[i] for i in range(self.N - 1)])

    def observe(self) -> np.ndarray:
        return np.clip((self.lengths() - self.L0) / self.amp, -1.0, 1.0)

    def momentum(self) -> float:
        return self.mass * sum(self.v)

    def energy(self) -> float:
        """Kinetic plus spring energy (relative to the current rest lengths)."""
        x, r = self.x, self.rest
        pot = sum(0.5 * self.k * (x[i + 1] - x[i] - r[i]) ** 2 for i in range(self.N - 1))
        return 0.5 * self.mass * sum(v * v for v in self.v) + pot

    def diagnostics(self) -> dict[str, float]:
        return {"com": self.com()}

    def step(self, a) -> np.ndarray:
        return chain_step(self, a)

    # -- integration ------------------------------------------------------
    def _substeps(self, targets: list, n_sub: int, friction: bool = True) -> float:
        """Advance ``n_sub`` substeps; returns the summed external impulse."""
        x, v, r = self.x, self.v, self.rest
        N, dt, m = self.N, self.dt, self.mass
        ks = dt / self.t_servo
        k, c, fmax = self.k, self.c, self.f_max
        muf, mub, fn, fext = self.muf, self.mub, self.f_normal, self.f_ext
        veps, drag, stick = self.v_eps, self.drag, self.stiction
        impulse = 0.0
        for _ in range(n_sub):
            F = [fext] * N
            for i in range(N - 1):
                r[i] += ks * (targets[i] - r[i])
                f = k * (x[i + 1] - x[i] - r[i]) + c * (v[i + 1] - v[i])
                if f > fmax:
                    f = fmax
                elif f < -fmax:
                    f = -fmax
                F[i] += f
                F[i + 1] -= f
            for i in range(N):
                vs = v[i] + dt * F[i] / m
                if friction:
                    beta = dt * (muf[i] if vs >= 0.0 else mub[i]) * fn / m
                if friction and stick and -beta <= vs <= beta:
                    vn = 0.0
                elif friction:
                    th = math.tanh(v[i] / veps)
                    sl = (1.0 - th * th) / veps
                    vn = (vs - beta * th + beta * sl * v[i]) / (1.0 + beta * sl + dt * drag / m)
                else:
                    vn = vs
                impulse += m * (vn - vs) + dt * fext
                v[i] = vn
                x[i] += dt * vn
        return impulse


def chain_step(plant: ChainPlant, a) -> np.ndarray:
    """Apply target rest lengths ``L0 + amp * a`` for one control step.

    Returns the normalised spring lengths.  With ``plant.audit`` set, the
    momentum change is compared with the external impulse (friction, drag,
    gravity) and a :class:`PlantInstabilityError` is raised on mismatch.
    """
    a = _action(a, plant.N - 1)
    targets = (plant.L0 + plant.amp * np.clip(a, -1.0, 1.0)).tolist()
    if plant.audit:
        p0 = plant.momentum()
        J = plant._substeps(targets, plant.n_sub)
        err = abs(plant.momentum() - p0 - J)
        plant.last_audit_error = err
        if err > 1e-9:
            raise PlantInstabilityError(f"momentum audit failed: mismatch {err:.3g}")
    else:
        plant._substeps(targets, plant.n_sub)
    plant.t += 1
    return plant.observe()


def stability_probe(plant: ChainPlant, n_sub: int = 400) -> None:
    """Reject step sizes for which the frictionless chain gains energy.

    The probe stretches the first spring, holds the rest lengths fixed and
    integrates without friction or slope; with a stable integrator the
    mechanical energy cannot grow.
    """
    probe = ChainPlant(**{**_fields(plant), "check_stability": False, "audit": False, "slope": 0.0})
    probe.x[1] += 0.5 * plant.amp
    targets = list(probe.rest)
    probe.t_servo = float("inf")
    e0 = probe.energy()
    peak = e0
    for _ in range(n_sub):
        probe._substeps(targets, 1, friction=False)
        e = probe.energy()
        if not math.isfinite(e):
            break
        peak = max(peak, e)
    if not math.isfinite(peak) or peak > 1.5 * e0 + 1e-12:
        raise PlantInstabilityError(
            f"time step dt={plant.dt} is unstable for k={plant.k}, mass={plant.mass}")


def _fields(plant) -> dict:
    return {f: getattr(plant, f) for f in plant.__dataclass_fields__}


# ---------------------------------------------------------------------------

@dataclass
class OscillatorPlant:
    """Damped harmonic oscillator ``x'' = -2 zeta w0 x' - w0^2 x + gain * a``.

    The state is advanced exactly over each control step of length ``dt``
    with the action held constant.  The sensor is the position plus
    ``lam`` times standard normal noise.
    """

    omega0: float = 1.0
    zeta: float = 0.05
    gain: float = 1.0
    lam: float = 0.0
    dt: float = 0.1
    seed: int = 0
    x0: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        if self.omega0 <= 0 or self.zeta < 0 or self.dt <= 0:
            raise ContractError("omega0 and dt must be positive and zeta nonnegative")
        w, z = self.omega0, self.zeta
        A = np.array([[0.0, 1.0], [-w * w, -2.0 * z * w]])
        aug = np.zeros((3, 3))
        aug[:2, :2] = A
        aug[1, 2] = self.gain
        E = expm(aug * self.dt)
        self.Phi = E[:2, :2]
        self.Gamma = E[:2, 2]
        self.rng = np.random.default_rng(self.seed)
        self.state = np.array([self.x0, self.v0], dtype=float)

    @property
    def sensor_dim(self) -> int:
        return 1

    @property
    def motor_dim(self) -> int:
        return 1

    def energy(self) -> float:
        x, v = self.state
        return 0.5 * v * v + 0.5 * self.omega0 ** 2 * x * x

    def observe(self) -> np.ndarray:
        return self.state[:1].copy()

    def diagnostics(self) -> dict[str, float]:
        return {"position": float(self.state[0])}

    def step(self, a) -> np.ndarray:
        return oscillator_step(self, a)


def oscillator_step(plant: OscillatorPlant, a) -> np.ndarray:
    a = _action(a, 1)
    plant.state = plant.Phi @ plant.state + plant.Gamma * a[0]
    return plant.state[:1] + plant.lam * plant.rng.standard_normal(1)


__all__ = ["LoopPlant", "ChainPlant", "OscillatorPlant", "loop_step", "chain_step",
           "oscillator_step", "stability_probe"]
