"""Sensorimotor-loop maps.

The loop consists of a single-layer controller ``a = K(s) = g(C s + h)`` and a
linear forward model ``phi(s, a) = V a + T s + b`` that predicts the next
sensor reading.  Their composition ``psi(s) = phi(s, K(s))`` is the
deterministic part of the closed-loop dynamics, and its Jacobian
``L = V G'(z) C + T`` drives both the TiPI estimate and the exploration
gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError

ArrayFn = Callable[[np.ndarray], np.ndarray]


def _tanh_d1(z):
    g = np.tanh(z)
    return 1.0 - g * g


def _tanh_d2(z):
    g = np.tanh(z)
    return -2.0 * g * (1.0 - g * g)


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with explicit first and second derivatives.

    Attributes
    ----------
    name : str
        Identifier used in configs and logs.
    g, dg, d2g : callable
        The function and its first two derivatives, vectorised over arrays.
    gamma_factor : callable, optional
        Closed form of ``-g''(z) / (g'(z) g(z))`` when it is known.  It lets
        the exploration rule avoid a division that is singular where
        ``g(z) = 0``.  For tanh it is the constant 2.
    """

    name: str
    g: ArrayFn
    dg: ArrayFn
    d2g: ArrayFn
    gamma_factor: ArrayFn | None = None

    @staticmethod
    def custom(name: str, g: ArrayFn, dg: ArrayFn, d2g: ArrayFn,
               gamma_factor: ArrayFn | None = None) -> "Activation":
        return Activation(name, g, dg, d2g, gamma_factor)


TANH = Activation(
    name="tanh",
    g=np.tanh,
    dg=_tanh_d1,
    d2g=_tanh_d2,
    gamma_factor=lambda z: np.full(np.shape(z), 2.0),
)

ACTIVATIONS = {"tanh": TANH}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ContractError(f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}") from None


def _as_vector(x, n: int, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (n,):
        raise ContractError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def _require_finite(what: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ContractError(f"{what} contains non-finite entries")


@dataclass
class ControllerParams:
    """Controller ``K(s) = g(C s + h)`` with ``C`` of shape (m, n)."""

    C: np.ndarray
    h: np.ndarray
    activation: Activation = TANH

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if self.h.shape[0] != self.C.shape[0]:
            raise ContractError(
                f"bias length {self.h.shape[0]} does not match C rows {self.C.shape[0]}")
        _require_finite("controller parameters", self.C, self.h)

    @property
    def n(self) -> int:
        return self.C.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @classmethod
    def zeros(cls, n: int, m: int, activation: Activation = TANH) -> "ControllerParams":
        return cls(np.zeros((m, n)), np.zeros(m), activation)

    def copy(self) -> "ControllerParams":
        return ControllerParams(self.C.copy(), self.h.copy(), self.activation)


@dataclass
class ForwardModel:
    """Linear predictor ``phi(s, a) = V a + T s + b`` trained online."""

    V: np.ndarray
    T: np.ndarray
    b: np.ndarray
    eta_phi: float = 0.01

    def __post_init__(self):
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        self.T = np.atleast_2d(np.asarray(self.T, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        n = self.V.shape[0]
        if self.T.shape != (n, n) or self.b.shape != (n,):
            raise ContractError(
                f"inconsistent forward model shapes V{self.V.shape} T{self.T.shape} b{self.b.shape}")
        if not self.eta_phi > 0:
            raise ContractError(f"eta_phi must be positive, got {self.eta_phi}")
        _require_finite("forward model", self.V, self.T, self.b)

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[1]

    @classmethod
    def identity(cls, n: int, eta_phi: float = 0.01) -> "ForwardModel":
        """Model that predicts ``s' = a`` (requires m == n)."""
        return cls(np.eye(n), np.zeros((n, n)), np.zeros(n), eta_phi)

    def copy(self) -> "ForwardModel":
        return ForwardModel(self.V.copy(), self.T.copy(), self.b.copy(), self.eta_phi)


@dataclass
class LoopState:
    """Current sensor value ``s``, the action ``a = K(s)`` and the step index.

    ``history`` keeps the most recent sensor vectors (oldest first, ending
    with ``s``) and ``a_prev`` the action that produced ``s``; both are what
    the exploration step needs to form its error terms.
    """

    s: np.ndarray
    a: np.ndarray
    t: int = 0
    history: list = field(default_factory=list)
    a_prev: np.ndarray | None = None
    max_history: int = 8

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float).reshape(-1)
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        if not self.history:
            self.history = [self.s]

    def advance(self, s_new) -> "LoopState":
        """State after the plant answered the current action with ``s_new``."""
        s_new = np.asarray(s_new, dtype=float).reshape(-1)
        if s_new.shape != self.s.shape:
            raise ContractError(f"sensor vector has shape {s_new.shape}, expected {self.s.shape}")
        hist = (self.history + [s_new])[-self.max_history:]
        return LoopState(s_new, self.a, self.t + 1, hist, self.a, self.max_history)


def check_dims(params: ControllerParams, model: ForwardModel) -> None:
    if model.n != params.n or model.m != params.m:
        raise ContractError(
            f"controller is {params.m}x{params.n} but model expects n={model.n}, m={model.m}")


def controller_forward(params: ControllerParams, s) -> np.ndarray:
    """Return the action ``g(C s + h)``."""
    s = _as_vector(s, params.n, "sensor vector")
    return params.activation.g(params.C @ s + params.h)


def model_predict(model: ForwardModel, s, a) -> np.ndarray:
    s = _as_vector(s, model.n, "sensor vector")
    a = _as_vector(a, model.m, "action vector")
    return model.V @ a + model.T @ s + model.b


def model_update(model: ForwardModel, s, a, s_observed) -> tuple[ForwardModel, np.ndarray]:
    """One supervised step of the forward model.

    The residual ``xi = s_observed - phi(s, a)`` is taken with the
    parameters before the update; the returned model is a new object.
    """
    s = _as_vector(s, model.n, "sensor vector")
    a = _as_vector(a, model.m, "action vector")
    s_obs = _as_vector(s_observed, model.n, "observed sensor vector")
    _require_finite("model_update inputs", s, a, s_obs)
    xi = s_obs - model_predict(model, s, a)
    eta = model.eta_phi
    new = ForwardModel(model.V + eta * np.outer(xi, a),
                       model.T + eta * np.outer(xi, s),
                       model.b + eta * xi,
                       eta)
    return new, xi


def psi(params: ControllerParams, model: ForwardModel, s) -> np.ndarray:
    """Deterministic one-step loop map ``psi(s) = V g(C s + h) + T s + b``."""
    check_dims(params, model)
    return model_predict(model, s, controller_forward(params, s))


def psi_iterate(params: ControllerParams, model: ForwardModel, s, k: int) -> np.ndarray:
    if k < 0:
        raise ContractError(f"iteration count must be nonnegative, got {k}")
    out = _as_vector(s, params.n, "sensor vector").copy()
    for _ in range(k):
        out = psi(params, model, out)
    return out


def loop_jacobian(params: ControllerParams, model: ForwardModel, s) -> np.ndarray:
    """Jacobian ``L = V diag(g'(z)) C + T`` of ``psi`` at ``s``."""
    check_dims(params, model)
    s = _as_vector(s, params.n, "sensor vector")
    gp = params.activation.dg(params.C @ s + params.h)
    return model.V @ (gp[:, None] * params.C) + model.T


__all__ = [
    "Activation", "TANH", "ACTIVATIONS", "get_activation",
    "ControllerParams", "ForwardModel", "LoopState", "check_dims",
    "controller_forward", "model_predict", "model_update",
    "psi", "psi_iterate", "loop_jacobian",
]
