"""Exploration dynamics: gradient ascent on TiPI for the controller parameters.

The update rules implemented here are

* the general window rule, a sum over lags of ``du^T (dL/dtheta) ds``,
* its two-step specialisation with the explicit neural form
  ``dC = eps (dmu ds_{t-1}^T - (gamma * a) s^T)``, ``dh = -eps gamma * a``,
* the noise-free one-dimensional rule, which follows the gradient of
  ``0.5 ln(1 + L^2)``,

together with the online covariance tracker that supplies ``Sigma^{-1}``.
The derivative of ``L`` with respect to the controller parameters ignores the
state dependence of ``G'``; the ``alpha`` (sense) factor rescales the term
that stems from the curvature of the activation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import ContractError, NumericalError
from .sml_core import (Activation, ControllerParams, ForwardModel, LoopState,
                       check_dims, controller_forward, loop_jacobian, model_update, psi)
from .tipi_estimator import TipiWindow, jacobian_products, whitened_tipi

Mode = Literal["neural_tau2", "general_tau", "onedim_deterministic"]
MODES = ("neural_tau2", "general_tau", "onedim_deterministic")
VARIANTS = ("one_shot", "averaged")


# ---------------------------------------------------------------------------
# covariance tracking

@dataclass
class CovTracker:
    """Exponentially averaged covariance with a rank-one tracked inverse.

    The inverse is recomputed from ``Sigma`` by a Cholesky solve every
    ``refresh_every`` updates so that round-off of the rank-one formula
    cannot accumulate over long runs.
    """

    Sigma: np.ndarray
    SigmaInv: np.ndarray
    eta: float = 0.01
    floor: float = 1e-8
    refresh_every: int = 1000
    n_updates: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ContractError(f"averaging rate eta must lie in (0, 1), got {self.eta}")

    @classmethod
    def create(cls, n: int, eta: float = 0.01, lam: float = 0.0, floor: float = 1e-8,
               refresh_every: int = 1000, init: float | None = None) -> "CovTracker":
        """Tracker initialised at ``I * init``, by default ``I * max(floor, lam**2)``."""
        v = max(floor, lam * lam) if init is None else max(floor, float(init))
        return cls(np.eye(n) * v, np.eye(n) / v, eta, floor, refresh_every)

    def copy(self) -> "CovTracker":
        return replace(self, Sigma=self.Sigma.copy(), SigmaInv=self.SigmaInv.copy())

    def update(self, delta_s) -> "CovTracker":
        ds = np.asarray(delta_s, dtype=float).reshape(-1)
        eta = self.eta
        u = self.SigmaInv @ ds
        beta = eta / (1.0 - eta + eta * float(ds @ u))
        self.Sigma = (1.0 - eta) * self.Sigma + eta * np.outer(ds, ds)
        self.SigmaInv = (self.SigmaInv - beta * np.outer(u, u)) / (1.0 - eta)
        self.n_updates += 1
        if self.refresh_every and self.n_updates % self.refresh_every == 0:
            self.refresh()
        return self

    def refresh(self) -> None:
        """Recompute the inverse by direct factorisation.

        Eigenvalues that have decayed below ``floor`` (a loop that has
        come to rest feeds only zeros) are lifted back to ``floor``.
        """
        S = 0.5 * (self.Sigma + self.Sigma.T)
        w, U = np.linalg.eigh(S)
        if not np.all(np.isfinite(w)):
            raise NumericalError("tracked covariance is not finite")
        if w[0] < self.floor:
            S = (U * np.maximum(w, self.floor)) @ U.T
            S = 0.5 * (S + S.T)
        try:
            cf = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError("tracked covariance lost positive definiteness") from None
        Linv = np.linalg.inv(cf)
        self.Sigma = S
        self.SigmaInv = Linv.T @ Linv


def cov_update(tracker: CovTracker, delta_s) -> CovTracker:
    """Update ``tracker`` in place with one sample and return it."""
    return tracker.update(delta_s)


# ---------------------------------------------------------------------------
# configuration and auxiliary quantities

@dataclass
class ExplorationConfig:
    """Parameters of the exploration dynamics.

    ``variant`` selects the one-shot gradient (a deterministic function of
    the recent states) or its noise-averaged counterpart for the general
    rule.  ``learn_C`` / ``learn_h`` allow holding parameters fixed.
    """

    epsilon: float = 0.0
    tau: int = 2
    alpha: float = 1.0
    eta: float = 0.01
    mode: str = "neural_tau2"
    variant: str = "one_shot"
    learn_C: bool = True
    learn_h: bool = True

    def __post_init__(self):
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise ContractError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.tau < 1 or (self.epsilon > 0 and self.tau < 2):
            raise ContractError(f"tau must be >= 2 for a nonzero update, got {self.tau}")
        if self.mode == "neural_tau2" and self.tau != 2:
            raise ContractError("mode neural_tau2 requires tau == 2")
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 < self.eta < 1.0:
            raise ContractError(f"eta must lie in (0, 1), got {self.eta}")


@dataclass
class GradientAux:
    delta_u: np.ndarray
    delta_mu: np.ndarray
    gamma: np.ndarray


def gamma_for_activation(activation: Activation, z, C_delta_s, delta_mu, alpha: float = 1.0):
    """Channel rates ``gamma_i = alpha * (-g''/(g' g))_i (C ds)_i dmu_i``.

    The prefactor comes from ``activation.gamma_factor`` when available.
    Otherwise it is evaluated directly; where ``g`` vanishes the limit is
    taken from the two neighbouring points if they agree, and a
    :class:`NumericalError` is raised if they do not.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if activation.gamma_factor is not None:
        pref = np.asarray(activation.gamma_factor(z), dtype=float)
    else:
        g, gp, gpp = activation.g(z), activation.dg(z), activation.d2g(z)
        pref = np.empty_like(z)
        ok = g * gp != 0
        pref[ok] = -gpp[ok] / (gp[ok] * g[ok])
        for i in np.flatnonzero(~ok):
            if gpp[i] != 0:
                raise NumericalError(f"gamma prefactor singular at z={z[i]}")
            d = 1e-6 * max(1.0, abs(z[i]))
            side = np.array([z[i] - d, z[i] + d])
            vals = -activation.d2g(side) / (activation.dg(side) * activation.g(side))
            if not np.all(np.isfinite(vals)) or abs(vals[0] - vals[1]) > 1e-4 * max(1.0, abs(vals).max()):
                raise NumericalError(f"gamma prefactor has no limit at z={z[i]}")
            pref[i] = vals.mean()
    return alpha * pref * np.asarray(C_delta_s, dtype=float) * np.asarray(delta_mu, dtype=float)


def _lag_term(params: ControllerParams, model: ForwardModel, s, M, alpha: float):
    """Gradient of ``sum_kl M_kl L_kl`` with respect to (C, h) at state ``s``.

    ``M`` is ``du ds^T`` for the one-shot rule or its expectation for the
    averaged rule.  The curvature contribution carries the factor ``alpha``.
    """
    C = params.C
    z = C @ s + params.h
    gp = params.activation.dg(z)
    gpp = params.activation.d2g(z)
    VtM = model.V.T @ M                       # m x n
    curv = np.einsum("ij,ij->i", VtM, C)      # (V^T M C^T)_ii
    dh = alpha * gpp * curv
    dC = gp[:, None] * VtM + np.outer(dh, s)
    return dC, dh


def grad_tau2(params: ControllerParams, model: ForwardModel, delta_s_t, delta_s_prev,
              SigmaInv, config: ExplorationConfig, s_prev, return_aux: bool = False):
    """Two-step exploration update.

    Parameters
    ----------
    delta_s_t, delta_s_prev : array_like
        ``s_t - psi(psi(s_{t-2}))`` and ``s_{t-1} - psi(s_{t-2})``.
    SigmaInv : ndarray
        Inverse covariance of ``delta_s_t``.
    s_prev : array_like
        ``s_{t-1}``, the state at which ``L`` is evaluated.

    Returns
    -------
    (dC, dh) or (dC, dh, GradientAux)
        Updates already scaled by ``config.epsilon``.
    """
    check_dims(params, model)
    ds = np.asarray(delta_s_t, dtype=float).reshape(-1)
    w = np.asarray(delta_s_prev, dtype=float).reshape(-1)
    s = np.asarray(s_prev, dtype=float).reshape(-1)
    SigmaInv = np.atleast_2d(np.asarray(SigmaInv, dtype=float))
    if not np.all(np.isfinite(SigmaInv)):
        raise NumericalError("Sigma^{-1} is not finite; regularise the covariance")
    eps, alpha = config.epsilon, config.alpha
    act = params.activation
    z = params.C @ s + params.h
    gp = act.dg(z)
    du = SigmaInv @ ds
    vu = model.V.T @ du
    dmu = gp * vu
    Cw = params.C @ w
    # gamma_i a_i written through g'' so that no division by g is needed
    gamma_a = -alpha * act.d2g(z) * vu * Cw
    dC = eps * (np.outer(dmu, w) - np.outer(gamma_a, s))
    dh = -eps * gamma_a
    if not return_aux:
        return dC, dh
    aux = GradientAux(du, dmu, gamma_for_activation(act, z, Cw, dmu, alpha))
    return dC, dh, aux


def _expected_lag_moments(window: TipiWindow, D: np.ndarray):
    """``E[ds_t ds_{t-l}^T]`` for each lag ``l = 1 .. tau-1`` under white noise ``D``."""
    tau = window.tau
    J = window.jacobians
    n = window.n
    # covariance of ds_{t-tau+j}, j = 0 .. tau
    covs = [np.zeros((n, n))]
    for j in range(1, tau + 1):
        covs.append(J[j - 1] @ covs[-1] @ J[j - 1].T + D)
    out = {}
    for l in range(1, tau):
        P = np.eye(n)
        for k in range(1, l + 1):          # L(t-1) ... L(t-l)
            P = P @ J[tau - k]
        out[l] = P @ covs[tau - l]
    return out


def grad_general(window: TipiWindow, SigmaInv, params: ControllerParams, model: ForwardModel,
                 config: ExplorationConfig, noise_cov=None):
    """General window rule.

    One-shot variant: ``sum_l du_{t-l+1}^T (dL(t-l)/dtheta) ds_{t-l}`` with
    ``du_{t-l+1} = (L^{(l-1)}(t-1))^T Sigma^{-1} ds_t``.  The averaged
    variant replaces ``ds_t ds_{t-l}^T`` by its expectation under white
    noise of covariance ``noise_cov`` (default identity), which makes the
    update the gradient of ``0.5 ln|Sigma|`` at fixed ``Sigma^{-1}``.
    """
    check_dims(params, model)
    tau = window.tau
    if tau < 2:
        raise ContractError("the general rule needs tau >= 2")
    if window.states is None:
        raise ContractError("window has no states; build it with TipiWindow.from_states")
    SigmaInv = np.atleast_2d(np.asarray(SigmaInv, dtype=float))
    prods = jacobian_products(window.jacobians, tau)
    dC = np.zeros_like(params.C)
    dh = np.zeros_like(params.h)
    if config.variant == "averaged":
        D = np.eye(window.n) if noise_cov is None else np.atleast_2d(np.asarray(noise_cov, float))
        moments = _expected_lag_moments(window, D)
    else:
        ds_t = window.deltas[tau]
    for l in range(1, tau):
        left = prods[l - 1].T @ SigmaInv
        if config.variant == "averaged":
            M = left @ moments[l]
        else:
            M = np.outer(left @ ds_t, window.deltas[tau - l])
        tC, th = _lag_term(params, model, window.states[tau - l], M, config.alpha)
        dC += tC
        dh += th
    return config.epsilon * dC, config.epsilon * dh


def onedim_step(s, C, h, epsilon):
    """One step of the noise-free one-dimensional loop ``s' = tanh(C s + h)``.

    Returns ``(s_next, C_next, h_next, tipi)`` where ``tipi = 0.5 ln(1+L^2)``
    with ``L = C g'(C s + h)`` evaluated before the update.
    """
    s = float(s); C = float(C); h = float(h)
    if C == 0.0:
        raise ZeroDivisionError("the one-dimensional rule is singular at C = 0")
    a = math.tanh(C * s + h)
    L = C * (1.0 - a * a)
    L2 = L * L
    gamma = 2.0 * L2 / (1.0 + L2)
    s_next = a
    C_next = C + epsilon * gamma * (1.0 / (2.0 * C) - s * a)
    h_next = h - epsilon * gamma * s_next
    return s_next, C_next, h_next, 0.5 * math.log1p(L2)


# ---------------------------------------------------------------------------
# full step orchestration

@dataclass
class StepDiagnostics:
    tipi: float
    sigma_norm: float
    xi: np.ndarray
    gamma: np.ndarray


def _decentralized_update(params, model, s_prev, s_t, config):
    """Elementwise one-dimensional rule on a diagonal controller.

    Channel ``i`` sees only its own sensor, motor and model gain ``V_ii``;
    the bias is pushed by the measured ``s_t``, mirroring the one-dimensional
    loop where ``s_t`` equals the action.
    """
    c = np.diag(params.C).copy()
    if np.any(c == 0):
        raise ZeroDivisionError("the one-dimensional rule is singular at C = 0")
    v = np.diag(model.V)
    a = params.activation.g(c * s_prev + params.h)
    L = v * c * params.activation.dg(c * s_prev + params.h)
    L2 = L * L
    gamma = 2.0 * L2 / (1.0 + L2)
    eps = config.epsilon
    dc = eps * (L2 / (c * (1.0 + L2)) - gamma * s_prev * a)
    dh = -eps * gamma * s_t
    tipi = float(np.sum(0.5 * np.log1p(L2)))
    return np.diag(dc), dh, gamma, tipi


def _decentralized_model_update(model: ForwardModel, s, a, s_obs):
    xi = s_obs - (np.diag(model.V) * a + model.b)
    eta = model.eta_phi
    V = model.V + np.diag(eta * xi * a)
    return ForwardModel(V, model.T, model.b + eta * xi, eta), xi


def exploration_step(loop_state: LoopState, params: ControllerParams, model: ForwardModel,
                     tracker: CovTracker, config: ExplorationConfig):
    """Advance controller, forward model and tracker by one time step.

    ``loop_state.history`` must hold at least ``tau + 1`` sensor vectors
    ending with the current measurement ``s_t``; ``loop_state.a_prev`` is
    the action that produced it.  All exploration quantities use the
    parameters from the end of the previous step; the forward model is
    updated afterwards.

    Returns ``(params, model, tracker, diagnostics)``; inputs are not mutated
    except for ``tracker``, which is updated in place.
    """
    check_dims(params, model)
    hist = loop_state.history
    need = 2 if config.mode == "onedim_deterministic" else config.tau + 1
    if len(hist) < need:
        raise ContractError(f"need {need} past states, have {len(hist)}")
    s_t = hist[-1]
    s_prev = hist[-2]
    a_prev = loop_state.a_prev
    new = params.copy()

    if config.mode == "onedim_deterministic":
        if params.n != params.m:
            raise ContractError("the decentralized rule needs a square diagonal controller")
        dC, dh, gamma, tipi = _decentralized_update(params, model, s_prev, s_t, config)
        if config.learn_C:
            new.C = new.C + dC
        if config.learn_h:
            new.h = new.h + dh
        new_model, xi = _decentralized_model_update(model, s_prev, a_prev, s_t)
        return new, new_model, tracker, StepDiagnostics(tipi, float("nan"), xi, gamma)

    if config.mode == "neural_tau2":
        s2 = hist[-3]
        p1 = psi(params, model, s2)
        ds_prev = s_prev - p1
        ds_t = s_t - psi(params, model, p1)
        tracker.update(ds_t)
        dC, dh, aux = grad_tau2(params, model, ds_t, ds_prev, tracker.SigmaInv, config,
                                s_prev, return_aux=True)
        jac = loop_jacobian(params, model, s_prev)
        gamma = aux.gamma
    else:
        window = TipiWindow.from_states(params, model, np.asarray(hist[-(config.tau + 1):]))
        ds_t = window.deltas[-1]
        tracker.update(ds_t)
        dC, dh = grad_general(window, tracker.SigmaInv, params, model, config)
        jac = window.jacobians
        gamma = np.full(params.m, np.nan)

    if config.learn_C:
        new.C = new.C + dC
    if config.learn_h:
        new.h = new.h + dh
    new_model, xi = model_update(model, s_prev, a_prev, s_t)
    tipi = whitened_tipi(jac, np.eye(params.n), config.tau)
    sigma_norm = float(np.sqrt(max(ds_t @ tracker.SigmaInv @ ds_t, 0.0)))
    return new, new_model, tracker, StepDiagnostics(tipi, sigma_norm, xi, gamma)


# ---------------------------------------------------------------------------
# scalar fast paths for the one-dimensional loop

def simulate_onedim(C0: float, h0: float, s0: float, epsilon: float, steps: int,
                    learn_C: bool = True, learn_h: bool = True) -> dict[str, np.ndarray]:
    """Iterate :func:`onedim_step` in a tight scalar loop.

    Row ``t`` holds ``s_t``, the parameters ``C_t, h_t`` after the update of
    step ``t``, the next action ``a_t = tanh(C_t s_t + h_t)`` and the TiPI
    of the transition into ``s_t`` (``nan`` in row 0).  This is the layout
    of the logs written by the harness.
    """
    out = {k: np.empty(steps + 1) for k in ("s", "a", "C", "h", "tipi")}
    so, ao, Co, ho, Io = (out[k] for k in ("s", "a", "C", "h", "tipi"))
    s, C, h = float(s0), float(C0), float(h0)
    tanh, log1p = math.tanh, math.log1p
    so[0] = s; Co[0] = C; ho[0] = h; ao[0] = tanh(C * s + h); Io[0] = math.nan
    for t in range(1, steps + 1):
        if C == 0.0:
            raise ZeroDivisionError("the one-dimensional rule is singular at C = 0")
        a = tanh(C * s + h)
        L = C * (1.0 - a * a)
        L2 = L * L
        gamma = 2.0 * L2 / (1.0 + L2)
        if learn_C:
            C = C + epsilon * gamma * (1.0 / (2.0 * C) - s * a)
        if learn_h:
            h = h - epsilon * gamma * a
        s = a
        so[t] = s; Co[t] = C; ho[t] = h; ao[t] = tanh(C * s + h); Io[t] = 0.5 * log1p(L2)
    return out


def simulate_loop_tau2(C0: float, h0: float, s0: float, epsilon: float, steps: int,
                       lam: float, seed: int, eta: float = 0.01, eta_phi: float = 0.01,
                       alpha: float = 1.0, V0: float = 1.0, T0: float = 0.0, b0: float = 0.0,
                       floor: float = 1e-8, refresh_every: int = 1000,
                       learn_C: bool = True, learn_h: bool = True) -> dict[str, np.ndarray]:
    """Scalar version of the two-step neural rule on the noisy identity loop.

    Rows follow the layout of :func:`simulate_onedim`.  Equivalent (to
    round-off) to driving :func:`exploration_step` in
    ``neural_tau2`` mode with a one-dimensional :class:`~tipi.plants.LoopPlant`
    of the same seed; it exists because a Python-level numpy step is too
    slow for runs of 10^5 to 10^6 steps.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(steps).tolist() if steps > 0 else []
    tanh, log1p = math.tanh, math.log1p
    C, h, V, T, b = float(C0), float(h0), float(V0), float(T0), float(b0)
    Sig = max(floor, lam * lam); Si = 1.0 / Sig
    n_up = 0
    out = {k: np.empty(steps + 1) for k in ("s", "a", "C", "h", "tipi")}
    so, ao, Co, ho, Io = (out[k] for k in ("s", "a", "C", "h", "tipi"))

    s = float(s0)
    a = tanh(C * s + h)
    s1 = s2 = a1 = None
    for t in range(steps + 1):
        tipi = math.nan
        if s1 is not None and s2 is not None:
            # s2 = s_{t-2}, s1 = s_{t-1}, s = s_t, a1 = a_{t-1}
            a2 = tanh(C * s2 + h)
            p1 = V * a2 + T * s2 + b
            ds1 = s1 - p1
            ds = s - (V * tanh(C * p1 + h) + T * p1 + b)
            u = Si * ds
            beta = eta / (1.0 - eta + eta * ds * u)
            Sig = (1.0 - eta) * Sig + eta * ds * ds
            Si = (Si - beta * u * u) / (1.0 - eta)
            n_up += 1
            if refresh_every and n_up % refresh_every == 0:
                Sig = max(Sig, floor)
                Si = 1.0 / Sig
            du = Si * ds
            z1 = C * s1 + h
            g1 = tanh(z1)
            gp1 = 1.0 - g1 * g1
            L = V * C * gp1 + T
            tipi = 0.5 * log1p(L * L)
            vu = V * du
            dmu = gp1 * vu
            gamma_a = alpha * 2.0 * g1 * gp1 * vu * (C * ds1)
            dC = epsilon * (dmu * ds1 - gamma_a * s1)
            dh = -epsilon * gamma_a
            if learn_C:
                C = C + dC
            if learn_h:
                h = h + dh
            xi = s - (V * a1 + T * s1 + b)
            V = V + eta_phi * xi * a1
            T = T + eta_phi * xi * s1
            b = b + eta_phi * xi
        elif s1 is not None:
            xi = s - (V * a1 + T * s1 + b)
            V = V + eta_phi * xi * a1
            T = T + eta_phi * xi * s1
            b = b + eta_phi * xi
        a = tanh(C * s + h)
        so[t] = s; ao[t] = a; Co[t] = C; ho[t] = h; Io[t] = tipi
        if t == steps:
            break
        s2, s1, a1 = s1, s, a
        s = a + lam * noise[t]
    return out


__all__ = [
    "CovTracker", "cov_update", "ExplorationConfig", "GradientAux", "StepDiagnostics",
    "gamma_for_activation", "grad_tau2", "grad_general", "onedim_step",
    "exploration_step", "simulate_onedim", "simulate_loop_tau2", "MODES", "VARIANTS",
]
