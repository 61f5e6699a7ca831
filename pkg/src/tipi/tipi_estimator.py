"""Error propagation and the Gaussian estimate of time-local predictive information.

Conventions
-----------
A window of length ``tau`` ending at time ``t`` holds the states
``s_{t-tau}, ..., s_t``.  Jacobian sequences are stored chronologically:
``jacobians[j]`` is ``L(t - tau + j)``, so the last entry is ``L(t-1)``.
Functions that take an ``L_seq`` use the same ordering and accept a single
matrix as shorthand for a constant Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError
from .sml_core import ControllerParams, ForwardModel, loop_jacobian, psi


# ---------------------------------------------------------------------------
# linear algebra helpers

def _chol(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not symmetric positive-definite") from None


def logdet_spd(A: np.ndarray, what: str = "matrix") -> float:
    """Log-determinant of an SPD matrix through its Cholesky factor."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return 2.0 * float(np.sum(np.log(np.diag(_chol(A, what)))))


def _check_spd(D: np.ndarray, what: str) -> np.ndarray:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[0] != D.shape[1]:
        raise ContractError(f"{what} must be square, got {D.shape}")
    if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, np.abs(D).max())):
        raise ContractError(f"{what} is not symmetric")
    _chol(D, what)
    return D


def _sym_sqrt(D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``D^{1/2}`` and ``D^{-1/2}`` (symmetric square roots)."""
    w, U = np.linalg.eigh(D)
    if np.any(w <= 0):
        raise NumericalError("noise covariance has non-positive eigenvalues")
    r = np.sqrt(w)
    return (U * r) @ U.T, (U / r) @ U.T


def _jacobian_list(L_seq, count: int) -> list[np.ndarray]:
    """Last ``count`` Jacobians in chronological order."""
    arr = np.asarray(L_seq, dtype=float)
    if arr.ndim <= 2:
        single = np.atleast_2d(arr)
        return [single] * count
    if arr.shape[0] < count:
        raise ContractError(f"need at least {count} Jacobians, got {arr.shape[0]}")
    return [arr[i] for i in range(arr.shape[0] - count, arr.shape[0])]


def jacobian_products(L_seq, tau: int) -> list[np.ndarray]:
    """Products ``L^{(k)} = L(t-1) L(t-2) ... L(t-k)`` for ``k = 0 .. tau-1``."""
    if tau < 1:
        raise ContractError(f"tau must be >= 1, got {tau}")
    Ls = _jacobian_list(L_seq, tau - 1) if tau > 1 else []
    n = Ls[0].shape[0] if Ls else None
    if n is None:
        arr = np.atleast_2d(np.asarray(L_seq, dtype=float))
        n = arr.shape[-1]
    prods = [np.eye(n)]
    for k in range(1, tau):
        prods.append(prods[-1] @ Ls[-k])
    return prods


# ---------------------------------------------------------------------------
# domain types

@dataclass
class NoiseModel:
    """White Gaussian noise ``xi ~ N(0, lam^2 D_shape)``.

    ``D`` is the full covariance; ``lam`` records its overall amplitude so that
    ``D / lam**2`` is the amplitude-free shape used by :func:`whitened_tipi`.
    """

    D: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        self.D = _check_spd(self.D, "noise covariance D")
        if not self.lam > 0:
            raise ContractError(f"noise amplitude must be positive, got {self.lam}")

    @classmethod
    def isotropic(cls, n: int, lam: float) -> "NoiseModel":
        return cls(lam * lam * np.eye(n), lam)

    @property
    def shape(self) -> np.ndarray:
        return self.D / (self.lam * self.lam)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.standard_normal((size, self.D.shape[0])) @ np.linalg.cholesky(self.D).T


@dataclass
class TipiWindow:
    """Rolling window used to measure error propagation.

    Attributes
    ----------
    tau : int
        Window length.
    states : ndarray, shape (tau+1, n)
        ``s_{t-tau} .. s_t``.  May be ``None`` for synthetic windows.
    predictions : ndarray, shape (tau+1, n)
        ``psi^k(s_{t-tau})`` for ``k = 0 .. tau``.
    deltas : ndarray, shape (tau+1, n)
        ``states - predictions``; the first row is zero by construction.
    residuals : ndarray, shape (tau+1, n)
        One-step residuals ``s_{t'} - psi(s_{t'-1})``; row 0 is unused and zero.
    jacobians : ndarray, shape (tau, n, n)
        ``L(t-tau) .. L(t-1)`` evaluated at the measured states.
    """

    tau: int
    states: np.ndarray | None
    predictions: np.ndarray | None
    deltas: np.ndarray
    residuals: np.ndarray
    jacobians: np.ndarray

    def __post_init__(self):
        if self.tau < 1:
            raise ContractError(f"tau must be >= 1, got {self.tau}")
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.residuals = np.asarray(self.residuals, dtype=float)
        self.jacobians = np.asarray(self.jacobians, dtype=float)
        if self.deltas.shape[0] != self.tau + 1 or self.residuals.shape[0] != self.tau + 1:
            raise ContractError(f"window underfilled: need {self.tau + 1} rows")
        if self.jacobians.shape[0] != self.tau:
            raise ContractError(f"window underfilled: need {self.tau} Jacobians")

    @property
    def n(self) -> int:
        return self.deltas.shape[1]

    @classmethod
    def from_states(cls, params: ControllerParams, model: ForwardModel, states) -> "TipiWindow":
        """Measure a window from ``tau + 1`` consecutive states (oldest first)."""
        S = np.atleast_2d(np.asarray(states, dtype=float))
        if S.shape[0] < 2:
            raise ContractError("window underfilled: need at least two states")
        tau = S.shape[0] - 1
        preds = np.empty_like(S)
        preds[0] = S[0]
        resid = np.zeros_like(S)
        jac = np.empty((tau, S.shape[1], S.shape[1]))
        for j in range(1, tau + 1):
            preds[j] = psi(params, model, preds[j - 1])
            resid[j] = S[j] - psi(params, model, S[j - 1])
            jac[j - 1] = loop_jacobian(params, model, S[j - 1])
        return cls(tau, S, preds, S - preds, resid, jac)

    @classmethod
    def synthetic(cls, jacobians, residuals) -> "TipiWindow":
        """Window of a purely linear error process.

        ``residuals`` holds ``xi_{t-tau+1} .. xi_t`` and ``jacobians`` the
        matching ``L(t-tau) .. L(t-1)``; deltas follow by propagation.
        """
        xi = np.atleast_2d(np.asarray(residuals, dtype=float))
        if xi.shape[0] == 1 and np.ndim(residuals) == 1:
            xi = xi.T
        tau, n = xi.shape
        Ls = np.asarray(jacobians, dtype=float)
        if Ls.ndim <= 2:
            Ls = np.broadcast_to(np.atleast_2d(Ls).reshape(n, n), (tau, n, n)).copy()
        resid = np.vstack([np.zeros((1, n)), xi])
        win = cls(tau, None, None, np.zeros((tau + 1, n)), resid, Ls)
        return win.linearized()

    def linearized(self) -> "TipiWindow":
        """Copy whose deltas follow the linearized propagation exactly."""
        return TipiWindow(self.tau, self.states, self.predictions,
                          propagate_deltas(self), self.residuals.copy(), self.jacobians.copy())


# ---------------------------------------------------------------------------
# operations

def propagate_deltas(window: TipiWindow) -> np.ndarray:
    """Linearized error propagation ``ds_{t'} = L(t'-1) ds_{t'-1} + xi_{t'}``.

    Returns an array of shape (tau+1, n) whose first row is zero.  The last
    row equals ``sum_k L^{(k)}(t-1) xi_{t-k}``.
    """
    tau, n = window.tau, window.n
    out = np.zeros((tau + 1, n))
    for j in range(1, tau + 1):
        out[j] = window.jacobians[j - 1] @ out[j - 1] + window.residuals[j]
    return out


def sigma_from_jacobians(L_seq, D, tau: int) -> np.ndarray:
    """``Sigma = sum_{k<tau} L^{(k)} D L^{(k)T}`` for white noise of covariance ``D``."""
    D = _check_spd(D, "noise covariance D")
    Sigma = np.zeros_like(D)
    for P in jacobian_products(L_seq, tau):
        Sigma += P @ D @ P.T
    return 0.5 * (Sigma + Sigma.T)


def tipi_gaussian(Sigma, D) -> float:
    """``0.5 ln|Sigma| - 0.5 ln|D|`` in nats."""
    return 0.5 * (logdet_spd(Sigma, "Sigma") - logdet_spd(D, "noise covariance D"))


def whitened_tipi(L_seq, D_hat, tau: int) -> float:
    """TiPI computed from the whitened operator ``D^{-1/2} L D^{1/2}``.

    Only the shape of the noise covariance enters, so the value is well
    defined in the limit of vanishing noise amplitude.
    """
    D_hat = _check_spd(D_hat, "noise shape D_hat")
    # rescale to unit trace: the result is scale free and this keeps the
    # square roots well conditioned for extreme amplitudes
    D_hat = D_hat * (D_hat.shape[0] / np.trace(D_hat))
    root, inv_root = _sym_sqrt(D_hat)
    S = np.zeros_like(D_hat)
    for P in jacobian_products(L_seq, tau):
        Ph = inv_root @ P @ root
        S += Ph @ Ph.T
    return 0.5 * logdet_spd(0.5 * (S + S.T), "whitened Sigma")


def tipi_mc_oracle(L_seq, D, tau: int, n_samples: int = 10**6, seed: int = 0,
                   n_batches: int = 20, return_stderr: bool = False):
    """Monte-Carlo estimate of the Gaussian TiPI.

    Noise sequences are drawn from ``N(0, D)`` and pushed through the
    linearized propagation; the estimate uses the sample covariances of
    ``ds_t`` and of ``xi_t``.  The standard error comes from ``n_batches``
    disjoint batches.
    """
    D = _check_spd(D, "noise covariance D")
    n = D.shape[0]
    Ls = _jacobian_list(L_seq, tau - 1) if tau > 1 else []
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(D)
    ds = np.zeros((n_samples, n))
    xi = ds
    for j in range(tau):
        xi = rng.standard_normal((n_samples, n)) @ chol.T
        if j > 0:
            ds = ds @ Ls[j - 1].T
        ds = ds + xi

    def estimate(a, b):
        return 0.5 * (logdet_spd(np.atleast_2d(np.cov(a, rowvar=False)), "sample Sigma")
                      - logdet_spd(np.atleast_2d(np.cov(b, rowvar=False)), "sample D"))

    value = estimate(ds, xi)
    if not return_stderr:
        return value
    parts = np.array_split(np.arange(n_samples), n_batches)
    batch = np.array([estimate(ds[p], xi[p]) for p in parts])
    stderr = float(batch.std(ddof=1) / np.sqrt(n_batches))
    return value, stderr


def linear_stationary_sigma(L, D, tau: int) -> np.ndarray:
    """Geometric sum ``sum_{k<tau} L^k D L^{kT}`` for a constant Jacobian.

    For normal ``L`` and ``D = I`` this tends to ``(I - L L^T)^{-1}``.
    Raises :class:`NumericalError` when the spectral radius is >= 1 and the
    sum has more than one term, since it then diverges with ``tau``.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    rho = float(np.max(np.abs(np.linalg.eigvals(L))))
    if tau > 1 and rho >= 1.0:
        raise NumericalError(f"spectral radius {rho:.6g} >= 1: the stationary sum diverges")
    D = _check_spd(D, "noise covariance D")
    Sigma = np.zeros_like(D)
    P = np.eye(L.shape[0])
    for _ in range(tau):
        Sigma += P @ D @ P.T
        P = L @ P
    return 0.5 * (Sigma + Sigma.T)


__all__ = [
    "NoiseModel", "TipiWindow", "logdet_spd", "jacobian_products",
    "propagate_deltas", "sigma_from_jacobians", "tipi_gaussian",
    "whitened_tipi", "tipi_mc_oracle", "linear_stationary_sigma",
]
