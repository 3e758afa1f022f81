"""
Linear-Gaussian control-channel attacks

Victim: x_{t+1} = A x_t + B (K x_t + u_bar_t) + w_t, w_t ~ N(0, Sigma), closed loop L = A + BK.
The adversary trades detectability (KL per step) against beta * E[x^T x]; the
optimum is characterized by the backward recursion
    P_t = I + L^T P_{t+1} (I - 2 beta Sigma P_{t+1})^{-1} L,   P_T = I,
which stays well defined while F_t = Sigma^{-1}/2 - beta P_{t+1} is positive definite.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import solve_discrete_lyapunov
from scipy.stats import multivariate_normal

from core.detection import confidence_interval
from core.errors import BracketError, InfeasibleBetaError, InstabilityError, InvalidInputError, NumericalError
from core.scheduler import TrialScheduler
from utils.helpers import field as schema_field

logger = logging.getLogger("core.linear_attack")

ATTACK_KINDS = ("gaussian", "deterministic")
DIVERGENCE_TRACE = 1e8
STATE_OVERFLOW = 1e12


def _sym(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


@dataclass
class LinearSystem:
    a_mat: np.ndarray
    b_mat: np.ndarray
    k_gain: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        self.a_mat = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        self.b_mat = np.atleast_2d(np.asarray(self.b_mat, dtype=float))
        self.k_gain = np.atleast_2d(np.asarray(self.k_gain, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        n, m = self.b_mat.shape
        if self.a_mat.shape != (n, n) or self.k_gain.shape != (m, n) or self.noise_cov.shape != (n, n):
            raise InvalidInputError("inconsistent shapes for A (n x n), B (n x m), K (m x n), Sigma (n x n)")
        if np.linalg.matrix_rank(self.b_mat) != m:
            raise InvalidInputError("B must have full column rank")
        if not np.allclose(self.noise_cov, self.noise_cov.T) or np.min(np.linalg.eigvalsh(self.noise_cov)) <= 0:
            raise InvalidInputError("Sigma must be symmetric positive definite")
        radius = spectral_radius(self.closed_loop)
        if radius >= 1.0:
            raise InstabilityError(f"closed loop A + BK is not Schur (spectral radius {radius:.4g})")

    @property
    def n_states(self) -> int:
        return self.a_mat.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b_mat.shape[1]

    @property
    def closed_loop(self) -> np.ndarray:
        return self.a_mat + self.b_mat @ self.k_gain

    @property
    def b_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.b_mat)

    @property
    def noise_inv(self) -> np.ndarray:
        return np.linalg.inv(self.noise_cov)

    def with_noise(self, noise_cov: np.ndarray) -> "LinearSystem":
        return LinearSystem(self.a_mat, self.b_mat, self.k_gain, noise_cov)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "A": self.a_mat.tolist(),
            "B": self.b_mat.tolist(),
            "K": self.k_gain.tolist(),
            "Sigma": self.noise_cov.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinearSystem":
        try:
            return cls(data["A"], data["B"], data["K"], data["Sigma"])
        except KeyError as e:
            raise InvalidInputError(f"system document is missing {e}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LinearSystem":
        with open(path, "r") as file:
            return cls.from_dict(json.load(file))


SYSTEM_SCHEMA = {key: schema_field(list) for key in ("A", "B", "K", "Sigma")}


def system_from_config(system: Optional[Dict[str, Any]]) -> LinearSystem:
    """Explicit matrices when configured, the built-in 2-D system otherwise"""
    return LinearSystem.from_dict(system) if system else benchmark_system()


def benchmark_system() -> LinearSystem:
    """Two-dimensional benchmark with closed-loop eigenvalues ~0.001 and ~0.134"""
    return LinearSystem(
        a_mat=np.array([[0.7, 0.9], [1.5, 2.0]]),
        b_mat=2.0 * np.array([[0.0, 1.0], [2.0, 1.0]]),
        k_gain=-np.array([[0.19, 0.26125], [0.3325, 0.4275]]),
        noise_cov=np.eye(2),
    )


@dataclass
class RiccatiSolution:
    """p_seq holds P_0..P_T (a single P_bar when stationary); f_seq holds F_0..F_{T-1}"""

    p_seq: np.ndarray
    f_seq: np.ndarray
    beta: float
    offsets: Dict[str, np.ndarray] = field(default_factory=dict)
    stationary: bool = False

    @property
    def horizon(self) -> int:
        return self.f_seq.shape[0]

    def next_p(self, t: int) -> np.ndarray:
        """P_{t+1}, the matrix F_t is built from"""
        return self.p_seq[0] if self.stationary else self.p_seq[t + 1]


@dataclass
class GaussianAttack:
    """u_bar_t ~ N(Theta_t x_t, V_t); V_t = 0 for the deterministic kind"""

    gain_seq: np.ndarray
    cov_seq: np.ndarray
    kind: str = "gaussian"
    stationary: bool = False

    @property
    def horizon(self) -> int:
        return self.gain_seq.shape[0]

    def step_index(self, t: int) -> int:
        return min(max(t, 0), self.horizon - 1)

    def gain(self, t: int = 0) -> np.ndarray:
        return self.gain_seq[self.step_index(t)]

    def cov(self, t: int = 0) -> np.ndarray:
        return self.cov_seq[self.step_index(t)]

    @classmethod
    def zero(cls, sys: LinearSystem) -> "GaussianAttack":
        m, n = sys.n_inputs, sys.n_states
        return cls(np.zeros((1, m, n)), np.zeros((1, m, m)), kind="deterministic", stationary=True)


@dataclass
class BetaFrontier:
    beta0: float
    beta1: float
    beta_star: float
    pattern: Dict[float, bool] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"beta0": self.beta0, "beta1": self.beta1, "beta_star": self.beta_star}


@dataclass
class ValueComparison:
    j_det: float
    j_gauss: float
    log_det_terms: np.ndarray = field(repr=False)
    trace_terms: np.ndarray = field(repr=False)

    @property
    def gap(self) -> float:
        return self.j_det - self.j_gauss


def _check_beta(beta: float):
    if not beta > 0 or not math.isfinite(beta):
        raise InvalidInputError(f"beta must be positive, got {beta}")


def _riccati_step(sys: LinearSystem, beta: float, p_next: np.ndarray, step: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    """One backward step: returns (P_t, F_t) or raises when F_t is not positive definite"""
    f_mat = _sym(0.5 * sys.noise_inv - beta * p_next)
    if np.min(np.linalg.eigvalsh(f_mat)) <= 0:
        raise InfeasibleBetaError(f"F loses positive definiteness at beta={beta:.6g}", beta, step)
    loop = sys.closed_loop
    try:
        inner = np.linalg.solve(np.eye(sys.n_states) - 2.0 * beta * sys.noise_cov @ p_next, loop)
    except np.linalg.LinAlgError:
        raise InfeasibleBetaError(f"I - 2 beta Sigma P is singular at beta={beta:.6g}", beta, step)
    return _sym(np.eye(sys.n_states) + loop.T @ p_next @ inner), f_mat


def _noise_scaled_eigs(sys: LinearSystem, extra: np.ndarray) -> np.ndarray:
    """Eigenvalues of Sigma^{-1/2} R Sigma^{-1/2}, i.e. of Sigma^{-1} R"""
    values, vectors = np.linalg.eigh(sys.noise_cov)
    inv_root = vectors @ np.diag(values ** -0.5) @ vectors.T
    return np.linalg.eigvalsh(_sym(inv_root @ extra @ inv_root))


def _covariance_injection(sys: LinearSystem, beta: float, f_mat: np.ndarray, p_next: np.ndarray) -> np.ndarray:
    """R_t = B V_t B^T = beta F_t^{-1} P_{t+1} Sigma"""
    return _sym(beta * np.linalg.solve(f_mat, p_next @ sys.noise_cov))


def riccati_backward(sys: LinearSystem, beta: float, horizon: int) -> RiccatiSolution:
    _check_beta(beta)
    if horizon < 1:
        raise InvalidInputError("horizon must be at least 1")
    n = sys.n_states
    p_seq = np.empty((horizon + 1, n, n))
    f_seq = np.empty((horizon, n, n))
    p_seq[horizon] = np.eye(n)
    det_offsets = np.zeros(horizon + 1)
    gauss_offsets = np.zeros(horizon + 1)

    for t in range(horizon - 1, -1, -1):
        p_seq[t], f_seq[t] = _riccati_step(sys, beta, p_seq[t + 1], t)
        injection = _covariance_injection(sys, beta, f_seq[t], p_seq[t + 1])
        det_offsets[t] = det_offsets[t + 1] + float(np.trace(sys.noise_cov @ p_seq[t + 1]))
        gauss_offsets[t] = gauss_offsets[t + 1] + 0.5 * float(np.sum(np.log1p(_noise_scaled_eigs(sys, injection))))

    return RiccatiSolution(
        p_seq=p_seq,
        f_seq=f_seq,
        beta=beta,
        offsets={"deterministic": det_offsets, "gaussian": gauss_offsets},
    )


def stationary_riccati(sys: LinearSystem, beta: float, tol: float = 1e-10, max_iter: int = 100_000) -> RiccatiSolution:
    """Fixed point P_bar of the backward recursion, iterated from P = I"""
    _check_beta(beta)
    p_mat = np.eye(sys.n_states)
    for iteration in range(1, max_iter + 1):
        updated, f_mat = _riccati_step(sys, beta, p_mat, None)
        if not np.all(np.isfinite(updated)) or np.trace(updated) > DIVERGENCE_TRACE:
            raise InfeasibleBetaError(f"stationary recursion diverges at beta={beta:.6g}", beta)
        residual = float(np.max(np.abs(updated - p_mat)))
        p_mat = updated
        if residual <= tol:
            break
    else:
        raise InfeasibleBetaError(f"stationary recursion did not settle in {max_iter} iterations", beta)

    f_mat = _sym(0.5 * sys.noise_inv - beta * p_mat)
    if np.min(np.linalg.eigvalsh(f_mat)) <= 0:
        raise InfeasibleBetaError(f"F at the fixed point is not positive definite (beta={beta:.6g})", beta)
    logger.debug(f"stationary Riccati at beta={beta:.6g}: {iteration} iterations, trace {np.trace(p_mat):.6g}")
    return RiccatiSolution(p_seq=p_mat[None], f_seq=f_mat[None], beta=beta, stationary=True)


def lyapunov_solution(loop: np.ndarray) -> np.ndarray:
    """P = I + L^T P L"""
    loop = np.atleast_2d(loop)
    return _sym(solve_discrete_lyapunov(loop.T, np.eye(loop.shape[0])))


def synthesize_attack(riccati: RiccatiSolution, sys: LinearSystem, kind: str = "gaussian") -> GaussianAttack:
    """Theta_t = beta B^+ F_t^{-1} P_{t+1} L and V_t = beta B^+ F_t^{-1} P_{t+1} Sigma (B^+)^T"""
    if kind not in ATTACK_KINDS:
        raise InvalidInputError(f"unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}")
    beta = riccati.beta
    pinv = sys.b_pinv
    steps = riccati.horizon
    gains = np.empty((steps, sys.n_inputs, sys.n_states))
    covs = np.zeros((steps, sys.n_inputs, sys.n_inputs))
    for t in range(steps):
        f_mat, p_next = riccati.f_seq[t], riccati.next_p(t)
        gains[t] = beta * pinv @ np.linalg.solve(f_mat, p_next @ sys.closed_loop)
        if kind == "gaussian":
            covs[t] = _sym(beta * pinv @ np.linalg.solve(f_mat, p_next @ sys.noise_cov) @ pinv.T)
    return GaussianAttack(gains, covs, kind=kind, stationary=riccati.stationary)


def attacked_closed_loop(sys: LinearSystem, attack: GaussianAttack, t: int = 0) -> np.ndarray:
    return sys.closed_loop + sys.b_mat @ attack.gain(t)


def attacked_spectral_radius(sys: LinearSystem, attack: GaussianAttack) -> float:
    return spectral_radius(attacked_closed_loop(sys, attack))


def _feasible_beta(sys: LinearSystem, beta: float) -> Optional[RiccatiSolution]:
    try:
        return stationary_riccati(sys, beta)
    except InfeasibleBetaError:
        return None


def _excess_gain(sys: LinearSystem, riccati: RiccatiSolution) -> bool:
    """(beta/2) K_bar^T B^T Sigma^{-1} B K_bar - I is positive definite"""
    beta = riccati.beta
    k_bar = sys.b_pinv @ np.linalg.solve(riccati.f_seq[0], riccati.p_seq[0] @ sys.closed_loop)
    test = 0.5 * beta * k_bar.T @ sys.b_mat.T @ sys.noise_inv @ sys.b_mat @ k_bar - np.eye(sys.n_states)
    return bool(np.min(np.linalg.eigvalsh(_sym(test))) > 0)


def _bisect(predicate, low: float, high: float, tol: float) -> float:
    """Boundary between predicate(low) == True and predicate(high) == False"""
    while high - low > tol * max(1.0, low):
        mid = 0.5 * (low + high)
        if predicate(mid):
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


def beta_star(sys: LinearSystem, tol: float = 1e-6) -> BetaFrontier:
    """Largest penalty for which the stationary attack is well defined"""
    pattern: Dict[float, bool] = {}

    def well_defined(beta: float) -> bool:
        ok = _feasible_beta(sys, beta) is not None
        pattern[beta] = ok
        return ok

    low, high = 1e-4, 10.0
    while not well_defined(low):
        low /= 10.0
        if low < 1e-12:
            raise BracketError("no feasible beta found near zero", pattern)
    while well_defined(high):
        high *= 2.0
        if high > 1e8:
            raise BracketError("recursion stays well defined for every sampled beta", pattern)
    beta0 = _bisect(well_defined, low, high, tol)

    def below_gain_limit(beta: float) -> bool:
        riccati = _feasible_beta(sys, beta)
        return riccati is not None and not _excess_gain(sys, riccati)

    inside = beta0 * (1.0 - 10 * tol)
    if below_gain_limit(inside):
        beta1 = math.inf
    elif not below_gain_limit(low):
        raise BracketError("gain condition already violated at the smallest beta", pattern)
    else:
        beta1 = _bisect(below_gain_limit, low, inside, tol)

    frontier = BetaFrontier(beta0=beta0, beta1=beta1, beta_star=min(beta0, beta1), pattern=pattern)
    logger.debug(f"beta frontier: beta0={beta0:.6g}, beta1={beta1:.6g}")
    return frontier


def stationary_state_covariance(sys: LinearSystem, attack: Optional[GaussianAttack] = None) -> np.ndarray:
    """X = M X M^T + Sigma + B V B^T with M the (attacked) closed loop"""
    attack = GaussianAttack.zero(sys) if attack is None else attack
    loop = attacked_closed_loop(sys, attack)
    radius = spectral_radius(loop)
    if radius >= 1.0:
        raise InstabilityError(f"attacked closed loop is unstable (spectral radius {radius:.6g})")
    injected = sys.noise_cov + sys.b_mat @ attack.cov() @ sys.b_mat.T
    return _sym(solve_discrete_lyapunov(loop, injected))


def stationary_info_rate_linear(sys: LinearSystem, attack: GaussianAttack) -> float:
    """E_{x ~ mu} KL(N((L + B Theta) x, Sigma + R), N(L x, Sigma)) in closed form"""
    state_cov = stationary_state_covariance(sys, attack)
    injection = sys.b_mat @ attack.cov() @ sys.b_mat.T
    eigs = _noise_scaled_eigs(sys, injection)
    shift = sys.b_mat @ attack.gain()
    mean_term = float(np.trace(shift.T @ sys.noise_inv @ shift @ state_cov))
    return 0.5 * (float(np.sum(eigs)) - float(np.sum(np.log1p(eigs))) + mean_term)


def compare_values(sys: LinearSystem, beta: float, horizon: int) -> ValueComparison:
    """Normalized objectives of the optimal deterministic and Gaussian attacks from x_0 = 0

    Per step the deterministic attack scores -beta tr(Sigma P_{t+1}) and the
    Gaussian one -1/2 ln det(I + Sigma^{-1} R_t).
    """
    riccati = riccati_backward(sys, beta, horizon)
    trace_terms = -np.diff(riccati.offsets["deterministic"])
    log_det_terms = -np.diff(riccati.offsets["gaussian"])
    j_det = -beta * float(np.sum(trace_terms)) / horizon
    j_gauss = -float(np.sum(log_det_terms)) / horizon
    return ValueComparison(j_det=j_det, j_gauss=j_gauss, log_det_terms=log_det_terms, trace_terms=trace_terms)


@dataclass
class LinearTrace:
    frame: pd.DataFrame
    diverged: int


def simulate_linear(
    sys: LinearSystem,
    attack: GaussianAttack,
    horizon: int,
    change_time: int,
    trials: int,
    seed: Optional[int] = None,
    threads: int = 1,
) -> LinearTrace:
    """Per-step means of x^T x and of the Gaussian log-likelihood ratio z_t

    The attack starts at ``change_time`` using its step-0 law (stationary attacks
    repeat one law). Trials whose state blows up are counted as diverged and
    dropped from the averages.
    """
    if not 0 <= change_time <= horizon:
        raise InvalidInputError("need 0 <= change_time <= horizon")
    loop = sys.closed_loop
    nominal = multivariate_normal(mean=np.zeros(sys.n_states), cov=sys.noise_cov)
    attacked_laws = [
        multivariate_normal(
            mean=np.zeros(sys.n_states),
            cov=sys.noise_cov + sys.b_mat @ attack.cov(t) @ sys.b_mat.T,
            allow_singular=False,
        )
        for t in range(attack.horizon)
    ]

    def trial(rng: np.random.Generator) -> Optional[np.ndarray]:
        x = np.zeros(sys.n_states)
        record = np.zeros((2, horizon))
        noise = rng.multivariate_normal(np.zeros(sys.n_states), sys.noise_cov, size=horizon)
        for t in range(horizon):
            mean = loop @ x
            if t >= change_time:
                k = attack.step_index(t - change_time)
                theta = attack.gain_seq[k] @ x
                u_bar = rng.multivariate_normal(theta, attack.cov_seq[k]) if attack.kind == "gaussian" else theta
                x_next = mean + sys.b_mat @ u_bar + noise[t]
                z = attacked_laws[k].logpdf(x_next - mean - sys.b_mat @ theta) - nominal.logpdf(x_next - mean)
            else:
                x_next = mean + noise[t]
                z = 0.0
            x = x_next
            if not np.all(np.isfinite(x)) or float(x @ x) > STATE_OVERFLOW:
                return None
            record[0, t] = float(x @ x)
            record[1, t] = float(z)
        return record

    results = TrialScheduler(threads, label="linear trials").run(trial, trials, seed)
    finished = [r for r in results if r is not None]
    diverged = len(results) - len(finished)
    if diverged:
        logger.warning(f"⚠️ {diverged}/{trials} linear trials diverged")
    rows = []
    stacked = np.stack(finished) if finished else np.full((0, 2, horizon), np.nan)
    for t in range(horizon):
        x_mean, x_low, x_high = confidence_interval(stacked[:, 0, t])
        z_mean, z_low, z_high = confidence_interval(stacked[:, 1, t])
        rows.append((t + 1, x_mean, z_mean, x_low, x_high, z_low, z_high))
    frame = pd.DataFrame(rows, columns=["t", "mean_x_sq", "mean_z", "ci_low", "ci_high", "z_ci_low", "z_ci_high"])
    return LinearTrace(frame=frame, diverged=diverged)
