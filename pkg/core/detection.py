"""
Change detectors on the victim's side
CUSUM with the known attacked kernel, a window-limited GLR that maximizes the
likelihood over the attacked-kernel family, threshold calibration and Monte
Carlo detection delays.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from core.attack_mdp import AttackPolicy, identity_attack
from core.divergence import absolutely_continuous
from core.errors import InvalidInputError
from core.info_rate import LlrTable, log_likelihood_ratio
from core.mdp import Policy, TabularMdp
from core.scheduler import TrialScheduler
from core.simulation import make_sampler, simulate_with_sampler

logger = logging.getLogger("core.detection")

ESTIMATE_FLOOR = 1e-12
DETECTORS = ("cusum", "glr")
EM_ITERATIONS = 50
EM_TOLERANCE = 1e-5
# share of the previous step's mixture weights kept when warm-starting EM
WARM_START_SHARE = 0.999


@dataclass
class CusumState:
    statistic: float = 0.0
    step_count: int = 0


@dataclass
class GlrState:
    """Shared observation buffer; window n looks at the last spacing * n entries

    ``memo`` holds the last fitted mixture weights per pair for warm starts.
    """

    n_windows: int = 38
    spacing: int = 5
    buffer: Deque[Tuple[int, int, int]] = field(default=None, repr=False)
    statistic: float = 0.0
    step_count: int = 0
    memo: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_windows < 1 or self.spacing < 1:
            raise InvalidInputError("GLR needs at least one window of positive length")
        if self.buffer is None:
            self.buffer = deque(maxlen=self.n_windows * self.spacing)

    def window_sizes(self) -> List[int]:
        return [self.spacing * n for n in range(1, self.n_windows + 1)]


@dataclass
class DetectorCalibration:
    delta: float
    horizon: int
    threshold: float
    method: str = "cusum_bound"

    def to_dict(self):
        return {"delta": self.delta, "horizon": self.horizon, "threshold": self.threshold, "method": self.method}


@dataclass
class DelayReport:
    """Mean of (T - nu) over trials that stop after the change

    A crossing at or before nu is a false alarm and stays out of the mean;
    undetected trials are only counted.
    """

    detector: str
    mean_delay: float
    ci_low: float
    ci_high: float
    detected: int
    undetected: int
    false_alarms: int
    delays: np.ndarray = field(repr=False, default=None)

    @property
    def trials(self) -> int:
        return self.detected + self.undetected + self.false_alarms

    def to_dict(self):
        return {
            "detector": self.detector,
            "mean_delay": self.mean_delay,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "detected": self.detected,
            "undetected": self.undetected,
            "false_alarms": self.false_alarms,
        }


def cusum_step(state: CusumState, z: float) -> CusumState:
    """c_t = max(0, c_{t-1} + z_t)"""
    if math.isnan(z):
        raise InvalidInputError("log-likelihood ratio is NaN")
    return CusumState(statistic=max(0.0, state.statistic + z), step_count=state.step_count + 1)


def calibrate_threshold(delta: float, horizon: int, info_rate: Optional[float] = None) -> DetectorCalibration:
    """Threshold c with 2 m e^{-c} = delta"""
    if not 0.0 < delta < 1.0:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if horizon < 1:
        raise InvalidInputError("horizon must be at least 1")
    if info_rate is not None and info_rate > 0 and horizon <= math.log(1.0 / delta) / info_rate:
        raise InvalidInputError(
            f"horizon {horizon} is too short for rate {info_rate:.4g}: need m > ln(1/delta)/I"
        )
    return DetectorCalibration(delta=delta, horizon=horizon, threshold=math.log(2.0 * horizon / delta))


def _nominal_support_broken(window: np.ndarray, mdp: TabularMdp) -> bool:
    return bool(np.any(mdp.transition[window[:, 0], window[:, 1], window[:, 2]] == 0))


class EmpiricalKernelEstimate:
    """Unrestricted plug-in: raw transition frequencies floored at ESTIMATE_FLOOR"""

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp

    def window_statistic(self, window: np.ndarray) -> float:
        """sum ln(P_hat / P) over the window"""
        mdp = self.mdp
        n_states, n_actions = mdp.n_states, mdp.n_actions
        if _nominal_support_broken(window, mdp):
            return math.inf
        pair = window[:, 0] * n_actions + window[:, 1]
        triple = pair * n_states + window[:, 2]
        triple_keys, triple_counts = np.unique(triple, return_counts=True)
        pair_keys, pair_counts = np.unique(pair, return_counts=True)
        distinct_next = np.bincount(triple_keys // n_states, minlength=n_states * n_actions)

        visits = np.zeros(n_states * n_actions)
        visits[pair_keys] = pair_counts
        triple_pair = triple_keys // n_states
        estimate = triple_counts / visits[triple_pair]
        estimate = np.maximum(estimate, ESTIMATE_FLOOR) / (1.0 + (n_states - distinct_next[triple_pair]) * ESTIMATE_FLOOR)
        nominal = mdp.transition.reshape(n_states * n_actions, n_states)[triple_pair, triple_keys % n_states]
        return float(np.sum(triple_counts * np.log(estimate / nominal)))

    def statistic(self, history: np.ndarray, sizes: Sequence[int], memo: Dict) -> float:
        best = 0.0
        for size in sizes:
            if size > len(history):
                break
            best = max(best, self.window_statistic(history[-size:]))
        return best


class AttackKernelFamily:
    """Attacked kernels P_phi(s, a) = sum_abar phi(abar | s, a) P(s, abar)

    Only replacements with P(s, abar) << P(s, a) enter the family, and the
    mixture weights are fitted per pair and per window by EM. A pair whose
    admissible rows all coincide can only produce the nominal law and adds
    nothing to the statistic.
    """

    def __init__(self, mdp: TabularMdp, iterations: int = EM_ITERATIONS, tol: float = EM_TOLERANCE):
        self.mdp = mdp
        self.iterations = iterations
        self.tol = tol
        self.nominal = mdp.transition.reshape(mdp.n_states * mdp.n_actions, mdp.n_states)
        self.candidates: Dict[int, np.ndarray] = {}
        admissible = absolutely_continuous(mdp.transition)
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                rows = np.unique(mdp.transition[s, admissible[s, a]], axis=0)
                if len(rows) > 1:
                    self.candidates[s * mdp.n_actions + a] = rows
        logger.debug(f"attack family: {len(self.candidates)} of {self.nominal.shape[0]} pairs can be perturbed")

    def _mixture_gain(self, pair: int, columns: np.ndarray, counts: np.ndarray, memo: Dict) -> np.ndarray:
        """Per-window max over mixture weights of sum n ln(P_w / P), clipped at 0"""
        rows = self.candidates[pair][:, columns]
        nominal = self.nominal[pair, columns]
        n_windows, n_rows = counts.shape[0], rows.shape[0]
        total = counts.sum(axis=1)
        uniform = np.full(n_rows, 1.0 / n_rows)

        weights = np.tile(uniform, (n_windows, 1))
        previous = memo.get(pair)
        if previous is not None:
            shared = min(len(previous), n_windows)
            weights[:shared] = WARM_START_SHARE * previous[:shared] + (1.0 - WARM_START_SHARE) * uniform

        observed = counts > 0
        for _ in range(self.iterations):
            mixture = weights @ rows
            ratio = np.divide(counts, mixture, out=np.zeros_like(counts), where=observed & (mixture > 0))
            updated = weights * (ratio @ rows.T) / np.maximum(total, 1.0)[:, None]
            updated[total == 0] = uniform
            converged = np.max(np.abs(updated - weights)) < self.tol
            weights = updated
            if converged:
                break
        memo[pair] = weights

        mixture = np.maximum(weights @ rows, ESTIMATE_FLOOR)
        gain = np.sum(np.where(observed, counts * np.log(mixture / nominal), 0.0), axis=1)
        return np.maximum(gain, 0.0)

    def statistic(self, history: np.ndarray, sizes: Sequence[int], memo: Dict) -> float:
        active = np.array([size for size in sizes if size <= len(history)], dtype=int)
        if active.size == 0:
            return 0.0
        recent = history[-active[-1]:]
        if _nominal_support_broken(recent, self.mdp):
            return math.inf

        pair = recent[:, 0] * self.mdp.n_actions + recent[:, 1]
        starts = len(recent) - active
        totals = np.zeros(active.size)
        for key in np.unique(pair):
            key = int(key)
            if key not in self.candidates:
                continue
            positions = np.nonzero(pair == key)[0]
            columns, column_of = np.unique(recent[positions, 2], return_inverse=True)
            in_window = (positions[None, :] >= starts[:, None]).astype(float)
            counts = in_window @ np.eye(columns.size)[column_of]
            totals += self._mixture_gain(key, columns, counts, memo)
        return float(totals.max())


ESTIMATORS = {"family": AttackKernelFamily, "empirical": EmpiricalKernelEstimate}


def kernel_estimator(mdp: TabularMdp, estimator: str = "family"):
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"unknown GLR estimator {estimator!r}; expected one of {tuple(ESTIMATORS)}")
    return ESTIMATORS[estimator](mdp)


def glr_step(
    state: GlrState,
    obs: Tuple[int, int, int],
    mdp: TabularMdp,
    victim: Optional[Policy] = None,
    estimator: Union[str, AttackKernelFamily, EmpiricalKernelEstimate] = "family",
) -> GlrState:
    """Append one observation and refresh g_t over the windows that are full

    Passing a prebuilt estimator avoids rebuilding the attack family on every step.
    """
    s, a, s_next = (int(x) for x in obs)
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions and 0 <= s_next < mdp.n_states):
        raise InvalidInputError(f"observation {obs} is out of range")
    if isinstance(estimator, str):
        estimator = kernel_estimator(mdp, estimator)
    state.buffer.append((s, a, s_next))
    state.step_count += 1
    state.statistic = estimator.statistic(np.asarray(state.buffer, dtype=int), state.window_sizes(), state.memo)
    return state


def _run_detector(detector, stream: np.ndarray, stop: bool) -> Tuple[np.ndarray, Optional[int]]:
    stats = np.empty(len(stream))
    crossing = None
    for t, obs in enumerate(stream):
        stats[t] = detector.step(obs)
        if crossing is None and stats[t] >= detector.threshold:
            crossing = t + 1
            if stop:
                return stats[:crossing], crossing
    return stats, crossing


class Cusum:
    """CUSUM detector driven by a known log-likelihood ratio table"""

    def __init__(self, llr: LlrTable, threshold: float = math.inf):
        self.llr = llr
        self.threshold = threshold
        self.state = CusumState()

    def reset(self):
        self.state = CusumState()

    def step(self, obs: Sequence[int]) -> float:
        self.state = cusum_step(self.state, self.llr(*obs))
        return self.state.statistic

    def run(self, stream: np.ndarray, stop: bool = False) -> Tuple[np.ndarray, Optional[int]]:
        """Statistics after each observation and the 1-based index of the first crossing

        With ``stop`` the run ends at the crossing and the statistics are truncated there.
        """
        return _run_detector(self, stream, stop)


class WindowLimitedGlr:
    """GLR over geometrically growing windows

    ``estimator`` is "family" (mixtures of the admissible attacked rows),
    "empirical" (unrestricted frequencies) or a prebuilt estimator, which
    can be shared between detectors.
    """

    def __init__(self, mdp: TabularMdp, threshold: float = math.inf, n_windows: int = 38, spacing: int = 5,
                 estimator: Union[str, AttackKernelFamily, EmpiricalKernelEstimate] = "family"):
        self.mdp = mdp
        self.threshold = threshold
        self.n_windows = n_windows
        self.spacing = spacing
        self.estimator = kernel_estimator(mdp, estimator) if isinstance(estimator, str) else estimator
        self.state = GlrState(n_windows, spacing)

    def reset(self):
        self.state = GlrState(self.n_windows, self.spacing)

    def step(self, obs: Sequence[int]) -> float:
        self.state = glr_step(self.state, obs, self.mdp, estimator=self.estimator)
        return self.state.statistic

    def run(self, stream: np.ndarray, stop: bool = False) -> Tuple[np.ndarray, Optional[int]]:
        return _run_detector(self, stream, stop)


def confidence_interval(samples: np.ndarray, level: float = 0.99) -> Tuple[float, float, float]:
    """Mean with a normal-approximation interval"""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(np.mean(samples))
    if samples.size == 1 or not np.isfinite(mean):
        return mean, mean, mean
    half = float(norm.ppf(0.5 + level / 2.0) * np.std(samples, ddof=1) / math.sqrt(samples.size))
    return mean, mean - half, mean + half


def calibrate_glr_threshold(
    mdp: TabularMdp,
    victim: Policy,
    delta: float,
    horizon: int,
    trials: int,
    seed: Optional[int] = None,
    threads: int = 1,
    progress: bool = False,
    n_windows: int = 38,
    spacing: int = 5,
    estimator: str = "family",
) -> DetectorCalibration:
    """GLR threshold from unattacked streams

    ln(2m/delta) only bounds the CUSUM false-alarm rate. The GLR statistic
    over-fits every window, so the threshold is raised to the (1 - delta/2)
    empirical quantile of max_t g_t over ``trials`` clean streams of length
    ``horizon``, never going below ln(2m/delta).
    """
    bound = calibrate_threshold(delta, horizon)
    if trials < 1:
        raise InvalidInputError("GLR calibration needs at least one trial")
    sampler = make_sampler(mdp, victim, identity_attack(mdp.n_states, mdp.n_actions))
    shared = kernel_estimator(mdp, estimator)

    def trial(rng: np.random.Generator) -> float:
        stream = simulate_with_sampler(sampler, horizon, horizon, rng).observations()
        stats, _ = WindowLimitedGlr(mdp, n_windows=n_windows, spacing=spacing, estimator=shared).run(stream)
        return float(stats.max()) if stats.size else 0.0

    peaks = np.array(TrialScheduler(threads, progress, label="glr calibration").run(trial, trials, seed))
    quantile = float(np.quantile(peaks, 1.0 - delta / 2.0, method="higher"))
    threshold = max(bound.threshold, quantile)
    logger.info(f"📏 GLR threshold {threshold:.4g} (bound {bound.threshold:.4g}, clean-stream quantile {quantile:.4g})")
    return DetectorCalibration(delta=delta, horizon=horizon, threshold=threshold, method="monte_carlo")


def estimate_detection_delay(
    mdp: TabularMdp,
    victim: Policy,
    attack: AttackPolicy,
    detector_kind: str,
    calibration: DetectorCalibration,
    change_time: int,
    trials: int,
    seed: Optional[int] = None,
    horizon: Optional[int] = None,
    threads: int = 1,
    progress: bool = False,
    n_windows: int = 38,
    spacing: int = 5,
    estimator: str = "family",
    monitored: Optional[AttackPolicy] = None,
) -> DelayReport:
    """Monte Carlo delay T - nu of the first threshold crossing after the change

    Trajectories start from the victim's stationary law and run for
    ``horizon`` steps (default nu + calibration.horizon). A crossing at or
    before nu counts as a false alarm only.
    CUSUM tracks the log-likelihood ratio of ``monitored``, by default ``attack``.
    """
    if detector_kind not in DETECTORS:
        raise InvalidInputError(f"unknown detector {detector_kind!r}; expected one of {DETECTORS}")
    horizon = change_time + calibration.horizon if horizon is None else horizon
    sampler = make_sampler(mdp, victim, attack)
    monitored = attack if monitored is None else monitored
    llr = log_likelihood_ratio(mdp, monitored) if detector_kind == "cusum" else None
    shared = kernel_estimator(mdp, estimator) if detector_kind == "glr" else None

    def trial(rng: np.random.Generator) -> Optional[int]:
        stream = simulate_with_sampler(sampler, change_time, horizon, rng).observations()
        if llr is not None:
            detector = Cusum(llr, calibration.threshold)
        else:
            detector = WindowLimitedGlr(mdp, calibration.threshold, n_windows, spacing, estimator=shared)
        return detector.run(stream, stop=True)[1]

    crossings = TrialScheduler(threads, progress, label=f"{detector_kind} trials").run(trial, trials, seed)
    stopped = np.array([c for c in crossings if c is not None], dtype=float)
    false_alarms = int(np.sum(stopped <= change_time))
    delays = stopped[stopped > change_time] - change_time
    mean, low, high = confidence_interval(delays)
    logger.debug(f"{detector_kind}: mean delay {mean:.4g} over {delays.size}/{trials} detected trials, "
                 f"{false_alarms} false alarms")
    return DelayReport(
        detector=detector_kind,
        mean_delay=mean,
        ci_low=low,
        ci_high=high,
        detected=int(delays.size),
        undetected=trials - int(stopped.size),
        false_alarms=false_alarms,
        delays=delays,
    )


def detection_trace(
    mdp: TabularMdp,
    victim: Policy,
    attack: AttackPolicy,
    change_time: int,
    horizon: int,
    trials: int,
    seed: Optional[int] = None,
    threads: int = 1,
    progress: bool = False,
    n_windows: int = 38,
    spacing: int = 5,
    estimator: str = "family",
) -> pd.DataFrame:
    """Per-step CUSUM and GLR statistics averaged over trials, with 99% intervals"""
    sampler = make_sampler(mdp, victim, attack)
    llr = log_likelihood_ratio(mdp, attack)
    shared = kernel_estimator(mdp, estimator)

    def trial(rng: np.random.Generator) -> np.ndarray:
        stream = simulate_with_sampler(sampler, change_time, horizon, rng).observations()
        cusum, _ = Cusum(llr).run(stream)
        glr, _ = WindowLimitedGlr(mdp, n_windows=n_windows, spacing=spacing, estimator=shared).run(stream)
        return np.vstack([cusum, glr])

    traces = np.stack(TrialScheduler(threads, progress, label="trace trials").run(trial, trials, seed))
    rows = []
    for t in range(horizon):
        c_mean, c_low, c_high = confidence_interval(traces[:, 0, t])
        g_mean, g_low, g_high = confidence_interval(traces[:, 1, t])
        rows.append((t + 1, c_mean, c_low, c_high, g_mean, g_low, g_high))
    return pd.DataFrame(
        rows, columns=["t", "cusum_mean", "cusum_ci_low", "cusum_ci_high", "glr_mean", "glr_ci_low", "glr_ci_high"]
    )


def false_alarm_rate(
    mdp: TabularMdp,
    victim: Policy,
    detector_kind: str,
    calibration: DetectorCalibration,
    trials: int,
    seed: Optional[int] = None,
    monitored: Optional[AttackPolicy] = None,
    horizon: Optional[int] = None,
    threads: int = 1,
    progress: bool = False,
    n_windows: int = 38,
    spacing: int = 5,
    estimator: str = "family",
) -> float:
    """Fraction of unattacked streams on which the detector crosses its threshold

    CUSUM needs the ``monitored`` attack, whose log-likelihood ratio it tracks;
    streams run for ``horizon`` steps (default calibration.horizon).
    """
    if detector_kind == "cusum" and monitored is None:
        raise InvalidInputError("CUSUM false alarms need the monitored attack's log-likelihood ratio")
    horizon = calibration.horizon if horizon is None else horizon
    report = estimate_detection_delay(
        mdp, victim, identity_attack(mdp.n_states, mdp.n_actions), detector_kind, calibration,
        change_time=horizon, trials=trials, seed=seed, horizon=horizon, threads=threads, progress=progress,
        n_windows=n_windows, spacing=spacing, estimator=estimator, monitored=monitored,
    )
    return report.false_alarms / trials
