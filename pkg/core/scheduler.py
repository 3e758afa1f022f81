import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional

import numpy as np
from tqdm import tqdm


@dataclass
class TrialTask:
    """One Monte Carlo trial: a function of a generator plus fixed arguments"""
    trial_id: int
    func: Callable
    seed: np.random.SeedSequence
    args: tuple = ()
    kwargs: dict = None

    def __post_init__(self):
        if self.kwargs is None:
            self.kwargs = {}

    def run(self) -> Any:
        return self.func(np.random.default_rng(self.seed), *self.args, **self.kwargs)


class TrialScheduler:
    """Fans trials out over threads with per-trial seeds

    Seeds are spawned from one root SeedSequence and results come back in
    trial order, so the output does not depend on ``threads``.
    """

    def __init__(self, threads: int = 1, progress: bool = False, label: str = "trials"):
        self.logger = logging.getLogger("scheduler")
        self.threads = max(1, int(threads))
        self.progress = progress
        self.label = label

    def schedule(self, func: Callable, trials: int, seed: Optional[int], *args, **kwargs) -> List[TrialTask]:
        """Build one task per trial, seeded deterministically from ``seed``"""
        children = np.random.SeedSequence(seed).spawn(trials)
        return [TrialTask(i, func, child, args, kwargs) for i, child in enumerate(children)]

    def run(self, func: Callable, trials: int, seed: Optional[int], *args, **kwargs) -> List[Any]:
        """Run ``func(rng, *args, **kwargs)`` once per trial"""
        if trials < 1:
            raise ValueError("trials must be at least 1")
        tasks = self.schedule(func, trials, seed, *args, **kwargs)
        self.logger.debug(f"⏰ Running {trials} {self.label} on {self.threads} thread(s)")

        if self.threads == 1:
            iterator = map(TrialTask.run, tasks)
            if self.progress:
                iterator = tqdm(iterator, total=trials, desc=self.label)
            return list(iterator)

        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            iterator = executor.map(TrialTask.run, tasks)
            if self.progress:
                iterator = tqdm(iterator, total=trials, desc=self.label)
            return list(iterator)
