"""Passive eavesdroppers against a synchronizing pair.

The attacker holds its own TPM of the same structure, sees every input and
both parties' outputs, and never sends anything.  Like the parties it
evaluates a whole bit package with frozen weights before learning.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernel, tpm
from .lfsr import trial_seed
from .tpm import Role, TpmParams


class Strategy(str, enum.Enum):
    NAIVE = "naive"
    FLIPPING = "flipping"


_KERNEL_ATTACK = {Strategy.NAIVE: kernel.ATTACK_NAIVE, Strategy.FLIPPING: kernel.ATTACK_FLIPPING}


@dataclass(frozen=True)
class AttackerState:
    weights: np.ndarray
    strategy: Strategy = Strategy.NAIVE
    L: int = 3
    role_convention: Role = Role.A


def flip_target(fields: np.ndarray) -> int:
    """Hidden unit with the smallest |field|; lowest index on ties."""
    return int(np.argmin(np.abs(fields)))


def attack_package(att: AttackerState, inputs: np.ndarray, outs_a, outs_b) -> AttackerState:
    """Evaluate ``inputs`` (shape ``(b, K, N)``) with frozen weights, then learn in order."""
    evals = [tpm.evaluate(att.weights, x, att.role_convention) for x in inputs]
    weights = att.weights
    for x, ev, oa, ob in zip(inputs, evals, outs_a, outs_b):
        if oa != ob:
            continue
        if ev.output != oa:
            if att.strategy is not Strategy.FLIPPING:
                continue
            hidden = ev.hidden.copy()
            k = flip_target(ev.fields)
            hidden[k] = -hidden[k]
            ev = tpm.Evaluation(int(np.prod(hidden, dtype=np.int64)), hidden, ev.fields)
        weights = tpm.hebbian_update(weights, x, ev, oa, att.L)
    return replace(att, weights=weights)


def naive_step(att: AttackerState, x: np.ndarray, out_a: int, out_b: int) -> AttackerState:
    return attack_package(replace(att, strategy=Strategy.NAIVE), x[None], [out_a], [out_b])


def flipping_step(att: AttackerState, x: np.ndarray, out_a: int, out_b: int) -> AttackerState:
    return attack_package(replace(att, strategy=Strategy.FLIPPING), x[None], [out_a], [out_b])


@dataclass
class AttackResult:
    trial: int
    party_sync_iter: int | None
    attacker_sync_iter: int | None
    overlap_mean: float
    frac_equal: float
    failed: bool = False

    def success(self, threshold: float = 0.98) -> bool:
        return not self.failed and self.overlap_mean >= threshold

    @property
    def success_98(self) -> bool:
        return self.success(0.98)

    @property
    def exact_success(self) -> bool:
        return not self.failed and self.frac_equal == 1.0

    @property
    def sync_ratio(self) -> float:
        """Attacker key time over party key time.

        The attacker cannot hold a key before the parties have one, so its
        time is floored at the party sync time; never synchronizing is
        ``inf``.
        """
        if self.failed or not self.party_sync_iter:
            return math.nan
        if self.attacker_sync_iter is None:
            return math.inf
        return max(self.attacker_sync_iter, self.party_sync_iter) / self.party_sync_iter


@dataclass
class AttackSummary:
    params: TpmParams
    strategy: Strategy
    results: list[AttackResult]

    @property
    def completed(self) -> list[AttackResult]:
        return [r for r in self.results if not r.failed]

    def success_rate(self, threshold: float = 0.98) -> float:
        done = self.completed
        return sum(r.success(threshold) for r in done) / len(done) if done else math.nan

    @property
    def success_98_rate(self) -> float:
        return self.success_rate(0.98)

    @property
    def exact_success_rate(self) -> float:
        done = self.completed
        return sum(r.exact_success for r in done) / len(done) if done else math.nan

    @property
    def mean_overlap(self) -> float:
        return float(np.mean([r.overlap_mean for r in self.completed]))

    @property
    def slower_fraction(self) -> float:
        """Fraction of trials where the attacker agrees with A strictly after the parties sync."""
        done = self.completed
        return sum(r.sync_ratio > 1 for r in done) / len(done) if done else math.nan

    @property
    def failures(self) -> int:
        return sum(r.failed for r in self.results)


def run_attack_trial(params: TpmParams, strategy: Strategy, base_seed: int, trial: int,
                     attacker_init: str = "random") -> AttackResult:
    rng = np.random.default_rng([base_seed, trial])
    w_a = tpm.init_weights(rng, params)
    w_b = tpm.init_weights(rng, params)
    w_e = tpm.init_weights(rng, params) if attacker_init == "random" else w_a.copy()
    zero_b = params.for_role(Role.B).tie_role.zero_sign
    oracle, _, _, _, failed, att_sync, _, _, _ = kernel.simulate(
        w_a, w_b, trial_seed(base_seed, trial), params.L, params.b, params.t_min, params.watchdog_max,
        1, zero_b, kernel.STOP_ORACLE, w_e, _KERNEL_ATTACK[Strategy(strategy)], 1)
    ov = tpm.overlap(w_e, w_a)
    return AttackResult(trial, None if oracle < 0 else oracle, None if att_sync < 0 else att_sync,
                        ov.mean, ov.frac_equal, bool(failed))


def run_attack_experiment(params: TpmParams, strategy: Strategy | str, trials: int, base_seed: int = 1,
                          attacker_init: str = "random") -> AttackSummary:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    strategy = Strategy(strategy)
    results = [run_attack_trial(params, strategy, base_seed, t, attacker_init) for t in range(trials)]
    return AttackSummary(params, strategy, results)
