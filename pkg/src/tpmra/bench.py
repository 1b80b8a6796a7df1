"""Experiment runners: sync-time statistics, scaling sweeps, attack sweeps, throughput model."""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernel, tpm
from .attacks import AttackSummary, Strategy, run_attack_experiment
from .lfsr import trial_seed
from .tpm import Role, TpmParams

CSV_COLUMNS = ("trial", "K", "N", "L", "b", "t_min", "oracle_sync_iters", "detected_sync_iters",
               "packages", "failed", "attacker_overlap_mean", "attacker_frac_equal")

L_SWEEP = (2, 3, 4, 5, 6)
N_SWEEP = (10, 30, 100, 300, 1000)
MIN_TRIALS_FOR_FIT = 30


class Mode(str, enum.Enum):
    SYNC = "sync"
    SCALING_L = "scaling-L"
    SCALING_N = "scaling-N"
    ATTACK = "attack"
    THROUGHPUT = "throughput"
    EXCHANGE = "exchange"


@dataclass
class ExperimentConfig:
    mode: Mode = Mode.SYNC
    params: TpmParams = field(default_factory=TpmParams)
    trials: int = 100
    seed: int = 0x5EED
    output: Path | None = None
    bandwidth_bps: float | None = None
    overhead_bits_per_package: int = 88
    strategy: Strategy = Strategy.FLIPPING

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.bandwidth_bps is not None and self.bandwidth_bps <= 0:
            raise ValueError("bandwidth_bps must be positive")


@dataclass
class TrialRecord:
    trial: int
    params: TpmParams
    oracle: int | None
    detected: int | None
    packages: int
    failed: bool
    keys_equal: bool = True
    attacker_overlap_mean: float | None = None
    attacker_frac_equal: float | None = None

    def row(self) -> list[str]:
        p = self.params

        def num(v):
            return "" if v is None else str(v)

        def real(v):
            return "" if v is None else f"{v:.6f}"

        return [str(self.trial), str(p.K), str(p.N), str(p.L), str(p.b), str(p.t_min), num(self.oracle),
                num(self.detected), str(self.packages), str(int(self.failed)),
                real(self.attacker_overlap_mean), real(self.attacker_frac_equal)]


def run_sync_trial(params: TpmParams, base_seed: int, trial: int, stop: int = kernel.STOP_BOTH) -> tuple[TrialRecord, np.ndarray, np.ndarray]:
    """One exchange through the kernel; returns the record and both final weight matrices."""
    rng = np.random.default_rng([base_seed, trial])
    w_a = tpm.init_weights(rng, params)
    w_b = tpm.init_weights(rng, params)
    zero_b = params.for_role(Role.B).tie_role.zero_sign
    oracle, detected, it, packages, failed, _, keys_equal, _, _ = kernel.simulate(
        w_a, w_b, trial_seed(base_seed, trial), params.L, params.b, params.t_min, params.watchdog_max,
        1, zero_b, stop)
    if detected >= 0:
        packages = math.ceil(detected / params.b)
    record = TrialRecord(trial, params, None if oracle < 0 else oracle, None if detected < 0 else detected,
                         packages, bool(failed), bool(keys_equal))
    return record, w_a, w_b


def histogram(values, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    return np.histogram(np.asarray(values, dtype=float), bins=bins)


def count_modes(counts, z: float = 2.0) -> int:
    """Number of histogram peaks separated by a statistically real dip.

    Two neighbouring peaks stay distinct only if the lower one exceeds the
    deepest bin between them by more than ``z`` standard deviations of
    Poisson counting noise, ``sqrt(peak + valley)``; otherwise they merge.
    Single stray counts in a sparse tail therefore never form a mode.
    """
    c = np.asarray(counts, dtype=float)
    peaks = []
    i = 0
    while i < c.size:
        j = i
        while j + 1 < c.size and c[j + 1] == c[i]:
            j += 1
        left = c[i - 1] if i > 0 else -np.inf
        right = c[j + 1] if j + 1 < c.size else -np.inf
        if c[i] > 0 and c[i] > left and c[i] > right:
            peaks.append(i)
        i = j + 1
    merged = True
    while merged and len(peaks) > 1:
        merged = False
        for n in range(len(peaks) - 1):
            a, b = peaks[n], peaks[n + 1]
            low = min(c[a], c[b])
            valley = c[a:b + 1].min()
            if low - valley <= z * math.sqrt(low + valley):
                peaks.pop(n + 1 if c[b] <= c[a] else n)
                merged = True
                break
    return len(peaks)


def is_unimodal(counts, z: float = 2.0) -> bool:
    return count_modes(counts, z) <= 1


def text_histogram(values, bins: int = 20, width: int = 50) -> str:
    counts, edges = histogram(values, bins)
    top = counts.max() if counts.size and counts.max() else 1
    lines = []
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        lines.append(f"{lo:8.0f}-{hi:<8.0f} {c:5d} {'#' * int(round(width * c / top))}")
    return "\n".join(lines)


@dataclass
class SyncSummary:
    params: TpmParams
    records: list[TrialRecord]

    @property
    def oracle_times(self) -> np.ndarray:
        return np.array([r.oracle for r in self.records if not r.failed and r.oracle is not None], dtype=float)

    @property
    def detected_times(self) -> np.ndarray:
        return np.array([r.detected for r in self.records if r.detected is not None], dtype=float)

    @property
    def failures(self) -> int:
        return sum(r.failed for r in self.records)

    @property
    def key_mismatches(self) -> int:
        return sum(1 for r in self.records if not r.failed and not r.keys_equal)

    def stats(self, which: str = "oracle") -> dict[str, float]:
        v = self.oracle_times if which == "oracle" else self.detected_times
        if not v.size:
            return {"mean": math.nan, "median": math.nan, "std": math.nan, "n": 0}
        return {"mean": float(v.mean()), "median": float(np.median(v)), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "n": int(v.size)}

    @property
    def unimodal(self) -> bool:
        return is_unimodal(histogram(self.oracle_times)[0])

    def report(self) -> str:
        p = self.params
        o, d = self.stats("oracle"), self.stats("detected")
        lines = [f"K={p.K} N={p.N} L={p.L} b={p.b} t_min={p.t_min} watchdog={p.watchdog_max} tie_break={p.tie_break.value}",
                 f"trials={len(self.records)} watchdog_failures={self.failures} key_mismatches={self.key_mismatches}",
                 f"oracle sync   mean={o['mean']:.1f} median={o['median']:.1f} std={o['std']:.1f}",
                 f"detected sync mean={d['mean']:.1f} median={d['median']:.1f} std={d['std']:.1f}",
                 f"oracle histogram (unimodal={self.unimodal}):",
                 text_histogram(self.oracle_times) if self.oracle_times.size else "(no data)"]
        return "\n".join(lines)


def write_csv(records, path: Path | str | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(records, key=lambda r: (r.params.L, r.params.N, r.trial)):
        writer.writerow(r.row())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def run_sync_trials(config: ExperimentConfig, params: TpmParams | None = None) -> SyncSummary:
    params = params or config.params
    records = [run_sync_trial(params, config.seed, t)[0] for t in range(config.trials)]
    summary = SyncSummary(params, records)
    if config.output is not None and config.mode is Mode.SYNC:
        write_csv(records, config.output)
    return summary


@dataclass
class ScalingStudy:
    axis: str
    values: tuple[int, ...]
    summaries: list[SyncSummary]
    exponent: float | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return np.array([s.stats()["mean"] for s in self.summaries])

    def ratio(self, num: int, den: int) -> float:
        m = dict(zip(self.values, self.means))
        return float(m[num] / m[den])

    def report(self) -> str:
        lines = [f"{self.axis:>6} {'mean':>9} {'median':>9} {'std':>9} {'fails':>6}"]
        ref = self.values.index(100) if self.axis == "N" and 100 in self.values else None
        for v, s in zip(self.values, self.summaries):
            st = s.stats()
            extra = f"  ratio_to_N100={st['mean'] / self.summaries[ref].stats()['mean']:.3f}" if ref is not None else ""
            lines.append(f"{v:>6} {st['mean']:9.1f} {st['median']:9.1f} {st['std']:9.1f} {s.failures:6d}{extra}")
        if self.exponent is not None:
            lines.append(f"power-law fit: mean sync time ~ {self.axis}^{self.exponent:.3f}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def power_law_exponent(xs, ys) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def run_scaling_study(config: ExperimentConfig, values=None) -> ScalingStudy:
    if config.mode not in (Mode.SCALING_L, Mode.SCALING_N):
        raise ValueError(f"scaling study needs mode scaling-L or scaling-N, got {config.mode.value}")
    base = config.params
    if config.mode is Mode.SCALING_L:
        axis, values = "L", tuple(values or L_SWEEP)
        sweep = [TpmParams(base.K, base.N, L, base.b, base.t_min, None, base.role, base.tie_break) for L in values]
    else:
        axis, values = "N", tuple(values or N_SWEEP)
        sweep = [TpmParams(base.K, N, base.L, base.b, base.t_min, None, base.role, base.tie_break) for N in values]
    summaries = [run_sync_trials(config, p) for p in sweep]
    study = ScalingStudy(axis, values, summaries)
    if config.trials < MIN_TRIALS_FOR_FIT:
        study.warnings.append(f"only {config.trials} trials per point; fit is unstable below {MIN_TRIALS_FOR_FIT}")
        warnings.warn(study.warnings[-1], RuntimeWarning, stacklevel=2)
    if axis == "L":
        study.exponent = power_law_exponent(values, study.means)
    if config.output is not None:
        write_csv([r for s in summaries for r in s.records], config.output)
    return study


def run_attack_sweep(config: ExperimentConfig, values=(1, 2, 3, 4)) -> list[AttackSummary]:
    base = config.params
    summaries = []
    for L in values:
        params = TpmParams(base.K, base.N, L, base.b, base.t_min, None, base.role, base.tie_break)
        summaries.append(run_attack_experiment(params, config.strategy, config.trials, config.seed))
    if config.output is not None:
        write_csv(attack_records(summaries), config.output)
    return summaries


def attack_records(summaries: list[AttackSummary]) -> list[TrialRecord]:
    records = []
    for s in summaries:
        for r in s.results:
            packages = math.ceil((r.party_sync_iter or 0) / s.params.b)
            records.append(TrialRecord(r.trial, s.params, r.party_sync_iter, None, packages, r.failed, True,
                                       r.overlap_mean, r.frac_equal))
    return records


def attack_report(summaries: list[AttackSummary]) -> str:
    lines = [f"{'L':>3} {'strategy':>9} {'success_98':>10} {'exact':>6} {'overlap':>8} {'slower':>7} {'fails':>6}"]
    for s in summaries:
        lines.append(f"{s.params.L:>3} {s.strategy.value:>9} {s.success_98_rate:10.3f} {s.exact_success_rate:6.3f} "
                     f"{s.mean_overlap:8.3f} {s.slower_fraction:7.3f} {s.failures:6d}")
    return "\n".join(lines)


# -- throughput ---------------------------------------------------------------

@dataclass(frozen=True)
class ThroughputInputs:
    t_avg: float = 400
    b: int = 32
    overhead: int = 88
    bandwidth_bps: float = math.inf
    compute_rate: float | None = None
    half_duplex: bool = False

    def __post_init__(self):
        if self.t_avg <= 0 or self.b <= 0 or self.bandwidth_bps <= 0:
            raise ValueError("t_avg, b and bandwidth_bps must be positive")
        if self.overhead < 0:
            raise ValueError("overhead must be non-negative")
        if self.compute_rate is not None and self.compute_rate <= 0:
            raise ValueError("compute_rate must be positive")


@dataclass(frozen=True)
class Throughput:
    packages_per_key: int
    bits_per_key: int
    channel_limited: float
    compute_limited: float
    effective: float

    @property
    def bottleneck(self) -> str:
        return "channel" if self.channel_limited <= self.compute_limited else "compute"


def throughput_model(inputs: ThroughputInputs) -> Throughput:
    """Keys per second for a given link, full duplex unless ``half_duplex``."""
    packages = math.ceil(inputs.t_avg / inputs.b)
    bits = packages * (inputs.b + inputs.overhead)
    channel = inputs.bandwidth_bps / bits
    if inputs.half_duplex:
        channel /= 2
    compute = inputs.compute_rate / inputs.t_avg if inputs.compute_rate else math.inf
    return Throughput(packages, bits, channel, compute, min(channel, compute))


# Nominal link rates in bit/s.
BUSES = {
    "i2c-fast": 400e3,
    "can": 1e6,
    "pci-32-33mhz": 32 * 33e6,
}


def throughput_table(t_avg=400, b=32, overhead=88, compute_rate=None, half_duplex=False) -> str:
    lines = [f"{'bus':>14} {'bandwidth':>12} {'channel keys/s':>15} {'compute keys/s':>15} {'effective':>12} bottleneck"]
    for name, bw in BUSES.items():
        r = throughput_model(ThroughputInputs(t_avg, b, overhead, bw, compute_rate, half_duplex))
        lines.append(f"{name:>14} {bw:12.4g} {r.channel_limited:15.1f} {r.compute_limited:15.1f} "
                     f"{r.effective:12.1f} {r.bottleneck}")
    return "\n".join(lines)
