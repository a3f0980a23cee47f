"""Closed-loop allocation engine and SMT co-execution simulator.

Each scheduling quantum the engine:

1. polls per-thread observations for the pairs currently sharing cores,
2. estimates every thread's isolated behavior by inverting the
   interference model on each pair's observations,
3. predicts the combined slowdown of every possible pair from those
   estimates, and
4. solves a minimum-weight perfect matching to pick the next quantum's
   thread-to-core assignment.

Observations come either from a synthetic workload simulator (closed
loop: the chosen assignment determines progress) or from a recorded
trace (open loop: decisions are logged against fixed observations).

The simulator advances each app through a cyclic sequence of phases.
An app's isolated progress rate is ``fdc * dispatch_width *
cycles_per_quantum`` instructions per quantum; co-running divides that
by the pair's model-predicted slowdown.  Completed apps are relaunched
immediately so SMT pressure stays constant, and a run ends once every
app has finished its first launch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .counters import RawCounterSample, TraceHeader, open_trace
from .dispatch import (
    CATEGORIES,
    CategoryTriple,
    CategoryVector,
    UNIFORM_VECTOR,
    characterize,
    normalize,
)
from .errors import ConfigError, EndOfTrace, UnsupportedPlatformError, WorkloadError
from .interference import (
    ModelCoefficients,
    PairPrediction,
    REFERENCE_COEFFICIENTS,
    invert,
    predict_pair,
)
from .matcher import IDLE_NODE, Matching, build_graph, min_weight_perfect_matching

#: Nominal simulated clock: cycles per millisecond (1 GHz).
CYCLES_PER_MS = 1_000_000

POLICIES = ("synpa", "random", "static")

LOG_VERSION = 1


# ---------------------------------------------------------------------------
# Synthetic workloads


@dataclass(frozen=True)
class Phase:
    """A stretch of ground-truth isolated behavior."""

    vector: CategoryVector
    instructions: int

    def __post_init__(self) -> None:
        if self.instructions < 1:
            raise WorkloadError("phase instruction budget must be >= 1")
        if self.vector.fdc <= 0.0:
            raise WorkloadError(
                "phase fdc fraction must be positive (an app that never "
                "dispatches makes no progress)"
            )


@dataclass(frozen=True)
class SyntheticApp:
    """A simulated app: cyclic phases plus a per-launch instruction target."""

    app_id: str
    phases: tuple[Phase, ...]
    target_instructions: int

    def __post_init__(self) -> None:
        if not self.phases:
            raise WorkloadError(f"app {self.app_id!r} needs at least one phase")
        if self.target_instructions < 1:
            raise WorkloadError(f"app {self.app_id!r} target must be >= 1")
        if self.app_id == IDLE_NODE:
            raise WorkloadError(f"app id {IDLE_NODE!r} is reserved")

    def isolated_quanta(self, dispatch_width: int, cycles_per_quantum: int) -> float:
        """Ground-truth isolated duration of one launch, in quanta."""
        remaining = float(self.target_instructions)
        quanta = 0.0
        idx = 0
        into = 0.0
        while remaining > 0.0:
            phase = self.phases[idx]
            rate = phase.vector.fdc * dispatch_width * cycles_per_quantum
            left = phase.instructions - into
            take = min(remaining, left)
            quanta += take / rate
            remaining -= take
            into += take
            if into >= phase.instructions:
                idx = (idx + 1) % len(self.phases)
                into = 0.0
        return quanta

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "target_instructions": self.target_instructions,
            "phases": [
                {
                    "instructions": p.instructions,
                    "vector": p.vector.as_dict(),
                }
                for p in self.phases
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SyntheticApp":
        try:
            phases = tuple(
                Phase(
                    vector=CategoryVector(**{k: float(v) for k, v in p["vector"].items()}),
                    instructions=int(p["instructions"]),
                )
                for p in doc["phases"]
            )
            return cls(
                app_id=str(doc["app_id"]),
                phases=phases,
                target_instructions=int(doc["target_instructions"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkloadError(f"bad synthetic app definition: {exc}") from None


@dataclass(frozen=True)
class SimWorkload:
    """The simulator side of a run: apps, ground truth, observation noise."""

    apps: tuple[SyntheticApp, ...]
    ground_truth: ModelCoefficients = REFERENCE_COEFFICIENTS
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        ids = [a.app_id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise WorkloadError("duplicate app ids in workload")
        if not self.apps:
            raise WorkloadError("workload must contain at least one app")
        if self.noise_sigma < 0.0:
            raise WorkloadError("noise_sigma must be >= 0")


@dataclass
class AppSimState:
    """Mutable per-app progress within a simulation."""

    app: SyntheticApp
    phase_index: int = 0
    into_phase: float = 0.0
    done: float = 0.0
    launches: int = 1
    first_completion: int | None = None

    @property
    def vector(self) -> CategoryVector:
        return self.app.phases[self.phase_index].vector

    def rate(self, dispatch_width: int, cycles_per_quantum: int) -> float:
        return self.vector.fdc * dispatch_width * cycles_per_quantum

    def _advance_phases(self, committed: float) -> None:
        remaining = committed
        while remaining > 1e-9:
            budget = self.app.phases[self.phase_index].instructions
            left = budget - self.into_phase
            if remaining < left - 1e-9:
                self.into_phase += remaining
                return
            remaining -= left
            self.phase_index = (self.phase_index + 1) % len(self.app.phases)
            self.into_phase = 0.0

    def commit(self, amount: float, quantum: int) -> tuple[float, bool]:
        """Record progress; returns (clipped amount, completed this launch)."""
        remaining = self.app.target_instructions - self.done
        completed = amount >= remaining
        if completed:
            amount = remaining
        self._advance_phases(amount)
        if completed:
            if self.first_completion is None:
                self.first_completion = quantum
            # Relaunch a fresh instance to keep SMT pressure constant.
            self.launches += 1
            self.phase_index = 0
            self.into_phase = 0.0
            self.done = 0.0
        else:
            self.done += amount
        return amount, completed


@dataclass(frozen=True)
class StepResult:
    """One app's outcome for one simulated quantum."""

    observed: CategoryTriple
    slowdown: float
    committed: float
    completed: bool


def sim_step(
    states: Mapping[str, AppSimState],
    pairs: Sequence[tuple[str, str]],
    ground_truth: ModelCoefficients,
    noise_sigma: float,
    rng: np.random.Generator,
    quantum: int,
    dispatch_width: int,
    cycles_per_quantum: int,
) -> dict[str, StepResult]:
    """Advance every app by one quantum under the given assignment.

    Observed category values are the ground-truth forward predictions
    plus optional Gaussian noise (clamped at zero); progress always uses
    the noiseless slowdown.  An app paired with the idle node runs at
    isolated speed.  States are mutated in place (progress, phase
    advance, relaunch-on-completion).
    """
    results: dict[str, StepResult] = {}
    for a, b in sorted(tuple(sorted(p)) for p in pairs):
        if a == IDLE_NODE or b == IDLE_NODE:
            solo = a if b == IDLE_NODE else b
            st = states[solo].vector
            base = {name: st.get(name) for name in CATEGORIES}
            _emit(results, states, solo, base, 1.0, noise_sigma, rng, quantum,
                  dispatch_width, cycles_per_quantum)
            continue
        pred = predict_pair(ground_truth, states[a].vector, states[b].vector)
        _emit(results, states, a, pred.smt_i.as_dict(), pred.slowdown_i,
              noise_sigma, rng, quantum, dispatch_width, cycles_per_quantum)
        _emit(results, states, b, pred.smt_j.as_dict(), pred.slowdown_j,
              noise_sigma, rng, quantum, dispatch_width, cycles_per_quantum)
    return results


def _emit(
    results: dict[str, StepResult],
    states: Mapping[str, AppSimState],
    app_id: str,
    base: Mapping[str, float],
    slowdown: float,
    noise_sigma: float,
    rng: np.random.Generator,
    quantum: int,
    dispatch_width: int,
    cycles_per_quantum: int,
) -> None:
    observed = {}
    for name in CATEGORIES:
        value = base[name]
        if noise_sigma > 0.0:
            value += noise_sigma * rng.standard_normal()
        observed[name] = value if value > 0.0 else 0.0
    state = states[app_id]
    amount = state.rate(dispatch_width, cycles_per_quantum) / slowdown
    committed, completed = state.commit(amount, quantum)
    results[app_id] = StepResult(
        observed=CategoryTriple(**observed),
        slowdown=slowdown,
        committed=committed,
        completed=completed,
    )


# ---------------------------------------------------------------------------
# Allocators


class RecordingAllocator:
    """Applies assignments by recording them (the simulation backend)."""

    def __init__(self) -> None:
        self.current: tuple[tuple[str, str], ...] | None = None
        self.applied = 0

    def apply(self, pairs: tuple[tuple[str, str], ...]) -> int:
        """Returns how many pairs changed relative to the previous quantum."""
        previous = set(self.current) if self.current is not None else set()
        migrations = len(set(pairs) - previous)
        self.current = pairs
        self.applied += 1
        return migrations


class OsAllocator:
    """Placeholder for an OS-affinity backend (not available here)."""

    def apply(self, pairs: tuple[tuple[str, str], ...]) -> int:
        raise UnsupportedPlatformError(
            "pinning threads to SMT cores requires OS support not available "
            "in this environment; use RecordingAllocator"
        )


def apply_assignment(allocator, matching: Matching) -> int:
    """Apply a matching through an allocator; returns migration count."""
    return allocator.apply(matching.pairs)


# ---------------------------------------------------------------------------
# Engine configuration and log


@dataclass(frozen=True)
class EngineConfig:
    """Everything one engine run needs.

    Exactly one of ``workload`` (closed-loop simulation) or
    ``trace_path`` (open-loop replay) must be set.
    """

    coefficients: ModelCoefficients = REFERENCE_COEFFICIENTS
    policy: str = "synpa"
    quantum_ms: float = 100.0
    dispatch_width: int = 4
    seed: int = 0
    workload: SimWorkload | None = None
    trace_path: str | None = None
    estimate_decay: float = 0.5
    max_quanta: int = 1_000_000

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if (self.workload is None) == (self.trace_path is None):
            raise ConfigError("set exactly one of workload or trace_path")
        if self.quantum_ms <= 0:
            raise ConfigError("quantum_ms must be positive")
        if self.dispatch_width < 1:
            raise ConfigError("dispatch_width must be >= 1")
        if not 0.0 <= self.estimate_decay <= 1.0:
            raise ConfigError("estimate_decay must be in [0, 1]")
        if self.max_quanta < 1:
            raise ConfigError("max_quanta must be >= 1")

    @property
    def cycles_per_quantum(self) -> int:
        return int(round(self.quantum_ms * CYCLES_PER_MS))


@dataclass(frozen=True)
class QuantumRecord:
    """What happened during one quantum."""

    quantum: int
    pairs: tuple[tuple[str, str], ...]  # assignment in effect
    observed: dict[str, CategoryTriple]
    estimates: dict[str, CategoryVector]  # fresh ST estimates after this quantum
    degraded: dict[str, bool]  # apps whose inversion fell back this quantum
    committed: dict[str, float]
    slowdown: dict[str, float]  # ground truth in simulation; model estimate in replay
    migrations: int  # pairs changed going INTO this quantum


@dataclass(frozen=True)
class ScheduleLog:
    """Full record of one engine run."""

    policy: str
    seed: int
    quantum_ms: float
    dispatch_width: int
    cycles_per_quantum: int
    noise_sigma: float
    apps: tuple[str, ...]
    records: tuple[QuantumRecord, ...]
    first_completion: dict[str, int]
    relaunches: dict[str, int]
    iso_quanta: dict[str, float]  # ground-truth isolated durations (sim only)
    instructions: dict[str, float]  # work counted toward each app's first completion
    total_quanta: int
    mode: str = "simulate"  # "simulate" | "replay"

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "kind": "schedule-log",
                    "version": LOG_VERSION,
                    "mode": self.mode,
                    "policy": self.policy,
                    "seed": self.seed,
                    "quantum_ms": self.quantum_ms,
                    "dispatch_width": self.dispatch_width,
                    "cycles_per_quantum": self.cycles_per_quantum,
                    "noise_sigma": self.noise_sigma,
                    "apps": list(self.apps),
                },
                sort_keys=True,
            )
        ]
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "quantum": r.quantum,
                        "pairs": [list(p) for p in r.pairs],
                        "observed": {k: v.as_dict() for k, v in sorted(r.observed.items())},
                        "estimates": {k: v.as_dict() for k, v in sorted(r.estimates.items())},
                        "degraded": dict(sorted(r.degraded.items())),
                        "committed": dict(sorted(r.committed.items())),
                        "slowdown": dict(sorted(r.slowdown.items())),
                        "migrations": r.migrations,
                    },
                    sort_keys=True,
                )
            )
        lines.append(
            json.dumps(
                {
                    "summary": {
                        "first_completion": dict(sorted(self.first_completion.items())),
                        "relaunches": dict(sorted(self.relaunches.items())),
                        "iso_quanta": dict(sorted(self.iso_quanta.items())),
                        "instructions": dict(sorted(self.instructions.items())),
                        "total_quanta": self.total_quanta,
                    }
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Policies


def _random_pairs(app_ids: Sequence[str], rng: np.random.Generator) -> tuple[tuple[str, str], ...]:
    order = [app_ids[i] for i in rng.permutation(len(app_ids))]
    if len(order) % 2 == 1:
        order.append(IDLE_NODE)
    pairs = []
    for k in range(0, len(order), 2):
        pairs.append(tuple(sorted((order[k], order[k + 1]))))
    return tuple(sorted(pairs))


def _roster_pairs(app_ids: Sequence[str]) -> tuple[tuple[str, str], ...]:
    order = list(app_ids)
    if len(order) % 2 == 1:
        order.append(IDLE_NODE)
    pairs = []
    for k in range(0, len(order), 2):
        pairs.append(tuple(sorted((order[k], order[k + 1]))))
    return tuple(sorted(pairs))


def initial_assignment(
    policy: str, app_ids: Sequence[str], rng: np.random.Generator
) -> tuple[tuple[str, str], ...]:
    """Bootstrap assignment before any measurements exist.

    ``synpa`` and ``random`` start from a seeded random matching (the
    model has nothing to go on yet); ``static`` pairs the roster in
    order and keeps that forever.
    """
    if policy in ("synpa", "random"):
        return _random_pairs(app_ids, rng)
    return _roster_pairs(app_ids)


class _EstimateStore:
    """Last-good isolated-behavior estimates with staleness aging.

    A degraded inversion leaves the previous estimate in place; when
    consumed, an estimate that is ``age`` quanta stale is blended toward
    the uniform prior with weight ``decay ** age``, so stale information
    gradually stops driving pairing decisions.
    """

    def __init__(self, decay: float):
        self._decay = decay
        self._vectors: dict[str, CategoryVector] = {}
        self._ages: dict[str, int] = {}

    def update(self, app_id: str, vector: CategoryVector) -> None:
        self._vectors[app_id] = vector
        self._ages[app_id] = 0

    def mark_stale(self, app_id: str) -> None:
        if app_id in self._ages:
            self._ages[app_id] += 1

    def forget(self, app_id: str) -> None:
        self._vectors.pop(app_id, None)
        self._ages.pop(app_id, None)

    def effective(self, app_id: str) -> CategoryVector:
        vector = self._vectors.get(app_id)
        if vector is None:
            return UNIFORM_VECTOR
        age = self._ages.get(app_id, 0)
        if age == 0:
            return vector
        w = self._decay**age
        return CategoryVector(
            fe=w * vector.fe + (1.0 - w) * UNIFORM_VECTOR.fe,
            be=w * vector.be + (1.0 - w) * UNIFORM_VECTOR.be,
            fdc=w * vector.fdc + (1.0 - w) * UNIFORM_VECTOR.fdc,
        )


def _normalize_triple(triple: CategoryTriple) -> CategoryVector:
    total = triple.total
    if total <= 1e-12:
        return UNIFORM_VECTOR
    return CategoryVector(
        fe=triple.fe / total, be=triple.be / total, fdc=triple.fdc / total
    )


def _decide_synpa(
    app_ids: Sequence[str],
    estimates: _EstimateStore,
    model: ModelCoefficients,
) -> tuple[tuple[str, str], ...]:
    effective = {a: estimates.effective(a) for a in app_ids}
    predictions: dict[tuple[str, str], PairPrediction] = {}
    ordered = sorted(app_ids)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            predictions[(a, b)] = predict_pair(model, effective[a], effective[b])
    graph = build_graph(predictions)
    return min_weight_perfect_matching(graph).pairs


def _update_estimates(
    pairs: Sequence[tuple[str, str]],
    results: Mapping[str, StepResult],
    estimates: _EstimateStore,
    model: ModelCoefficients,
) -> tuple[dict[str, CategoryVector], dict[str, bool]]:
    """Invert each pair's observations into fresh ST estimates."""
    fresh: dict[str, CategoryVector] = {}
    degraded: dict[str, bool] = {}
    for a, b in sorted(tuple(sorted(p)) for p in pairs):
        if a == IDLE_NODE or b == IDLE_NODE:
            solo = a if b == IDLE_NODE else b
            vec = _normalize_triple(results[solo].observed)
            estimates.update(solo, vec)
            fresh[solo] = vec
            degraded[solo] = False
            continue
        inv = invert(model, results[a].observed, results[b].observed)
        if inv.degraded:
            estimates.mark_stale(a)
            estimates.mark_stale(b)
            degraded[a] = degraded[b] = True
            fresh[a] = estimates.effective(a)
            fresh[b] = estimates.effective(b)
        else:
            estimates.update(a, inv.st_i)
            estimates.update(b, inv.st_j)
            fresh[a] = inv.st_i
            fresh[b] = inv.st_j
            degraded[a] = degraded[b] = False
    return fresh, degraded


# ---------------------------------------------------------------------------
# Run loop


def run(config: EngineConfig) -> ScheduleLog:
    """Run the engine to completion and return the schedule log."""
    if config.workload is not None:
        return _run_simulation(config)
    return _run_replay(config)


def _run_simulation(config: EngineConfig) -> ScheduleLog:
    workload = config.workload
    rng = np.random.default_rng(config.seed)
    app_ids = tuple(a.app_id for a in workload.apps)
    states = {a.app_id: AppSimState(app=a) for a in workload.apps}
    estimates = _EstimateStore(config.estimate_decay)
    allocator = RecordingAllocator()

    assignment = initial_assignment(config.policy, app_ids, rng)
    migrations = allocator.apply(assignment)

    records: list[QuantumRecord] = []
    relaunches = {a: 0 for a in app_ids}
    quantum = 0
    while any(states[a].first_completion is None for a in app_ids):
        quantum += 1
        if quantum > config.max_quanta:
            raise ConfigError(
                f"run exceeded max_quanta={config.max_quanta}; "
                "check workload targets and rates"
            )
        results = sim_step(
            states,
            assignment,
            workload.ground_truth,
            workload.noise_sigma,
            rng,
            quantum,
            config.dispatch_width,
            config.cycles_per_quantum,
        )
        for app_id, result in results.items():
            if result.completed:
                relaunches[app_id] += 1

        if config.policy == "synpa":
            fresh, degraded = _update_estimates(
                assignment, results, estimates, config.coefficients
            )
            # A completed app was replaced by a fresh instance: its history
            # no longer describes what is running now.
            for app_id, result in results.items():
                if result.completed:
                    estimates.forget(app_id)
            next_assignment = _decide_synpa(app_ids, estimates, config.coefficients)
        else:
            fresh, degraded = {}, {}
            next_assignment = assignment

        records.append(
            QuantumRecord(
                quantum=quantum,
                pairs=assignment,
                observed={a: results[a].observed for a in sorted(results)},
                estimates=fresh,
                degraded=degraded,
                committed={a: results[a].committed for a in sorted(results)},
                slowdown={a: results[a].slowdown for a in sorted(results)},
                migrations=migrations,
            )
        )
        migrations = allocator.apply(next_assignment)
        assignment = next_assignment

    # Relaunch counts exclude the final completion of each first launch
    # only when it never relaunched afterwards; what we tracked above is
    # the number of completions, i.e. 1 + relaunches of finished work.
    relaunch_counts = {a: max(relaunches[a] - 1, 0) for a in app_ids}
    return ScheduleLog(
        policy=config.policy,
        seed=config.seed,
        quantum_ms=config.quantum_ms,
        dispatch_width=config.dispatch_width,
        cycles_per_quantum=config.cycles_per_quantum,
        noise_sigma=workload.noise_sigma,
        apps=app_ids,
        records=tuple(records),
        first_completion={a: states[a].first_completion for a in app_ids},
        relaunches=relaunch_counts,
        iso_quanta={
            a.app_id: a.isolated_quanta(config.dispatch_width, config.cycles_per_quantum)
            for a in workload.apps
        },
        instructions={
            a.app_id: float(a.target_instructions) for a in workload.apps
        },
        total_quanta=quantum,
        mode="simulate",
    )


def _run_replay(config: EngineConfig) -> ScheduleLog:
    provider = open_trace(config.trace_path)
    header = provider.header
    width = header.dispatch_width
    rng = np.random.default_rng(config.seed)
    app_ids = tuple(header.threads)
    estimates = _EstimateStore(config.estimate_decay)
    allocator = RecordingAllocator()

    assignment = initial_assignment(config.policy, app_ids, rng)
    migrations = allocator.apply(assignment)

    records: list[QuantumRecord] = []
    committed_total = {a: 0 for a in app_ids}
    last_seen = {a: 0 for a in app_ids}
    quantum = 0
    for trace_quantum, samples in provider:
        quantum += 1
        if quantum > config.max_quanta:
            raise ConfigError(f"replay exceeded max_quanta={config.max_quanta}")
        by_thread = {s.thread_id: s for s in samples}
        observed: dict[str, CategoryTriple] = {}
        for thread, sample in sorted(by_thread.items()):
            observed[thread] = normalize(characterize(sample, width))
            committed_total[thread] += sample.inst_spec
            last_seen[thread] = quantum

        present = sorted(by_thread)
        live_pairs = _restrict_pairs(assignment, present)
        results = {
            t: StepResult(
                observed=observed[t], slowdown=1.0, committed=float(by_thread[t].inst_spec),
                completed=False,
            )
            for t in present
        }

        if config.policy == "synpa":
            fresh, degraded = _update_estimates(
                live_pairs, results, estimates, config.coefficients
            )
            next_assignment = _decide_synpa(present, estimates, config.coefficients)
        else:
            fresh, degraded = {}, {}
            next_assignment = _restrict_pairs(assignment, present)

        slowdown = _model_slowdowns(live_pairs, estimates, config.coefficients)
        records.append(
            QuantumRecord(
                quantum=quantum,
                pairs=live_pairs,
                observed=observed,
                estimates=fresh,
                degraded=degraded,
                committed={t: float(by_thread[t].inst_spec) for t in present},
                slowdown=slowdown,
                migrations=migrations,
            )
        )
        migrations = allocator.apply(next_assignment)
        assignment = next_assignment

    return ScheduleLog(
        policy=config.policy,
        seed=config.seed,
        quantum_ms=header.quantum_ms,
        dispatch_width=width,
        cycles_per_quantum=int(round(header.quantum_ms * CYCLES_PER_MS)),
        noise_sigma=0.0,
        apps=app_ids,
        records=tuple(records),
        first_completion={a: last_seen[a] for a in app_ids},
        relaunches={a: 0 for a in app_ids},
        iso_quanta={},
        instructions={a: float(committed_total[a]) for a in app_ids},
        total_quanta=quantum,
        mode="replay",
    )


def _restrict_pairs(
    pairs: Sequence[tuple[str, str]], present: Sequence[str]
) -> tuple[tuple[str, str], ...]:
    """Drop departed threads from an assignment, re-pairing leftovers."""
    alive = set(present)
    kept = []
    leftovers = []
    for a, b in pairs:
        members = [m for m in (a, b) if m in alive]
        if len(members) == 2:
            kept.append((a, b))
        else:
            leftovers.extend(members)
    leftovers.sort()
    if len(leftovers) % 2 == 1:
        leftovers.append(IDLE_NODE)
    for k in range(0, len(leftovers), 2):
        kept.append(tuple(sorted((leftovers[k], leftovers[k + 1]))))
    return tuple(sorted(kept))


def _model_slowdowns(
    pairs: Sequence[tuple[str, str]],
    estimates: _EstimateStore,
    model: ModelCoefficients,
) -> dict[str, float]:
    out: dict[str, float] = {}
    for a, b in pairs:
        if a == IDLE_NODE or b == IDLE_NODE:
            solo = a if b == IDLE_NODE else b
            out[solo] = 1.0
            continue
        pred = predict_pair(model, estimates.effective(a), estimates.effective(b))
        out[a] = pred.slowdown_i
        out[b] = pred.slowdown_j
    return out


# ---------------------------------------------------------------------------
# Trace export


def trace_from_log(log: ScheduleLog) -> tuple[TraceHeader, list[RawCounterSample]]:
    """Synthesize a counter trace reproducing a simulation log's observations.

    Each app-quantum becomes a counter row whose characterized,
    normalized breakdown approximates the logged observation (up to
    integer rounding of the counters).
    """
    header = TraceHeader(
        dispatch_width=log.dispatch_width,
        quantum_ms=log.quantum_ms,
        threads=tuple(log.apps),
    )
    cycles = log.cycles_per_quantum
    samples: list[RawCounterSample] = []
    for record in log.records:
        for app in sorted(record.observed):
            triple = record.observed[app]
            total = triple.total
            if total <= 0.0:
                fe_frac, be_frac, fdc_frac = 0.0, 0.0, 0.0
            else:
                fe_frac = triple.fe / total
                be_frac = triple.be / total
                fdc_frac = triple.fdc / total
            fe_cycles = int(round(cycles * fe_frac))
            be_cycles = int(round(cycles * be_frac))
            fe_cycles = min(fe_cycles, cycles)
            be_cycles = min(be_cycles, cycles - fe_cycles)
            inst = int(round(cycles * fdc_frac * log.dispatch_width))
            inst = min(inst, (cycles - fe_cycles - be_cycles) * log.dispatch_width)
            samples.append(
                RawCounterSample(
                    quantum_index=record.quantum - 1,
                    thread_id=app,
                    cpu_cycles=cycles,
                    inst_spec=inst,
                    stall_frontend=fe_cycles,
                    stall_backend=be_cycles,
                )
            )
    return header, samples
