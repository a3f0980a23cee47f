"""Shared fixtures and synthetic-corpus builders for the test suite."""

from __future__ import annotations

import os

import pytest

from synpa import (
    CategoryVector,
    ModelCoefficients,
    RawCounterSample,
    TraceHeader,
    format_trace,
    predict_pair,
)

CYCLES = 10**8
WIDTH = 4


def counters_for_fractions(
    quantum: int, thread: str, fe: float, fdc: float, cycles: int = CYCLES
) -> RawCounterSample:
    """A raw sample whose normalized breakdown is (fe, 1-fe-fdc, fdc).

    The inverse of the characterization arithmetic: frontend-stall cycles
    and speculative instructions are rounded to the nearest counter unit,
    so the realized fractions match the requested ones to ~1e-8.  The
    measured backend-stall counter is set to 70% of the leftover stall
    cycles; the rest surfaces as revealed stalls, exercising that path.
    """
    stall_fe = round(cycles * fe)
    inst = round(cycles * WIDTH * fdc)
    dispatch = cycles - stall_fe - (inst + WIDTH - 1) // WIDTH
    stall_be = max((dispatch * 7) // 10, 0)
    return RawCounterSample(
        quantum_index=quantum,
        thread_id=thread,
        cpu_cycles=cycles,
        inst_spec=inst,
        stall_frontend=stall_fe,
        stall_backend=stall_be,
    )


def write_profile_corpus(
    dirpath: str,
    model: ModelCoefficients,
    apps: dict[str, CategoryVector],
    pairs: list[tuple[str, str]],
    n_iso: int = 40,
    n_paired: int = 30,
    cycles: int = CYCLES,
) -> list[str]:
    """Write isolated + paired profile files consistent with ``model``.

    Apps run a constant behavior vector.  Isolated files commit the
    full dispatch rate per quantum; paired files commit rate/slowdown
    and observe the model's co-run fractions, so training on this corpus
    recovers ``model`` up to counter-rounding error (~1e-8 relative).
    """
    paths = []
    for app_id, vec in sorted(apps.items()):
        header = TraceHeader(
            dispatch_width=WIDTH,
            quantum_ms=100.0,
            threads=(app_id,),
            mode="isolated",
        )
        samples = []
        committed = {}
        for q in range(n_iso):
            s = counters_for_fractions(q, app_id, vec.fe, vec.fdc, cycles)
            samples.append(s)
            committed[(q, app_id)] = s.inst_spec
        path = os.path.join(dirpath, f"iso-{app_id}.profile")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_trace(header, samples, committed))
        paths.append(path)

    for a, b in pairs:
        header = TraceHeader(
            dispatch_width=WIDTH,
            quantum_ms=100.0,
            threads=(a, b),
            mode="paired",
        )
        pred = predict_pair(model, apps[a], apps[b])
        samples = []
        committed = {}
        for q in range(n_paired):
            for app_id, vec, smt in ((a, apps[a], pred.smt_i), (b, apps[b], pred.smt_j)):
                slowdown = smt.fe + smt.be + smt.fdc
                s = counters_for_fractions(
                    q, app_id, smt.fe / slowdown, smt.fdc / slowdown, cycles
                )
                samples.append(s)
                committed[(q, app_id)] = max(
                    1, round(cycles * WIDTH * vec.fdc / slowdown)
                )
        path = os.path.join(dirpath, f"pair-{a}-{b}.profile")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_trace(header, samples, committed))
        paths.append(path)
    return paths


#: Three constant-behavior apps whose pairwise co-runs give a rank-4
#: design matrix in every category (all three category values distinct
#: across apps, and the symmetric parts non-collinear).
CORPUS_APPS = {
    "appa": CategoryVector(fe=0.20, be=0.30, fdc=0.50),
    "appb": CategoryVector(fe=0.40, be=0.15, fdc=0.45),
    "appc": CategoryVector(fe=0.10, be=0.65, fdc=0.25),
}

CORPUS_PAIRS = [("appa", "appb"), ("appa", "appc"), ("appb", "appc")]


@pytest.fixture
def profile_corpus(tmp_path):
    """Profile files generated from the built-in reference model."""
    from synpa import REFERENCE_COEFFICIENTS

    paths = write_profile_corpus(
        str(tmp_path), REFERENCE_COEFFICIENTS, CORPUS_APPS, CORPUS_PAIRS
    )
    return paths
