"""Shared test helpers.

The `independent_*` functions re-derive the synthetic landscape's closed
forms on a different substrate (numpy) with separately written code; they
are the oracles the package implementation is checked against and must
not import generator internals beyond the published parameters.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from tofsearch.core import (
    GateConfig,
    LandscapeSpec,
    RunConfig,
    Schedule,
    TextPrompt,
    stage_of_frame,
)


def make_config(algorithm="tof", roots=4, depth=8, master_seed=7, *,
                landscape_seed=0, prune_rule="halve", branch_at=None,
                branch_limit=2, stage_boundaries=(), gates_on=True,
                steps=8, temporal_length=1, weights=None, fixed_k=None):
    schedule = Schedule(
        roots=roots, depth=depth, branch_limit=branch_limit,
        stage_boundaries=stage_boundaries, branch_at=branch_at,
        prune_rule=prune_rule, fixed_k=fixed_k,
        denoise_steps_per_frame=steps, latent_temporal_length=temporal_length,
    )
    return RunConfig(
        algorithm=algorithm,
        schedule=schedule,
        prompt=TextPrompt("a paper boat drifts under a stone bridge", "p0"),
        verifier_weights=weights or {"synthetic": 1.0},
        master_seed=master_seed,
        landscape=LandscapeSpec(landscape_seed=landscape_seed),
        gates=GateConfig(enabled=gates_on),
    )


# --- independent closed-form oracles -------------------------------------------


def independent_child_feature(landscape, parent, stage, seed):
    """slerp(parent, stage target, pull) + amplitude * noise, renormalized."""
    a = np.asarray(parent, dtype=float)
    b = np.asarray(landscape.targets[stage], dtype=float)
    z = np.asarray(landscape.feature_noise(seed), dtype=float)
    cos_omega = float(np.clip(np.dot(a, b), -1.0, 1.0))
    omega = math.acos(cos_omega)
    if math.sin(omega) < 1e-9:
        base = a
    else:
        base = (
            math.sin((1.0 - landscape.target_pull) * omega) * a
            + math.sin(landscape.target_pull * omega) * b
        ) / math.sin(omega)
    raw = base + landscape.noise_amplitude * z
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:
        return z
    return raw / norm


def independent_frame_quality(landscape, feature, stage, parent=None):
    q = float(np.dot(feature, np.asarray(landscape.targets[stage])))
    if parent is not None:
        diff = np.asarray(feature, dtype=float) - np.asarray(parent, dtype=float)
        q -= landscape.smoothness_penalty * float(np.dot(diff, diff))
    return q


def independent_path_quality(landscape, features, stages):
    total, prev = 0.0, None
    for feat, stage in zip(features, stages):
        total += independent_frame_quality(landscape, feat, stage, prev)
        prev = feat
    return total / len(features)


def independent_path_features(landscape, schedule, root_seed_value, ordinals):
    """Walk one seed chain (root seed + child ordinals) independently."""
    from tofsearch.rng import child_seed

    stages = [stage_of_frame(t, schedule) for t in range(schedule.depth)]
    seeds = [root_seed_value]
    feats = [np.asarray(landscape.root_feature(root_seed_value))]
    for t, m in enumerate(ordinals, start=1):
        seeds.append(child_seed(seeds[-1], m, t))
        feats.append(
            independent_child_feature(landscape, feats[-1], stages[t], seeds[-1])
        )
    return seeds, feats, stages


# --- event-log checkers ----------------------------------------------------------


def assert_prune_dominance(events):
    """Every discarded node scores <= every retained node (ties resolved
    toward the smaller node id); checked on every prune event."""
    scores = {e["node_id"]: e["s"] for e in events if e["event"] == "node"}
    for event in events:
        if event["event"] != "prune":
            continue
        retained = [(scores[i], i) for i in event["retained"]]
        discarded = [(scores[i], i) for i in event["discarded"]]
        if not discarded:
            continue
        worst_kept = min((s, -i) for s, i in retained)
        best_dropped = max((s, -i) for s, i in discarded)
        assert best_dropped <= worst_kept, (
            f"prune at t={event['t']} dropped {best_dropped} "
            f"but kept {worst_kept}"
        )


def assert_node_invariants(events):
    """node ids strictly increase in creation order; total score is the
    root-to-node sum of local rewards."""
    node_events = [e for e in events if e["event"] == "node"]
    ids = [e["node_id"] for e in node_events]
    assert ids == sorted(ids) and len(set(ids)) == len(ids)
    by_id = {e["node_id"]: e for e in node_events}
    for e in node_events:
        total, cursor = 0.0, e
        while cursor is not None:
            total += cursor["h"]
            parent = cursor["parent_id"]
            cursor = by_id[parent] if parent is not None else None
        assert e["s"] == pytest.approx(total, abs=1e-9)
