"""Shared domain types: prompts, schedules, nodes, paths, run configuration.

All types here are immutable value objects (frozen dataclasses); they are
safe to share across threads after construction.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

MAX_SEED = 2**64 - 1


class Stage(str, Enum):
    INITIAL = "initial"
    INTERMEDIATE = "intermediate"
    FINAL = "final"


class ConfigError(ValueError):
    """Raised when a run configuration violates one or more invariants.

    Carries the full list of violations so callers see every problem at
    once, not just the first.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ProtocolError(RuntimeError):
    """A peer (worker process or external decomposer) broke its contract."""


@dataclass(frozen=True)
class TextPrompt:
    """A text condition for generation. `id` must be unique within a run."""

    text: str
    id: str


@dataclass(frozen=True)
class StagedPrompts:
    """The three per-stage prompts, ordered initial -> intermediate -> final."""

    initial: TextPrompt
    intermediate: TextPrompt
    final: TextPrompt
    source: str = "template-decomposed"  # or "externally-supplied"

    def for_stage(self, stage: Stage) -> TextPrompt:
        return {
            Stage.INITIAL: self.initial,
            Stage.INTERMEDIATE: self.intermediate,
            Stage.FINAL: self.final,
        }[stage]


def default_stage_boundaries(depth: int) -> tuple[int, int]:
    """Default 3-stage split: frame 0 alone is the initial stage, the last
    ~20% of frames is the final stage.

    The nominal second boundary ceil(0.8*T) is clamped into [2, T-1] so all
    three stages stay non-empty for small T.
    """
    b2 = min(max(2, math.ceil(0.8 * depth)), depth - 1)
    return (1, b2)


@dataclass(frozen=True)
class Schedule:
    """Search-shape parameters: how many roots, how deep, where to branch,
    how hard to prune, and the per-frame denoising budget.

    `branch_at` holds the frame indices where the branching factor equals
    `branch_limit`; everywhere else it is 1.  It defaults (None) to the
    stage-boundary indices -- branching only at prompt-stage transitions;
    pass an empty tuple for a branch-free degenerate tree.  `fixed_k`
    supplies the full k sequence (k_0 .. k_{T-1}) when prune_rule ==
    "fixed-k".
    """

    roots: int
    depth: int
    branch_limit: int = 2
    stage_boundaries: tuple[int, int] = ()  # type: ignore[assignment]
    branch_at: Optional[tuple[int, ...]] = None
    prune_rule: str = "halve"  # halve | fixed-k | none
    fixed_k: Optional[tuple[int, ...]] = None
    denoise_steps_per_frame: int = 8
    latent_temporal_length: int = 1

    def __post_init__(self):
        if not self.stage_boundaries and self.depth >= 3:
            object.__setattr__(
                self, "stage_boundaries", default_stage_boundaries(self.depth)
            )
        if self.branch_at is None:
            object.__setattr__(self, "branch_at", tuple(self.stage_boundaries))
        object.__setattr__(
            self, "stage_boundaries", tuple(sorted(self.stage_boundaries))
        )
        object.__setattr__(self, "branch_at", tuple(sorted(set(self.branch_at))))
        if self.fixed_k is not None:
            object.__setattr__(self, "fixed_k", tuple(self.fixed_k))

    def violations(self) -> list[str]:
        out = []
        if self.roots < 1:
            out.append("roots must be a positive integer")
        if self.depth < 2:
            out.append("depth must be >= 2")
        if self.branch_limit < 1:
            out.append("branch_limit must be a positive integer")
        if self.denoise_steps_per_frame < 1:
            out.append("denoise_steps_per_frame must be a positive integer")
        if self.latent_temporal_length < 1:
            out.append("latent_temporal_length must be a positive integer")
        if len(self.stage_boundaries) != 2:
            out.append("stage_boundaries must yield 3 stages (exactly 2 boundaries)")
        else:
            b1, b2 = self.stage_boundaries
            if not (0 < b1 < b2 < self.depth):
                out.append(
                    "stage_boundaries must satisfy 0 < b1 < b2 < depth "
                    "(3 non-empty stages)"
                )
        for t in self.branch_at:
            if not (1 <= t <= self.depth - 1):
                out.append(f"branch_at index {t} outside [1, depth-1]")
        if self.prune_rule not in ("halve", "fixed-k", "none"):
            out.append(f"unknown prune_rule {self.prune_rule!r}")
        if self.prune_rule == "fixed-k":
            if self.fixed_k is None:
                out.append("prune_rule 'fixed-k' requires a fixed_k sequence")
            else:
                if len(self.fixed_k) != self.depth:
                    out.append("fixed_k must have exactly depth entries (k_0..k_{T-1})")
                if any(k < 1 for k in self.fixed_k):
                    out.append("pruning sizes must be >= 1")
                if self.fixed_k and self.fixed_k[0] != self.roots:
                    out.append("fixed_k[0] must equal roots (k_0 = N)")
        elif self.fixed_k is not None:
            out.append("fixed_k only applies when prune_rule == 'fixed-k'")
        return out


def stage_of_frame(t: int, schedule: Schedule) -> Stage:
    """Stage containing frame `t`: [0,b1) initial, [b1,b2) intermediate,
    [b2,T) final."""
    if not 0 <= t < schedule.depth:
        raise IndexError(f"frame index {t} outside [0, {schedule.depth})")
    b1, b2 = schedule.stage_boundaries
    if t < b1:
        return Stage.INITIAL
    if t < b2:
        return Stage.INTERMEDIATE
    return Stage.FINAL


@dataclass(frozen=True)
class CandidateNode:
    """One frame-chunk node in the search forest.

    `total_score` is the parent's total plus this node's `local_reward`
    (roots contribute 0).  `latent_ref` is opaque to the engine: a tuple of
    floats for the synthetic backend, a handle string for worker backends.
    `steps_spent` is the cost receipt: denoising steps actually executed.
    """

    node_id: int
    parent_id: Optional[int]
    frame_index: int
    seed: int
    latent_ref: Any
    stage: Stage
    local_reward: float = 0.0
    total_score: float = 0.0
    steps_spent: int = 0
    truncated: bool = False


@dataclass(frozen=True)
class SearchPath:
    """A complete root-to-leaf chain of length exactly depth T."""

    nodes: tuple[CandidateNode, ...]
    final_score: float

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.node_id for n in self.nodes)

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(n.seed for n in self.nodes)


@dataclass(frozen=True)
class LandscapeSpec:
    """Parameters of the synthetic quality landscape (see generator module)."""

    dimension: int = 8
    smoothness_penalty: float = 0.5
    target_pull: float = 0.35
    noise_amplitude: float = 0.25
    landscape_seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.dimension < 2:
            out.append("landscape dimension must be >= 2")
        if self.smoothness_penalty < 0:
            out.append("smoothness_penalty must be non-negative")
        if not 0.0 <= self.target_pull <= 1.0:
            out.append("target_pull must lie in [0, 1]")
        if self.noise_amplitude < 0:
            out.append("noise_amplitude must be non-negative")
        return out


@dataclass(frozen=True)
class GateConfig:
    """Image-level gate settings.

    The clarity gate passes once denoise progress reaches
    `clarity_threshold`.  The potential gate's threshold is the median of
    sibling scores at the level ("median"), a fixed value ("fixed"), or
    disabled ("off").  Boundary comparisons are inclusive.
    """

    enabled: bool = True
    clarity_threshold: float = 0.4
    potential_rule: str = "median"  # median | fixed | off
    potential_threshold: Optional[float] = None

    def violations(self) -> list[str]:
        out = []
        if not 0.0 <= self.clarity_threshold <= 1.0:
            out.append("clarity_threshold must lie in [0, 1]")
        if self.potential_rule not in ("median", "fixed", "off"):
            out.append(f"unknown potential_rule {self.potential_rule!r}")
        if self.potential_rule == "fixed" and self.potential_threshold is None:
            out.append("potential_rule 'fixed' requires potential_threshold")
        return out


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; validated before any generation call."""

    algorithm: str  # linear | tof | oracle
    schedule: Schedule
    prompt: TextPrompt
    verifier_weights: dict[str, float] = field(
        default_factory=lambda: {"synthetic": 1.0}
    )
    master_seed: int = 0
    worker_endpoints: Optional[tuple[str, ...]] = None
    landscape: LandscapeSpec = field(default_factory=LandscapeSpec)
    gates: GateConfig = field(default_factory=GateConfig)

    def __post_init__(self):
        if self.worker_endpoints is not None:
            object.__setattr__(self, "worker_endpoints", tuple(self.worker_endpoints))


def validate_config(config: RunConfig) -> RunConfig:
    """Return `config` unchanged iff every invariant holds; otherwise raise
    ConfigError listing all violations."""
    out: list[str] = []
    if config.algorithm not in ("linear", "tof", "oracle"):
        out.append(f"unknown algorithm {config.algorithm!r}")
    out.extend(config.schedule.violations())
    if not config.prompt.text:
        out.append("prompt text must be non-empty")
    if not config.prompt.id:
        out.append("prompt id must be non-empty")
    if not config.verifier_weights:
        out.append("verifier_weights must list at least one verifier")
    for vid, w in config.verifier_weights.items():
        if not (w > 0 and math.isfinite(w)):
            out.append(f"weights strictly positive: verifier {vid!r} has weight {w}")
    if not 0 <= config.master_seed <= MAX_SEED:
        out.append("master_seed must fit in 64 bits")
    out.extend(config.landscape.violations())
    out.extend(config.gates.violations())
    if out:
        raise ConfigError(out)
    return config


# --- JSON (de)serialization -------------------------------------------------
#
# Field names in the JSON document are exactly the dataclass field names.
# Unknown fields are rejected.

def config_to_dict(config: RunConfig) -> dict[str, Any]:
    d = dataclasses.asdict(config)
    d["schedule"]["stage_boundaries"] = list(config.schedule.stage_boundaries)
    d["schedule"]["branch_at"] = list(config.schedule.branch_at)
    if config.schedule.fixed_k is not None:
        d["schedule"]["fixed_k"] = list(config.schedule.fixed_k)
    if config.worker_endpoints is not None:
        d["worker_endpoints"] = list(config.worker_endpoints)
    return d


def _check_fields(section: str, data: dict, allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            [f"unknown field(s) in {section}: {', '.join(sorted(unknown))}"]
        )


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(["config document must be a JSON object"])
    _check_fields(
        "config",
        data,
        {
            "algorithm",
            "schedule",
            "prompt",
            "verifier_weights",
            "master_seed",
            "worker_endpoints",
            "landscape",
            "gates",
        },
    )
    for required in ("algorithm", "schedule", "prompt"):
        if required not in data:
            raise ConfigError([f"missing required field {required!r}"])

    sched_data = dict(data["schedule"])
    _check_fields(
        "schedule",
        sched_data,
        {
            "roots",
            "depth",
            "branch_limit",
            "stage_boundaries",
            "branch_at",
            "prune_rule",
            "fixed_k",
            "denoise_steps_per_frame",
            "latent_temporal_length",
        },
    )
    if "stage_boundaries" in sched_data:
        sched_data["stage_boundaries"] = tuple(sched_data["stage_boundaries"])
    if sched_data.get("branch_at") is not None:
        sched_data["branch_at"] = tuple(sched_data["branch_at"])
    if sched_data.get("fixed_k") is not None:
        sched_data["fixed_k"] = tuple(sched_data["fixed_k"])
    schedule = Schedule(**sched_data)

    prompt_data = dict(data["prompt"])
    _check_fields("prompt", prompt_data, {"text", "id"})
    prompt = TextPrompt(**prompt_data)

    kwargs: dict[str, Any] = {}
    if "landscape" in data:
        ls = dict(data["landscape"])
        _check_fields(
            "landscape",
            ls,
            {
                "dimension",
                "smoothness_penalty",
                "target_pull",
                "noise_amplitude",
                "landscape_seed",
            },
        )
        kwargs["landscape"] = LandscapeSpec(**ls)
    if "gates" in data:
        gs = dict(data["gates"])
        _check_fields(
            "gates",
            gs,
            {"enabled", "clarity_threshold", "potential_rule", "potential_threshold"},
        )
        kwargs["gates"] = GateConfig(**gs)
    if "verifier_weights" in data:
        kwargs["verifier_weights"] = dict(data["verifier_weights"])
    if "master_seed" in data:
        kwargs["master_seed"] = int(data["master_seed"])
    if data.get("worker_endpoints") is not None:
        kwargs["worker_endpoints"] = tuple(data["worker_endpoints"])

    return RunConfig(
        algorithm=data["algorithm"], schedule=schedule, prompt=prompt, **kwargs
    )


def config_to_json(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, indent=2)


def config_from_json(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"config is not valid JSON: {e}"]) from e
    return config_from_dict(data)
