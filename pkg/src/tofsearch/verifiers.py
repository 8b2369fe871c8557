"""Verifier ensemble: scoring, hierarchical prompt routing, image-level
gates, and multi-verifier rank aggregation.

Aggregation is rank-based: each verifier's raw scores are converted to a
rank permutation (n = best, ties broken toward the smaller node id), and
the ensemble score of candidate i is

    H(i) = (1/|M|) * sum_v c_v * Rank_v(i)

with the argmax tie broken toward the smaller node id.  Raw scores are
still logged for analysis.
"""

from __future__ import annotations

import statistics
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

from .core import ProtocolError, Stage, StagedPrompts, TextPrompt
from .generator import SyntheticLandscape


class VerifierFault(RuntimeError):
    """Verifier infrastructure failure (timeout, transport, non-finite
    score).  Never eliminates a candidate: callers fail open."""


class HasLatentAndStage(Protocol):
    latent_ref: object
    stage: Stage


class Verifier(ABC):
    """Scalar quality scorer.  Scoring must be a pure function of
    (artifact, stage prompt); `modes` lists the supported artifact kinds."""

    verifier_id: str
    modes: tuple[str, ...] = ("frame", "clip", "final")
    deterministic: bool = True

    @abstractmethod
    def score(
        self,
        prefix: Sequence[HasLatentAndStage],
        stage: Stage,
        prompt: TextPrompt,
        mode: str = "frame",
    ) -> float:
        """Score a path prefix.  `frame` scores the newest transition,
        `clip` the prefix as a whole, `final` a complete path."""


@dataclass(frozen=True)
class VerifierScore:
    verifier_id: str
    node_id: int
    raw_score: float
    stage: Stage


@dataclass(frozen=True)
class RankTable:
    """One verifier's rank permutation over n candidates; rank n = best."""

    verifier_id: str
    ranks: dict[int, int]

    def check(self) -> None:
        n = len(self.ranks)
        if sorted(self.ranks.values()) != list(range(1, n + 1)):
            raise ValueError(f"ranks of {self.verifier_id} are not a permutation")


@dataclass(frozen=True)
class GateDecision:
    gate: str  # "clarity" | "potential"
    verdict: bool
    threshold: float


@dataclass(frozen=True)
class AggregateResult:
    scores: dict[int, float]
    best_id: int


class SyntheticVerifier(Verifier):
    """Scores synthetic trajectories with the landscape's closed form."""

    def __init__(self, landscape: SyntheticLandscape, verifier_id: str = "synthetic"):
        self.landscape = landscape
        self.verifier_id = verifier_id

    def score(self, prefix, stage, prompt, mode="frame"):
        if not prefix:
            raise VerifierFault("empty prefix")
        if mode == "frame":
            parent = prefix[-2].latent_ref if len(prefix) > 1 else None
            return self.landscape.frame_quality(prefix[-1].latent_ref, stage, parent)
        if mode in ("clip", "final"):
            return self.landscape.path_quality(
                [p.latent_ref for p in prefix], [p.stage for p in prefix]
            )
        raise VerifierFault(f"unsupported mode {mode!r}")


class ConstantVerifier(Verifier):
    """Returns a fixed score for everything; useful as an all-ties probe."""

    def __init__(self, value: float = 0.0, verifier_id: str = "constant"):
        self.value = value
        self.verifier_id = verifier_id

    def score(self, prefix, stage, prompt, mode="frame"):
        return self.value


# --- hierarchical prompting ---------------------------------------------------

_STAGE_SUFFIXES = {
    Stage.INITIAL: "static scene: subjects, layout, and appearance of the opening frame",
    Stage.INTERMEDIATE: "motion: actions and transitions across the middle frames",
    Stage.FINAL: "ending state: how the sequence should conclude",
}

Decomposer = Callable[[TextPrompt], Sequence[TextPrompt]]


def decompose_prompt(
    prompt: TextPrompt, decomposer: Optional[Decomposer] = None
) -> StagedPrompts:
    """Split one prompt into the three stage prompts.

    The default template decomposer appends a per-stage focus suffix and is
    fully deterministic.  An external decomposer (e.g. an LLM behind the
    worker protocol) may replace it; it must return exactly three prompts
    in stage order.
    """
    if not prompt.text:
        raise ValueError("prompt text must be non-empty")
    if decomposer is None:
        parts = [
            TextPrompt(
                text=f"{prompt.text} ({_STAGE_SUFFIXES[stage]})",
                id=f"{prompt.id}#{stage.value}",
            )
            for stage in (Stage.INITIAL, Stage.INTERMEDIATE, Stage.FINAL)
        ]
        source = "template-decomposed"
    else:
        parts = list(decomposer(prompt))
        if len(parts) != 3:
            raise ProtocolError(
                f"external decomposer returned {len(parts)} prompts, expected 3"
            )
        source = "externally-supplied"
    return StagedPrompts(
        initial=parts[0], intermediate=parts[1], final=parts[2], source=source
    )


# --- rank aggregation ---------------------------------------------------------

def rank_scores(verifier_id: str, scored: Sequence[tuple[int, float]]) -> RankTable:
    """Build a rank table from (node_id, raw_score) pairs.

    Candidates are ordered worst to best by raw score; among equal scores
    the smaller node id is the better candidate.  Rank values are then the
    1-based positions, so the best candidate carries rank n.
    """
    ordered = sorted(scored, key=lambda item: (item[1], -item[0]))
    return RankTable(
        verifier_id=verifier_id,
        ranks={node_id: pos + 1 for pos, (node_id, _) in enumerate(ordered)},
    )


def aggregate(
    tables: Sequence[RankTable], weights: dict[str, float]
) -> AggregateResult:
    """Weighted rank fusion across the ensemble; see module docstring.

    Every table must rank the same candidate set.  Verifiers missing from
    `weights` default to weight 1.
    """
    if not tables:
        raise ValueError("aggregation requires at least one rank table")
    candidates = set(tables[0].ranks)
    for table in tables[1:]:
        if set(table.ranks) != candidates:
            raise ValueError(
                f"rank table of {table.verifier_id} covers a different candidate set"
            )
    m = len(tables)
    scores = {
        node_id: sum(
            weights.get(t.verifier_id, 1.0) * t.ranks[node_id] for t in tables
        )
        / m
        for node_id in candidates
    }
    best_id = min(scores, key=lambda node_id: (-scores[node_id], node_id))
    return AggregateResult(scores=scores, best_id=best_id)


def ensemble_raw_score(
    prefix: Sequence[HasLatentAndStage],
    stage: Stage,
    prompt: TextPrompt,
    ensemble: Sequence[Verifier],
    weights: dict[str, float],
    mode: str = "frame",
) -> tuple[Optional[float], list[VerifierScore], list[str]]:
    """Weight-averaged raw ensemble score of one artifact.

    Used for the per-node heuristic reward, where magnitudes must stay
    additive along paths (rank fusion is reserved for final selection).
    Faulting verifiers are skipped; returns (None, ..) if all fault.
    """
    node_id = getattr(prefix[-1], "node_id", -1)
    per_verifier: list[VerifierScore] = []
    faults: list[str] = []
    num, den = 0.0, 0.0
    for verifier in ensemble:
        try:
            raw = verifier.score(prefix, stage, prompt, mode)
            if raw != raw or raw in (float("inf"), float("-inf")):
                raise VerifierFault(f"non-finite score {raw!r}")
        except VerifierFault as fault:
            faults.append(f"{verifier.verifier_id}: {fault}")
            continue
        w = weights.get(verifier.verifier_id, 1.0)
        per_verifier.append(VerifierScore(verifier.verifier_id, node_id, raw, stage))
        num += w * raw
        den += w
    if den == 0.0:
        return None, per_verifier, faults
    return num / den, per_verifier, faults


# --- image-level gates ---------------------------------------------------------

def clarity_gate(denoise_progress: float, threshold: float) -> GateDecision:
    """Is the partial frame clear enough to evaluate?  Inclusive boundary."""
    return GateDecision("clarity", denoise_progress >= threshold, threshold)


def potential_gate(score: Optional[float], threshold: float) -> GateDecision:
    """Is the partial frame worth finishing?  `score` is the ensemble
    heuristic of the partial state; None means every verifier faulted, and
    the gate fails open (infrastructure noise must not bias search)."""
    if score is None:
        return GateDecision("potential", True, threshold)
    return GateDecision("potential", score >= threshold, threshold)


def median_threshold(scores: Sequence[float]) -> float:
    """Scale-free default threshold for the potential gate."""
    return statistics.median(scores)
