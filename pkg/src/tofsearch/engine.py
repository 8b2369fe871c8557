"""Search algorithms over a generator/verifier pair.

Two strategies share all bookkeeping:

* random linear search: N independent full trajectories, best-of-N by
  final verification;
* tree-of-frames search: level-synchronous beam growth with branching at
  stage transitions, per-level heuristic pruning, and optional image-level
  early-rejection gates.

Within a level, child expansion and scoring are pure and may run on a
thread pool; node ids are pre-assigned and all ledger/event writes happen
at the level barrier in node-id order, so results are invariant to the
thread count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

from .core import (
    CandidateNode,
    RunConfig,
    Schedule,
    SearchPath,
    Stage,
    StagedPrompts,
    stage_of_frame,
    validate_config,
)
from .generator import Generator, GeneratorFault, PartialFrameState
from .ledger import NfeLedger
from .rng import child_seed, root_seed
from .verifiers import (
    Verifier,
    aggregate,
    clarity_gate,
    decompose_prompt,
    ensemble_raw_score,
    median_threshold,
    potential_gate,
    rank_scores,
)

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    """The search could not produce any complete candidate."""


def branch_factor(t: int, schedule: Schedule) -> int:
    """b_t: the branching limit at stage-transition frames, 1 elsewhere."""
    return schedule.branch_limit if t in schedule.branch_at else 1


def k_sequence(schedule: Schedule) -> list[int]:
    """Pruning sizes k_0..k_{T-1} under the schedule's prune rule.

    halve keeps the top half of each expansion (ceiling, floored at 1);
    fixed-k follows the user sequence (capped at what was produced); none
    never discards.
    """
    ks = [schedule.roots]
    for t in range(1, schedule.depth):
        produced = ks[-1] * branch_factor(t, schedule)
        if schedule.prune_rule == "none":
            ks.append(produced)
        elif schedule.prune_rule == "halve":
            ks.append(max(1, (produced + 1) // 2))
        else:  # fixed-k
            ks.append(min(schedule.fixed_k[t], produced))
    return ks


@dataclass(frozen=True)
class PruneOutcome:
    retained: tuple[CandidateNode, ...]
    discarded: tuple[CandidateNode, ...]
    level: int
    k_in: int
    k_out: int


def prune_top_k(
    produced: Sequence[CandidateNode],
    k: int,
    *,
    level: int = -1,
    k_in: Optional[int] = None,
) -> PruneOutcome:
    """Retain the top-k nodes under (total_score desc, node_id asc)."""
    if k < 1:
        raise ValueError("pruning size must be >= 1")
    if not produced:
        raise RunError(f"no candidates produced at level {level}")
    ordered = sorted(produced, key=lambda n: (-n.total_score, n.node_id))
    return PruneOutcome(
        retained=tuple(ordered[:k]),
        discarded=tuple(ordered[k:]),
        level=level,
        k_in=len(produced) if k_in is None else k_in,
        k_out=k,
    )


class FrontierQueue:
    """The per-level priority frontier: score descending, node id
    ascending, at most `capacity` entries after pruning."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: list[CandidateNode] = []

    def refill(self, produced: Sequence[CandidateNode], *, level: int,
               nominal_in: int) -> PruneOutcome:
        outcome = prune_top_k(produced, self.capacity, level=level, k_in=nominal_in)
        self.entries = list(outcome.retained)
        return outcome

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass
class SearchResult:
    """Outcome of one search run.

    `best_score` is the selected path's raw final-verification score
    (ensemble weighted mean); `aggregated_rank_score` is its rank-fusion
    value over the final pool.
    """

    best_path: SearchPath
    best_score: float
    aggregated_rank_score: float
    accumulated_best_id: int
    events: list[dict] = field(default_factory=list)
    ledger: NfeLedger = field(default_factory=NfeLedger)
    config: Optional[RunConfig] = None


# --- internal helpers ---------------------------------------------------------


def _parallel_map(tasks: Sequence[Callable[[], Any]], threads: int) -> list[Any]:
    """Run pure tasks, preserving order.  Exceptions propagate at join."""
    if threads <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


def _node_event(node: CandidateNode, temporal_length: int,
                gates: Optional[dict] = None) -> dict:
    return {
        "event": "node",
        "node_id": node.node_id,
        "parent_id": node.parent_id,
        "t": node.frame_index,
        "stage": node.stage.value,
        "seed": node.seed,
        "h": node.local_reward,
        "s": node.total_score,
        "gates": gates or {"clarity": None, "potential": None, "resurrected": False},
        "cost": {"steps": node.steps_spent, "temporal_length": temporal_length},
    }


def _prune_event(outcome: PruneOutcome) -> dict:
    return {
        "event": "prune",
        "t": outcome.level,
        "k_in": outcome.k_in,
        "k_out": outcome.k_out,
        "retained": [n.node_id for n in outcome.retained],
        "discarded": [n.node_id for n in outcome.discarded],
    }


class _Run:
    """Shared per-run bookkeeping: node store, events, ledger, scoring."""

    def __init__(self, config: RunConfig, generator: Generator,
                 ensemble: Sequence[Verifier], staged: StagedPrompts,
                 threads: int):
        self.config = config
        self.schedule = config.schedule
        self.generator = generator
        self.ensemble = list(ensemble)
        self.weights = dict(config.verifier_weights)
        self.staged = staged
        self.threads = threads
        self.ledger = NfeLedger()
        self.events: list[dict] = []
        self.nodes: dict[int, CandidateNode] = {}
        self._next_id = 0

    def take_ids(self, count: int) -> list[int]:
        ids = list(range(self._next_id, self._next_id + count))
        self._next_id += count
        return ids

    def prefix_of(self, node: CandidateNode) -> list[CandidateNode]:
        chain = [node]
        while chain[-1].parent_id is not None:
            chain.append(self.nodes[chain[-1].parent_id])
        chain.reverse()
        return chain

    def commit(self, node: CandidateNode, gates: Optional[dict] = None,
               verify_calls: int = 0) -> None:
        self.nodes[node.node_id] = node
        ltl = self.schedule.latent_temporal_length
        self.ledger.record_generate(node.node_id, node.steps_spent, ltl)
        for _ in range(verify_calls):
            self.ledger.record_verify(node.node_id, ltl)
        self.events.append(_node_event(node, ltl, gates))

    def heuristic(self, prefix, stage: Stage, mode: str = "frame"):
        """Ensemble heuristic reward of a prefix; None if all verifiers fault."""
        prompt = self.staged.for_stage(stage)
        h, scores, faults = ensemble_raw_score(
            prefix, stage, prompt, self.ensemble, self.weights, mode
        )
        for fault in faults:
            log.warning("verifier fault on node %s: %s",
                        getattr(prefix[-1], "node_id", "?"), fault)
        return h, len(scores)

    def finalize(self, pool: Sequence[CandidateNode]) -> SearchResult:
        """Final selection over completed candidates.

        Decodes each candidate path, scores it with the full ensemble at
        the final stage prompt, fuses per-verifier rankings, and returns
        the fused argmax.  The accumulated-score argmax is logged too.
        """
        if not pool:
            raise RunError("no complete candidate paths to select from")
        prompt = self.staged.final
        ltl = self.schedule.latent_temporal_length

        def score_one(leaf: CandidateNode):
            prefix = self.prefix_of(leaf)
            self.generator.decode(SearchPath(nodes=tuple(prefix), final_score=0.0))
            per_verifier = {}
            for verifier in self.ensemble:
                try:
                    raw = verifier.score(prefix, Stage.FINAL, prompt, "final")
                except Exception as fault:  # fail-open: drop this table entry
                    log.warning("final-verify fault (%s) on node %s: %s",
                                verifier.verifier_id, leaf.node_id, fault)
                    continue
                per_verifier[verifier.verifier_id] = raw
            return per_verifier

        results = _parallel_map([lambda leaf=leaf: score_one(leaf) for leaf in pool],
                                self.threads)
        raw_final: dict[int, float] = {}
        by_verifier: dict[str, list[tuple[int, float]]] = {}
        for leaf, per_verifier in zip(pool, results):
            for vid, raw in per_verifier.items():
                by_verifier.setdefault(vid, []).append((leaf.node_id, raw))
                self.ledger.record_verify(leaf.node_id, ltl)
            if per_verifier:
                num = sum(self.weights.get(v, 1.0) * r for v, r in per_verifier.items())
                den = sum(self.weights.get(v, 1.0) for v in per_verifier)
                raw_final[leaf.node_id] = num / den

        complete_tables = [
            rank_scores(vid, scored)
            for vid, scored in by_verifier.items()
            if len(scored) == len(pool)
        ]
        if complete_tables:
            fused = aggregate(complete_tables, self.weights)
            best_id = fused.best_id
            rank_score = fused.scores[best_id]
        else:  # every verifier faulted somewhere: deterministic fallback
            best_id = min(n.node_id for n in pool)
            rank_score = float("nan")

        accumulated_best = min(pool, key=lambda n: (-n.total_score, n.node_id))
        best_leaf = next(n for n in pool if n.node_id == best_id)
        best_score = raw_final.get(best_id, best_leaf.total_score)
        path = SearchPath(nodes=tuple(self.prefix_of(best_leaf)),
                          final_score=best_score)
        self.events.append({
            "event": "final",
            "pool": [n.node_id for n in pool],
            "final_scores": {str(n.node_id): raw_final.get(n.node_id) for n in pool},
            "selected": best_id,
            "by_accumulated": accumulated_best.node_id,
            "aggregated_rank_score": rank_score,
        })
        return SearchResult(
            best_path=path,
            best_score=best_score,
            aggregated_rank_score=rank_score,
            accumulated_best_id=accumulated_best.node_id,
            events=self.events,
            ledger=self.ledger,
            config=self.config,
        )


# --- random linear search -------------------------------------------------------


def random_linear_search(
    config: RunConfig,
    generator: Generator,
    ensemble: Sequence[Verifier],
    *,
    threads: int = 1,
    staged_prompts: Optional[StagedPrompts] = None,
) -> SearchResult:
    """Best-of-N: N independent full-budget trajectories, one final
    verification per candidate, rank-fused argmax.  Exactly N*T generation
    calls land in the ledger."""
    validate_config(config)
    schedule = config.schedule
    staged = staged_prompts or decompose_prompt(config.prompt)
    run = _Run(config, generator, ensemble, staged, threads)
    ids_by_path = [run.take_ids(schedule.depth) for _ in range(schedule.roots)]

    def build_path(i: int) -> Optional[list[CandidateNode]]:
        seed = root_seed(config.master_seed, i)
        try:
            node = generator.sample_root(ids_by_path[i][0], seed, staged.initial)
            chain = [node]
            for t in range(1, schedule.depth):
                stage = stage_of_frame(t, schedule)
                node = generator.extend(
                    chain[-1], ids_by_path[i][t], t, child_seed(chain[-1].seed, 0, t),
                    stage, staged.for_stage(stage),
                )
                chain.append(node)
            return chain
        except GeneratorFault as fault:  # fail closed: drop the candidate
            log.warning("generator fault on path %d: %s", i, fault)
            return None

    chains = _parallel_map(
        [lambda i=i: build_path(i) for i in range(schedule.roots)], threads
    )
    leaves = []
    for i, chain in enumerate(chains):
        if chain is None:
            run.events.append({"event": "fault", "path_index": i,
                               "kind": "generator"})
            continue
        for node in chain:
            run.commit(node)
        leaves.append(chain[-1])
    if not leaves:
        raise RunError("all candidate paths failed")
    return run.finalize(leaves)


# --- tree-of-frames search --------------------------------------------------------


@dataclass
class _Expansion:
    """One child expansion in flight during a level."""

    parent: CandidateNode
    ordinal: int
    node_id: int
    seed: int
    state: Optional[PartialFrameState] = None
    node: Optional[CandidateNode] = None
    clarity: Optional[bool] = None
    potential: Optional[bool] = None
    resurrected: bool = False
    partial_score: Optional[float] = None
    heuristic: Optional[float] = None
    verify_calls: int = 0
    fault: Optional[str] = None


def tof_search(
    config: RunConfig,
    generator: Generator,
    ensemble: Sequence[Verifier],
    *,
    threads: int = 1,
    staged_prompts: Optional[StagedPrompts] = None,
) -> SearchResult:
    """Tree-of-frames search (see module docstring).

    Per level t: expand each frontier node into b_t children with fresh
    seeds, gate partially-denoised children when supported, score accepted
    children with the ensemble heuristic, accumulate path scores, and
    retain the top k_t.  Final selection re-verifies the last level's
    complete candidates and fuses rankings.
    """
    validate_config(config)
    schedule = config.schedule
    staged = staged_prompts or decompose_prompt(config.prompt)
    run = _Run(config, generator, ensemble, staged, threads)
    gates = config.gates
    gates_active = (
        gates.enabled
        and gates.potential_rule != "off"
        and generator.capabilities.supports_partial_denoise
    )

    root_ids = run.take_ids(schedule.roots)
    roots = [
        generator.sample_root(root_ids[i], root_seed(config.master_seed, i),
                              staged.initial)
        for i in range(schedule.roots)
    ]
    for node in roots:
        run.commit(node)  # roots enter the queue with score 0

    ks = k_sequence(schedule)
    frontier = FrontierQueue(capacity=ks[0])
    frontier.entries = sorted(roots, key=lambda n: (-n.total_score, n.node_id))

    pool: list[CandidateNode] = list(frontier)
    for t in range(1, schedule.depth):
        stage = stage_of_frame(t, schedule)
        prompt = run.staged.for_stage(stage)
        b_t = branch_factor(t, schedule)
        parents = list(frontier)
        expansions: list[_Expansion] = []
        for parent in parents:
            for m in range(b_t):
                expansions.append(_Expansion(
                    parent=parent, ordinal=m, node_id=-1,
                    seed=child_seed(parent.seed, m, t),
                ))
        ids = run.take_ids(len(expansions))
        for exp, node_id in zip(expansions, ids):
            exp.node_id = node_id

        if gates_active:
            pool_t = _expand_gated(run, expansions, t, stage, prompt, gates)
        else:
            pool_t = _expand_plain(run, expansions, t, stage, prompt)
        if not pool_t:
            raise RunError(f"no surviving children at level {t}")

        frontier.capacity = ks[t]
        outcome = frontier.refill(pool_t, level=t, nominal_in=len(parents) * b_t)
        run.events.append(_prune_event(outcome))
        pool = pool_t

    # Final pool: the last level's accepted children (pre-prune), all of
    # which are complete depth-T paths.
    return run.finalize(pool)


def _score_child(run: _Run, exp: _Expansion, stage: Stage) -> None:
    # The per-node reward scores the whole prefix (clip mode), not just the
    # newest frame: pruning must weigh local frame quality together with
    # consistency along the path, or early-frame quality (the root above
    # all) never informs survival.
    prefix = run.prefix_of(exp.parent) + [exp.node]
    h, calls = run.heuristic(prefix, stage, "clip")
    exp.verify_calls += calls
    exp.heuristic = h
    reward = 0.0 if h is None else h
    exp.node = replace(
        exp.node,
        local_reward=reward,
        total_score=exp.parent.total_score + reward,
    )


def _gate_dict(exp: _Expansion) -> dict:
    return {"clarity": exp.clarity, "potential": exp.potential,
            "resurrected": exp.resurrected}


def _expand_plain(run: _Run, expansions: list[_Expansion], t: int,
                  stage: Stage, prompt) -> list[CandidateNode]:
    """Ungated level expansion: every child is denoised at full budget."""

    def work(exp: _Expansion) -> _Expansion:
        try:
            exp.node = run.generator.extend(
                exp.parent, exp.node_id, t, exp.seed, stage, prompt
            )
            _score_child(run, exp, stage)
        except GeneratorFault as fault:
            exp.fault = str(fault)
        return exp

    done = _parallel_map([lambda e=e: work(e) for e in expansions], run.threads)
    survivors = []
    for exp in done:
        if exp.fault is not None:
            run.events.append({"event": "fault", "node_id": exp.node_id,
                               "kind": "generator", "detail": exp.fault})
            continue
        run.commit(exp.node, _gate_dict(exp), exp.verify_calls)
        survivors.append(exp.node)
    return survivors


def _expand_gated(run: _Run, expansions: list[_Expansion], t: int,
                  stage: Stage, prompt, gates) -> list[CandidateNode]:
    """Gated level expansion.

    Phase A denoises every child to the clarity probe point and scores the
    partial frame; children whose partial score falls below the potential
    threshold (level-wide median by default) are truncated immediately and
    never finish denoising.  If all children of a parent are rejected, the
    best one is resurrected: early rejection is an efficiency device, not
    a correctness device.
    """
    budget = run.generator.step_budget
    probe = math.ceil(gates.clarity_threshold * budget)

    def phase_a(exp: _Expansion) -> _Expansion:
        try:
            state = run.generator.begin_partial(
                exp.parent, exp.node_id, t, exp.seed, stage, prompt
            )
            exp.state = run.generator.partial_denoise(state, probe)
            exp.clarity = clarity_gate(
                exp.state.denoise_progress, gates.clarity_threshold
            ).verdict
            if exp.clarity:
                prefix = run.prefix_of(exp.parent) + [exp.state]
                score, calls = run.heuristic(prefix, stage, "frame")
                exp.partial_score = score
                exp.verify_calls += calls
        except GeneratorFault as fault:
            exp.fault = str(fault)
        return exp

    done = _parallel_map([lambda e=e: phase_a(e) for e in expansions], run.threads)
    live = [e for e in done if e.fault is None]

    gate_scores = [e.partial_score for e in live
                   if e.clarity and e.partial_score is not None]
    if gates.potential_rule == "fixed":
        threshold = gates.potential_threshold
    else:
        threshold = median_threshold(gate_scores) if gate_scores else float("-inf")
    for exp in live:
        if exp.clarity:
            exp.potential = potential_gate(exp.partial_score, threshold).verdict
        # clarity=False means "cannot evaluate yet": no early rejection.

    by_parent: dict[int, list[_Expansion]] = {}
    for exp in live:
        by_parent.setdefault(exp.parent.node_id, []).append(exp)
    for siblings in by_parent.values():
        if all(e.potential is False for e in siblings):
            best = min(
                siblings,
                key=lambda e: (-(e.partial_score if e.partial_score is not None
                                 else float("-inf")), e.node_id),
            )
            best.potential = True
            best.resurrected = True

    def phase_b(exp: _Expansion) -> _Expansion:
        try:
            accepted = exp.potential is not False
            if accepted:
                state = run.generator.partial_denoise(
                    exp.state, budget - exp.state.steps_done
                )
                exp.node = run.generator.node_from_state(state, truncated=False)
                _score_child(run, exp, stage)
            else:
                exp.node = run.generator.node_from_state(exp.state, truncated=True)
                reward = exp.partial_score if exp.partial_score is not None else 0.0
                exp.node = replace(
                    exp.node,
                    local_reward=reward,
                    total_score=exp.parent.total_score + reward,
                )
        except GeneratorFault as fault:
            exp.fault = str(fault)
        return exp

    done_b = _parallel_map([lambda e=e: phase_b(e) for e in live], run.threads)
    survivors = []
    for exp in done_b:
        if exp.fault is not None:
            run.events.append({"event": "fault", "node_id": exp.node_id,
                               "kind": "generator", "detail": exp.fault})
            continue
        run.commit(exp.node, _gate_dict(exp), exp.verify_calls)
        if exp.potential is not False:
            survivors.append(exp.node)
    return survivors
