"""Trajectory generators: the abstract interface and the synthetic sandbox.

The synthetic generator stands in for a heavy sequence model.  Each frame
chunk is a point on the unit sphere in R^d, a pure function of its seed
chain, so trajectory quality has a closed form and exhaustive oracles are
cheap.  All float arithmetic here runs in pure Python with a fixed
operation order: external worker implementations reproduce these values
bit-for-bit from the landscape fixture alone.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

from .core import CandidateNode, LandscapeSpec, SearchPath, Stage, TextPrompt
from .rng import DEFAULT_HASH_KEY, mix64, unit_vector


class CapabilityError(RuntimeError):
    """An operation was requested that the generator does not support."""


class GeneratorFault(RuntimeError):
    """Transport-level failure of a worker-backed generator."""


@dataclass(frozen=True)
class GeneratorCapabilities:
    supports_partial_denoise: bool = True
    supports_branching: bool = True
    deterministic: bool = True


@dataclass(frozen=True)
class PartialFrameState:
    """A frame mid-denoise.  `denoise_progress` is steps_done / budget."""

    node_id: int
    parent_id: Optional[int]
    frame_index: int
    seed: int
    stage: Stage
    latent_ref: Any
    steps_done: int
    step_budget: int
    # Resume payload (synthetic backend): fully-denoised latent and the
    # noise direction the partial latent interpolates from.
    final_latent: Any = None
    noise_latent: Any = None

    @property
    def denoise_progress(self) -> float:
        return self.steps_done / self.step_budget


# --- fixed-order vector helpers ----------------------------------------------
# Loop order is part of the reproducibility contract.

def _dot(a: Sequence[float], b: Sequence[float]) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def _sq_dist(a: Sequence[float], b: Sequence[float]) -> float:
    s = 0.0
    for x, y in zip(a, b):
        d = x - y
        s += d * d
    return s


def _normalize(v: Sequence[float]) -> Optional[tuple[float, ...]]:
    n = math.sqrt(_dot(v, v))
    if n < 1e-12:
        return None
    return tuple(x / n for x in v)


def slerp(a: Sequence[float], b: Sequence[float], w: float) -> tuple[float, ...]:
    """Spherical interpolation between unit vectors; degenerate pairs
    (parallel or antiparallel) fall back to `a`."""
    c = max(-1.0, min(1.0, _dot(a, b)))
    omega = math.acos(c)
    s = math.sin(omega)
    if s < 1e-9:
        return tuple(a)
    ka = math.sin((1.0 - w) * omega) / s
    kb = math.sin(w * omega) / s
    return tuple(ka * x + kb * y for x, y in zip(a, b))


_NOISE_TAG = 0x4E4F495345  # "NOISE"
_TARGET_TAGS = {Stage.INITIAL: 1, Stage.INTERMEDIATE: 2, Stage.FINAL: 3}


class SyntheticLandscape:
    """Closed-form quality landscape over seed chains.

    Per-frame quality is alignment with the frame's stage target minus a
    smoothness penalty on the jump from the parent frame:

        q_t = dot(x_t, g_stage) - lambda * ||x_t - x_{t-1}||^2

    (roots pay no smoothness term).  Path quality is the mean of q_t over
    the frames scored.
    """

    def __init__(self, spec: LandscapeSpec = LandscapeSpec()):
        self.spec = spec
        self.dimension = spec.dimension
        self.smoothness_penalty = spec.smoothness_penalty
        self.target_pull = spec.target_pull
        self.noise_amplitude = spec.noise_amplitude
        self.noise_key = mix64(DEFAULT_HASH_KEY, spec.landscape_seed, _NOISE_TAG)
        self.targets: dict[Stage, tuple[float, ...]] = {
            stage: unit_vector(
                mix64(DEFAULT_HASH_KEY, spec.landscape_seed, tag), spec.dimension
            )
            for stage, tag in _TARGET_TAGS.items()
        }

    def feature_noise(self, seed: int) -> tuple[float, ...]:
        """The noise-to-feature map: seed -> unit vector."""
        return unit_vector(mix64(self.noise_key, seed), self.dimension)

    def root_feature(self, seed: int) -> tuple[float, ...]:
        return self.feature_noise(seed)

    def child_feature(
        self, parent: Sequence[float], stage: Stage, seed: int
    ) -> tuple[float, ...]:
        """slerp toward the stage target, perturbed by seed noise,
        re-normalized onto the sphere."""
        z = self.feature_noise(seed)
        base = slerp(parent, self.targets[stage], self.target_pull)
        raw = tuple(b + self.noise_amplitude * n for b, n in zip(base, z))
        return _normalize(raw) or z

    def partial_feature(
        self,
        final: Sequence[float],
        noise: Sequence[float],
        progress: float,
    ) -> tuple[float, ...]:
        if progress >= 1.0:
            return tuple(final)
        raw = tuple(
            (1.0 - progress) * n + progress * f for n, f in zip(noise, final)
        )
        return _normalize(raw) or tuple(final)

    def frame_quality(
        self,
        feature: Sequence[float],
        stage: Stage,
        parent_feature: Optional[Sequence[float]] = None,
    ) -> float:
        q = _dot(feature, self.targets[stage])
        if parent_feature is not None:
            q -= self.smoothness_penalty * _sq_dist(feature, parent_feature)
        return q

    def path_quality(
        self, features: Sequence[Sequence[float]], stages: Sequence[Stage]
    ) -> float:
        """Mean per-frame quality of a (prefix of a) trajectory."""
        if not features:
            raise ValueError("cannot score an empty trajectory")
        total = 0.0
        prev: Optional[Sequence[float]] = None
        for feat, stage in zip(features, stages):
            total += self.frame_quality(feat, stage, prev)
            prev = feat
        return total / len(features)

    # Fixture: everything an external implementation needs to reproduce
    # this landscape bit-for-bit.
    def fixture_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension,
            "smoothness_penalty": self.smoothness_penalty,
            "target_pull": self.target_pull,
            "noise_amplitude": self.noise_amplitude,
            "noise_key": self.noise_key,
            "targets": {stage.value: list(v) for stage, v in self.targets.items()},
        }

    def fixture_json(self) -> str:
        return json.dumps(self.fixture_dict(), sort_keys=True, indent=2)


class Generator(ABC):
    """The trajectory generator interface.

    Implementations must be pure: outputs depend only on declared inputs,
    and calls for distinct nodes may run concurrently.  Cost accounting is
    the engine's job, not the generator's.
    """

    capabilities: GeneratorCapabilities
    step_budget: int
    temporal_length: int

    @abstractmethod
    def sample_root(self, node_id: int, seed: int, prompt: TextPrompt) -> CandidateNode:
        ...

    @abstractmethod
    def extend(
        self,
        parent: CandidateNode,
        node_id: int,
        frame_index: int,
        seed: int,
        stage: Stage,
        prompt: TextPrompt,
        step_budget: Optional[int] = None,
    ) -> CandidateNode:
        ...

    @abstractmethod
    def begin_partial(
        self,
        parent: CandidateNode,
        node_id: int,
        frame_index: int,
        seed: int,
        stage: Stage,
        prompt: TextPrompt,
    ) -> PartialFrameState:
        ...

    @abstractmethod
    def partial_denoise(self, state: PartialFrameState, steps: int) -> PartialFrameState:
        ...

    @abstractmethod
    def node_from_state(self, state: PartialFrameState, truncated: bool) -> CandidateNode:
        ...

    @abstractmethod
    def decode(self, path: SearchPath) -> Any:
        ...

    def close(self) -> None:
        pass


class SyntheticGenerator(Generator):
    """Deterministic in-process generator over a SyntheticLandscape."""

    def __init__(
        self,
        landscape: SyntheticLandscape,
        depth: int,
        step_budget: int,
        temporal_length: int = 1,
        supports_partial_denoise: bool = True,
    ):
        self.landscape = landscape
        self.depth = depth
        self.step_budget = step_budget
        self.temporal_length = temporal_length
        self.capabilities = GeneratorCapabilities(
            supports_partial_denoise=supports_partial_denoise,
            supports_branching=True,
            deterministic=True,
        )

    def sample_root(self, node_id: int, seed: int, prompt: TextPrompt) -> CandidateNode:
        feature = self.landscape.root_feature(seed)
        return CandidateNode(
            node_id=node_id,
            parent_id=None,
            frame_index=0,
            seed=seed,
            latent_ref=feature,
            stage=Stage.INITIAL,
            steps_spent=self.step_budget,
        )

    def _check_extend(self, parent, frame_index, step_budget):
        if frame_index != parent.frame_index + 1:
            raise ValueError(
                f"frame index {frame_index} must be parent's "
                f"{parent.frame_index} + 1"
            )
        if frame_index >= self.depth:
            raise ValueError(f"depth overflow: frame {frame_index} >= {self.depth}")
        if not 1 <= step_budget <= self.step_budget:
            raise ValueError(
                f"step budget {step_budget} outside [1, {self.step_budget}]"
            )

    def extend(
        self,
        parent: CandidateNode,
        node_id: int,
        frame_index: int,
        seed: int,
        stage: Stage,
        prompt: TextPrompt,
        step_budget: Optional[int] = None,
    ) -> CandidateNode:
        budget = self.step_budget if step_budget is None else step_budget
        self._check_extend(parent, frame_index, budget)
        feature = self.landscape.child_feature(parent.latent_ref, stage, seed)
        return CandidateNode(
            node_id=node_id,
            parent_id=parent.node_id,
            frame_index=frame_index,
            seed=seed,
            latent_ref=feature,
            stage=stage,
            steps_spent=budget,
        )

    def begin_partial(
        self,
        parent: CandidateNode,
        node_id: int,
        frame_index: int,
        seed: int,
        stage: Stage,
        prompt: TextPrompt,
    ) -> PartialFrameState:
        if not self.capabilities.supports_partial_denoise:
            raise CapabilityError("generator does not support partial denoising")
        self._check_extend(parent, frame_index, self.step_budget)
        final = self.landscape.child_feature(parent.latent_ref, stage, seed)
        noise = self.landscape.feature_noise(seed)
        return PartialFrameState(
            node_id=node_id,
            parent_id=parent.node_id,
            frame_index=frame_index,
            seed=seed,
            stage=stage,
            latent_ref=noise,
            steps_done=0,
            step_budget=self.step_budget,
            final_latent=final,
            noise_latent=noise,
        )

    def partial_denoise(self, state: PartialFrameState, steps: int) -> PartialFrameState:
        if not self.capabilities.supports_partial_denoise:
            raise CapabilityError("generator does not support partial denoising")
        if steps < 0:
            raise ValueError("steps must be non-negative")
        done = min(state.step_budget, state.steps_done + steps)
        latent = self.landscape.partial_feature(
            state.final_latent, state.noise_latent, done / state.step_budget
        )
        return replace(state, steps_done=done, latent_ref=latent)

    def node_from_state(self, state: PartialFrameState, truncated: bool) -> CandidateNode:
        if not truncated and state.steps_done < state.step_budget:
            raise ValueError("cannot finalize an incomplete frame as complete")
        return CandidateNode(
            node_id=state.node_id,
            parent_id=state.parent_id,
            frame_index=state.frame_index,
            seed=state.seed,
            latent_ref=state.latent_ref,
            stage=state.stage,
            steps_spent=state.steps_done,
            truncated=truncated,
        )

    def decode(self, path: SearchPath) -> tuple[tuple[float, ...], ...]:
        """Synthetic decode is the identity on feature points."""
        if len(path.nodes) != self.depth:
            raise ValueError(
                f"cannot decode incomplete path of length {len(path.nodes)} "
                f"(depth {self.depth})"
            )
        return tuple(n.latent_ref for n in path.nodes)
