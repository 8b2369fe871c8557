"""Synthetic landscape semantics, reproduced from a fixture file.

This module deliberately re-implements the engine's closed forms from
their documented contract instead of importing engine code: matching the
engine bit-for-bit from the fixture alone is the point of the reference
worker.  Float operation order is part of that contract -- every
accumulation below runs left to right over explicit sequences.  Do not
"simplify" the arithmetic.

Fixture schema (JSON object):
    dimension            int
    smoothness_penalty   float   (jump penalty between consecutive frames)
    target_pull          float   (slerp weight toward the stage target)
    noise_amplitude      float   (seed-noise perturbation scale)
    noise_key            int     (64-bit key of the seed -> feature map)
    targets              {"initial"|"intermediate"|"final": [float * dimension]}
"""

from __future__ import annotations

import json
import math
from pathlib import Path

MASK64 = 0xFFFFFFFFFFFFFFFF
TWO64 = 18446744073709551616.0

STAGES = ("initial", "intermediate", "final")


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64(key: int, *parts: int) -> int:
    h = key & MASK64
    for p in parts:
        h = splitmix64(h ^ (p & MASK64))
    return h


def unit_open(h: int) -> float:
    return (h + 0.5) / TWO64


def unit_vector(key: int, dimension: int) -> tuple[float, ...]:
    zs: list[float] = []
    for i in range((dimension + 1) // 2):
        u1 = unit_open(mix64(key, 2 * i))
        u2 = unit_open(mix64(key, 2 * i + 1))
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        zs.append(r * math.cos(theta))
        zs.append(r * math.sin(theta))
    zs = zs[:dimension]
    norm = math.sqrt(sum(z * z for z in zs))
    if norm < 1e-300:
        return tuple([1.0] + [0.0] * (dimension - 1))
    return tuple(z / norm for z in zs)


def _dot(a, b) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def _sq_dist(a, b) -> float:
    s = 0.0
    for x, y in zip(a, b):
        d = x - y
        s += d * d
    return s


def _normalize(v):
    n = math.sqrt(_dot(v, v))
    if n < 1e-12:
        return None
    return tuple(x / n for x in v)


def slerp(a, b, w: float) -> tuple[float, ...]:
    c = max(-1.0, min(1.0, _dot(a, b)))
    omega = math.acos(c)
    s = math.sin(omega)
    if s < 1e-9:
        return tuple(a)
    ka = math.sin((1.0 - w) * omega) / s
    kb = math.sin(w * omega) / s
    return tuple(ka * x + kb * y for x, y in zip(a, b))


class FixtureLandscape:
    """Seed-chain quality model rebuilt from a fixture file."""

    def __init__(self, fixture: dict):
        self.dimension = int(fixture["dimension"])
        self.smoothness_penalty = float(fixture["smoothness_penalty"])
        self.target_pull = float(fixture["target_pull"])
        self.noise_amplitude = float(fixture["noise_amplitude"])
        self.noise_key = int(fixture["noise_key"])
        self.targets = {
            stage: tuple(float(x) for x in fixture["targets"][stage])
            for stage in STAGES
        }

    @classmethod
    def load(cls, path: str | Path) -> "FixtureLandscape":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def feature_noise(self, seed: int) -> tuple[float, ...]:
        return unit_vector(mix64(self.noise_key, seed), self.dimension)

    def root_feature(self, seed: int) -> tuple[float, ...]:
        return self.feature_noise(seed)

    def child_feature(self, parent, stage: str, seed: int) -> tuple[float, ...]:
        z = self.feature_noise(seed)
        base = slerp(parent, self.targets[stage], self.target_pull)
        raw = tuple(b + self.noise_amplitude * n for b, n in zip(base, z))
        return _normalize(raw) or z

    def partial_feature(self, final, noise, progress: float):
        if progress >= 1.0:
            return tuple(final)
        raw = tuple(
            (1.0 - progress) * n + progress * f for n, f in zip(noise, final)
        )
        return _normalize(raw) or tuple(final)

    def frame_quality(self, feature, stage: str, parent=None) -> float:
        q = _dot(feature, self.targets[stage])
        if parent is not None:
            q -= self.smoothness_penalty * _sq_dist(feature, parent)
        return q

    def path_quality(self, features, stages) -> float:
        if not features:
            raise ValueError("cannot score an empty trajectory")
        total = 0.0
        prev = None
        for feat, stage in zip(features, stages):
            total += self.frame_quality(feat, stage, prev)
            prev = feat
        return total / len(features)
