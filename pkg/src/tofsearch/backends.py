"""Construction of in-process generator/verifier backends from a config.

Verifier ids in `verifier_weights` select implementations: "synthetic"
(optionally suffixed, e.g. "synthetic:b") scores with the landscape closed
form; "constant" ties everything.  Worker-backed ids are attached by the
CLI layer, not here.
"""

from __future__ import annotations

from .core import ConfigError, RunConfig
from .generator import SyntheticGenerator, SyntheticLandscape
from .verifiers import ConstantVerifier, SyntheticVerifier, Verifier


def build_landscape(config: RunConfig) -> SyntheticLandscape:
    return SyntheticLandscape(config.landscape)


def build_synthetic_generator(
    config: RunConfig, landscape: SyntheticLandscape | None = None
) -> SyntheticGenerator:
    return SyntheticGenerator(
        landscape or build_landscape(config),
        depth=config.schedule.depth,
        step_budget=config.schedule.denoise_steps_per_frame,
        temporal_length=config.schedule.latent_temporal_length,
    )


def build_synthetic_ensemble(
    config: RunConfig, landscape: SyntheticLandscape | None = None
) -> list[Verifier]:
    landscape = landscape or build_landscape(config)
    ensemble: list[Verifier] = []
    for vid in sorted(config.verifier_weights):
        kind = vid.split(":", 1)[0]
        if kind == "synthetic":
            ensemble.append(SyntheticVerifier(landscape, verifier_id=vid))
        elif kind == "constant":
            ensemble.append(ConstantVerifier(verifier_id=vid))
        else:
            raise ConfigError(
                [f"no in-process verifier for id {vid!r} (attach a worker?)"]
            )
    return ensemble


def build_backends(config: RunConfig):
    """(generator, ensemble) pair over one shared landscape."""
    landscape = build_landscape(config)
    return (
        build_synthetic_generator(config, landscape),
        build_synthetic_ensemble(config, landscape),
    )
