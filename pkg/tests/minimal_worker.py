"""Minimal protocol worker used by the primary test suite.

Speaks the full wire protocol over stdin/stdout with the synthetic
landscape semantics (loaded from a fixture file).  This is a test utility
of the engine package and may import it freely; an external worker
implementation must reproduce the same responses from the fixture alone.

Usage: python minimal_worker.py --fixture landscape_fixture.json
       [--skip-steps N] [--name NAME]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tofsearch.core import LandscapeSpec, Stage  # noqa: E402
from tofsearch.generator import SyntheticLandscape  # noqa: E402
from tofsearch.verifiers import _STAGE_SUFFIXES  # noqa: E402


class FixtureLandscape(SyntheticLandscape):
    """Landscape reconstructed from a fixture file instead of a seed."""

    def __init__(self, fixture: dict):
        super().__init__(LandscapeSpec(
            dimension=fixture["dimension"],
            smoothness_penalty=fixture["smoothness_penalty"],
            target_pull=fixture["target_pull"],
            noise_amplitude=fixture["noise_amplitude"],
        ))
        self.noise_key = fixture["noise_key"]
        self.targets = {
            Stage(name): tuple(vec) for name, vec in fixture["targets"].items()
        }


class MinimalWorker:
    def __init__(self, landscape, name="minimal-worker"):
        self.landscape = landscape
        self.name = name
        self.store: dict[str, dict] = {}
        self.counter = 0

    def send(self, msg_id, kind, payload):
        line = json.dumps(
            {"msg_id": msg_id, "kind": kind, "payload": payload},
            sort_keys=True, separators=(",", ":"),
        )
        sys.stdout.write(line + "\n")
        sys.stdout.flush()

    def error(self, msg_id, code, message):
        self.send(msg_id, "error", {"code": code, "message": message})

    def latent(self, handle):
        e = self.store[handle]
        return self.landscape.partial_feature(
            e["final"], e["noise"], e["steps"] / e["budget"]
        )

    def handle_generate(self, p):
        parent = p["parent"]
        if parent is None:
            final = self.landscape.root_feature(p["seed"])
        else:
            if parent not in self.store:
                raise KeyError(parent)
            final = self.landscape.child_feature(
                self.store[parent]["final"], Stage(p["stage"]), p["seed"]
            )
        self.counter += 1
        handle = f"h{self.counter}"
        self.store[handle] = {
            "final": final,
            "noise": self.landscape.feature_noise(p["seed"]),
            "steps": p["steps"],
            "budget": p["step_budget"],
            "stage": Stage(p["stage"]),
            "parent": parent,
        }
        return {"handle": handle, "progress": p["steps"] / p["step_budget"],
                "steps_done": p["steps"]}

    def handle_partial(self, p):
        e = self.store[p["handle"]]
        e["steps"] = min(e["budget"], e["steps"] + p["steps"])
        return {"handle": p["handle"], "progress": e["steps"] / e["budget"],
                "steps_done": e["steps"]}

    def handle_verify(self, p):
        feats = [self.latent(h) for h in p["handles"]]
        if p["mode"] == "frame":
            parent = feats[-2] if len(feats) > 1 else None
            score = self.landscape.frame_quality(feats[-1], Stage(p["stage"]),
                                                 parent)
        else:
            stages = [self.store[h]["stage"] for h in p["handles"]]
            score = self.landscape.path_quality(feats, stages)
        return {"score": score}

    def handle_gate(self, p):
        e = self.store[p["handle"]]
        if p["gate"] == "clarity":
            return {"score": None,
                    "verdict": e["steps"] / e["budget"] >= p["threshold"]}
        parent = e["parent"]
        score = self.landscape.frame_quality(
            self.latent(p["handle"]), Stage(p["stage"]),
            self.latent(parent) if parent else None,
        )
        return {"score": score, "verdict": score >= p["threshold"]}

    def handle_decompose(self, p):
        base = p["prompt"]
        return {
            "prompts": [
                {"text": f"{base['text']} ({_STAGE_SUFFIXES[stage]})",
                 "id": f"{base['id']}#{stage.value}"}
                for stage in (Stage.INITIAL, Stage.INTERMEDIATE, Stage.FINAL)
            ],
            "source": "externally-supplied",
        }

    def serve(self):
        self.send(0, "hello", {"protocol_version": 1, "worker_name": self.name})
        self.send(1, "capabilities", {
            "generator": True, "verifier": True, "gates": True,
            "decompose": True, "supports_partial_denoise": True,
            "supports_branching": True, "deterministic": True,
        })
        handlers = {
            "generate_request": ("generate_response", self.handle_generate),
            "partial_denoise_request": ("partial_denoise_response",
                                        self.handle_partial),
            "verify_request": ("verify_response", self.handle_verify),
            "gate_request": ("gate_response", self.handle_gate),
            "decompose_request": ("decompose_response", self.handle_decompose),
        }
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                msg_id, kind, payload = msg["msg_id"], msg["kind"], msg["payload"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                self.error(None, "malformed", str(e))
                continue
            if kind == "shutdown":
                return
            if kind not in handlers:
                self.error(msg_id, "unsupported_kind", kind)
                continue
            resp_kind, handler = handlers[kind]
            try:
                self.send(msg_id, resp_kind, handler(payload))
            except KeyError as e:
                self.error(msg_id, "unknown_handle", str(e))
            except Exception as e:  # keep the session alive
                self.error(msg_id, "internal", str(e))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--fixture", required=True)
    parser.add_argument("--name", default="minimal-worker")
    args = parser.parse_args()
    fixture = json.loads(Path(args.fixture).read_text(encoding="utf-8"))
    MinimalWorker(FixtureLandscape(fixture), args.name).serve()


if __name__ == "__main__":
    main()
