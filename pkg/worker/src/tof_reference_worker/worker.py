"""Reference worker: the tofsearch wire protocol over stdin/stdout.

Answers generate / partial_denoise / verify / gate / decompose requests
with the synthetic landscape semantics loaded from a fixture file, so a
search driven through this process reproduces an in-process synthetic
run exactly.  Real model backends plug in by subclassing and overriding
the handle_* hooks.

Protocol (v1): one JSON envelope {"msg_id", "kind", "payload"} per line,
canonical encoding (sorted keys, compact separators, ASCII).  Every
request is answered exactly once with the matching *_response or error
carrying the same msg_id; requests are served in arrival order;
`shutdown` (and EOF) end the loop.  Malformed lines get an error with a
null msg_id and the session continues.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Optional, TextIO

from .synth import STAGES, FixtureLandscape

PROTOCOL_VERSION = 1

STAGE_SUFFIXES = {
    "initial": "static scene: subjects, layout, and appearance of the opening frame",
    "intermediate": "motion: actions and transitions across the middle frames",
    "final": "ending state: how the sequence should conclude",
}


class UnknownHandle(KeyError):
    pass


class ReferenceWorker:
    """Single-threaded request loop with a per-session latent store."""

    def __init__(self, landscape: FixtureLandscape,
                 name: str = "reference-worker"):
        self.landscape = landscape
        self.name = name
        self.store: dict[str, dict[str, Any]] = {}
        self._counter = 0

    # -- latent store --

    def _mint(self) -> str:
        self._counter += 1
        return f"h{self._counter}"

    def _entry(self, handle: str) -> dict[str, Any]:
        try:
            return self.store[handle]
        except KeyError:
            raise UnknownHandle(handle) from None

    def _latent(self, handle: str):
        entry = self._entry(handle)
        return self.landscape.partial_feature(
            entry["final"], entry["noise"], entry["steps"] / entry["budget"]
        )

    # -- request handlers (override these to back a real model) --

    def handle_generate(self, p: dict) -> dict:
        parent = p["parent"]
        stage = p["stage"]
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if parent is None:
            final = self.landscape.root_feature(p["seed"])
        else:
            final = self.landscape.child_feature(
                self._entry(parent)["final"], stage, p["seed"]
            )
        handle = self._mint()
        self.store[handle] = {
            "final": final,
            "noise": self.landscape.feature_noise(p["seed"]),
            "steps": p["steps"],
            "budget": p["step_budget"],
            "stage": stage,
            "parent": parent,
        }
        return {"handle": handle, "progress": p["steps"] / p["step_budget"],
                "steps_done": p["steps"]}

    def handle_partial_denoise(self, p: dict) -> dict:
        entry = self._entry(p["handle"])
        entry["steps"] = min(entry["budget"], entry["steps"] + p["steps"])
        return {"handle": p["handle"],
                "progress": entry["steps"] / entry["budget"],
                "steps_done": entry["steps"]}

    def handle_verify(self, p: dict) -> dict:
        features = [self._latent(h) for h in p["handles"]]
        if p["mode"] == "frame":
            parent = features[-2] if len(features) > 1 else None
            score = self.landscape.frame_quality(features[-1], p["stage"],
                                                 parent)
        elif p["mode"] in ("clip", "final"):
            stages = [self._entry(h)["stage"] for h in p["handles"]]
            score = self.landscape.path_quality(features, stages)
        else:
            raise ValueError(f"unknown mode {p['mode']!r}")
        return {"score": score}

    def handle_gate(self, p: dict) -> dict:
        entry = self._entry(p["handle"])
        if p["gate"] == "clarity":
            progress = entry["steps"] / entry["budget"]
            return {"score": None, "verdict": progress >= p["threshold"]}
        if p["gate"] == "potential":
            parent = entry["parent"]
            score = self.landscape.frame_quality(
                self._latent(p["handle"]), p["stage"],
                self._latent(parent) if parent is not None else None,
            )
            return {"score": score, "verdict": score >= p["threshold"]}
        raise ValueError(f"unknown gate {p['gate']!r}")

    def handle_decompose(self, p: dict) -> dict:
        base = p["prompt"]
        return {
            "prompts": [
                {"text": f"{base['text']} ({STAGE_SUFFIXES[stage]})",
                 "id": f"{base['id']}#{stage}"}
                for stage in STAGES
            ],
            "source": "externally-supplied",
        }

    # -- session plumbing --

    def _send(self, out: TextIO, msg_id: Optional[int], kind: str,
              payload: dict) -> None:
        out.write(json.dumps(
            {"msg_id": msg_id, "kind": kind, "payload": payload},
            sort_keys=True, separators=(",", ":"),
        ) + "\n")
        out.flush()

    def serve(self, inp: TextIO = sys.stdin, out: TextIO = sys.stdout) -> None:
        self._send(out, 0, "hello", {"protocol_version": PROTOCOL_VERSION,
                                     "worker_name": self.name})
        self._send(out, 1, "capabilities", {
            "generator": True,
            "verifier": True,
            "gates": True,
            "decompose": True,
            "supports_partial_denoise": True,
            "supports_branching": True,
            "deterministic": True,
        })
        handlers = {
            "generate_request": ("generate_response", self.handle_generate),
            "partial_denoise_request": ("partial_denoise_response",
                                        self.handle_partial_denoise),
            "verify_request": ("verify_response", self.handle_verify),
            "gate_request": ("gate_response", self.handle_gate),
            "decompose_request": ("decompose_response", self.handle_decompose),
        }
        try:
            for line in inp:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                    msg_id = msg["msg_id"]
                    kind = msg["kind"]
                    payload = msg["payload"]
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    self._send(out, None, "error",
                               {"code": "malformed", "message": str(e)})
                    continue
                if kind == "shutdown":
                    break
                if kind not in handlers:
                    self._send(out, msg_id, "error",
                               {"code": "unsupported_kind", "message": kind})
                    continue
                resp_kind, handler = handlers[kind]
                try:
                    self._send(out, msg_id, resp_kind, handler(payload))
                except UnknownHandle as e:
                    self._send(out, msg_id, "error",
                               {"code": "unknown_handle", "message": str(e)})
                except (KeyError, TypeError, ValueError) as e:
                    self._send(out, msg_id, "error",
                               {"code": "bad_request", "message": str(e)})
        finally:
            self.store.clear()  # handles are per-session


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tof-reference-worker", description=__doc__,
    )
    parser.add_argument("--fixture", required=True,
                        help="landscape fixture JSON path")
    parser.add_argument("--name", default="reference-worker")
    args = parser.parse_args(argv)
    landscape = FixtureLandscape.load(args.fixture)
    ReferenceWorker(landscape, args.name).serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
