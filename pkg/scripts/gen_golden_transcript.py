#!/usr/bin/env python3
"""Regenerate the frozen protocol fixtures under tests/data/.

Emits the shared landscape fixture and the 10-pair golden transcript that
pins the wire format byte-for-byte.  Run only when the protocol or the
synthetic closed form intentionally changes; commit the diff.
"""

from __future__ import annotations

import json
from pathlib import Path

from tofsearch.core import LandscapeSpec, Stage
from tofsearch.generator import SyntheticLandscape
from tofsearch.protocol import encode_message
from tofsearch.verifiers import _STAGE_SUFFIXES

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"
FIXTURE_SEED = 424242
PROMPT = "a paper boat drifts under a stone bridge"
PROMPT_ID = "boat"
BUDGET = 8


def main() -> None:
    landscape = SyntheticLandscape(LandscapeSpec(landscape_seed=FIXTURE_SEED))
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    (DATA_DIR / "landscape_fixture.json").write_text(
        landscape.fixture_json() + "\n", encoding="utf-8"
    )

    # Worker-side state mirrored here: handles minted h1, h2, ... in
    # request order; each holds (final feature, noise, steps_done, stage,
    # parent handle).
    store: dict[str, dict] = {}
    counter = 0

    def mint() -> str:
        nonlocal counter
        counter += 1
        return f"h{counter}"

    def generate(parent, frame_index, seed, stage, steps):
        if parent is None:
            final = landscape.root_feature(seed)
        else:
            final = landscape.child_feature(store[parent]["final"], stage, seed)
        noise = landscape.feature_noise(seed)
        handle = mint()
        store[handle] = {
            "final": final, "noise": noise, "steps": steps,
            "stage": stage, "parent": parent,
        }
        return handle

    def latent(handle):
        entry = store[handle]
        return landscape.partial_feature(
            entry["final"], entry["noise"], entry["steps"] / BUDGET
        )

    def verify(handles, stage, mode):
        feats = [latent(h) for h in handles]
        if mode == "frame":
            parent = feats[-2] if len(feats) > 1 else None
            return landscape.frame_quality(feats[-1], stage, parent)
        return landscape.path_quality(
            feats, [store[h]["stage"] for h in handles]
        )

    pairs = []

    def pair(msg_id, kind, payload, resp_kind, resp_payload):
        pairs.append({
            "request": encode_message(msg_id, kind, payload),
            "response": encode_message(msg_id, resp_kind, resp_payload),
        })

    def gen_pair(msg_id, parent, frame_index, seed, stage, steps):
        handle = generate(parent, frame_index, seed, stage, steps)
        pair(
            msg_id, "generate_request",
            {"parent": parent, "frame_index": frame_index, "seed": seed,
             "stage": stage.value, "prompt": PROMPT, "step_budget": BUDGET,
             "steps": steps},
            "generate_response",
            {"handle": handle, "progress": steps / BUDGET, "steps_done": steps},
        )
        return handle

    h1 = gen_pair(1, None, 0, 7, Stage.INITIAL, BUDGET)
    h2 = gen_pair(2, h1, 1, 9001, Stage.INTERMEDIATE, 0)

    for msg_id, steps_now in ((3, 4), (4, 8)):
        store[h2]["steps"] = steps_now
        pair(
            msg_id, "partial_denoise_request", {"handle": h2, "steps": 4},
            "partial_denoise_response",
            {"handle": h2, "progress": steps_now / BUDGET,
             "steps_done": steps_now},
        )

    h3 = gen_pair(5, h1, 1, 9001, Stage.INTERMEDIATE, BUDGET)

    for msg_id, handles, stage, mode in (
        (6, [h1], Stage.INITIAL, "frame"),
        (7, [h1, h2], Stage.INTERMEDIATE, "frame"),
        (8, [h1, h3], Stage.FINAL, "final"),
    ):
        pair(
            msg_id, "verify_request",
            {"handles": handles, "mode": mode, "stage": stage.value,
             "prompt": PROMPT},
            "verify_response", {"score": verify(handles, stage, mode)},
        )

    pair(
        9, "gate_request",
        {"gate": "clarity", "handle": h2, "stage": "intermediate",
         "prompt": PROMPT, "threshold": 0.4},
        "gate_response",
        {"score": None, "verdict": store[h2]["steps"] / BUDGET >= 0.4},
    )

    pair(
        10, "decompose_request",
        {"prompt": {"text": PROMPT, "id": PROMPT_ID}},
        "decompose_response",
        {
            "prompts": [
                {"text": f"{PROMPT} ({_STAGE_SUFFIXES[stage]})",
                 "id": f"{PROMPT_ID}#{stage.value}"}
                for stage in (Stage.INITIAL, Stage.INTERMEDIATE, Stage.FINAL)
            ],
            "source": "externally-supplied",
        },
    )

    out = DATA_DIR / "golden_transcript.jsonl"
    out.write_text(
        "".join(json.dumps(p, sort_keys=True) + "\n" for p in pairs),
        encoding="utf-8",
    )
    print(f"wrote {out} ({len(pairs)} pairs)")
    print(f"wrote {DATA_DIR / 'landscape_fixture.json'}")


if __name__ == "__main__":
    main()
