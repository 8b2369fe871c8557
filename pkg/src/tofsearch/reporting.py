"""Run persistence: event logs, tamper-evident manifests, and text tables.

Manifests are byte-reproducible: identical configs and seeds produce
identical files regardless of thread count or wall time.  Wall timestamps
are therefore opt-in and live under a key excluded from nothing -- when
enabled, reproducibility is knowingly traded away.
"""

from __future__ import annotations

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from .analysis import OracleResult
from .core import RunConfig, config_to_dict
from .engine import SearchResult

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
EVENTS_NAME = "events.jsonl"


def canonical_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def events_to_jsonl(events: list[dict]) -> str:
    return "".join(canonical_line(e) + "\n" for e in events)


def git_blob_sha1(data: bytes) -> str:
    """Content hash in git blob format: sha1(b"blob <len>\\0" + data)."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def build_manifest(
    result: SearchResult,
    *,
    event_log_bytes: Optional[bytes] = None,
    workers_attached: int = 0,
    nondeterministic_workers: bool = False,
    with_timestamps: bool = False,
) -> dict[str, Any]:
    config = result.config
    event_log_bytes = (
        events_to_jsonl(result.events).encode("utf-8")
        if event_log_bytes is None
        else event_log_bytes
    )
    return {
        "format": "tofsearch.manifest.v1",
        "algorithm": config.algorithm if config else None,
        "config": config_to_dict(config) if config else None,
        "event_log_hash": git_blob_sha1(event_log_bytes),
        "best_path": {
            "node_ids": list(result.best_path.node_ids),
            "seeds": list(result.best_path.seeds),
        },
        "scores": {
            "final_raw": result.best_score,
            "aggregated_rank": result.aggregated_rank_score,
            "by_accumulated": result.accumulated_best_id,
        },
        "ledger": result.ledger.totals(),
        "transport": {
            "workers_attached": workers_attached,
            "nondeterministic_workers": nondeterministic_workers,
        },
        "timestamps": (
            {"written": datetime.now(timezone.utc).isoformat()}
            if with_timestamps
            else None
        ),
    }


def build_oracle_manifest(
    config: RunConfig, oracle: OracleResult, *, with_timestamps: bool = False
) -> dict[str, Any]:
    return {
        "format": "tofsearch.manifest.v1",
        "algorithm": "oracle",
        "config": config_to_dict(config),
        "event_log_hash": None,
        "best_path": {
            "node_ids": None,
            "seeds": list(oracle.seed_chain),
            "ordinals": list(oracle.ordinal_chain),
        },
        "scores": {"final_raw": oracle.best_score},
        "ledger": {"paths_enumerated": oracle.paths_enumerated},
        "transport": {"workers_attached": 0, "nondeterministic_workers": False},
        "timestamps": (
            {"written": datetime.now(timezone.utc).isoformat()}
            if with_timestamps
            else None
        ),
    }


def manifest_to_json(manifest: dict[str, Any]) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def write_run_outputs(
    out_dir: Path,
    result: SearchResult,
    *,
    workers_attached: int = 0,
    nondeterministic_workers: bool = False,
    with_timestamps: bool = False,
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    event_bytes = events_to_jsonl(result.events).encode("utf-8")
    events_path = out_dir / EVENTS_NAME
    events_path.write_bytes(event_bytes)
    manifest = build_manifest(
        result,
        event_log_bytes=event_bytes,
        workers_attached=workers_attached,
        nondeterministic_workers=nondeterministic_workers,
        with_timestamps=with_timestamps,
    )
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(manifest_to_json(manifest), encoding="utf-8")
    log.info("wrote %s and %s", manifest_path, events_path)
    return {"manifest": manifest_path, "events": events_path}


def check_manifest_integrity(out_dir: Path) -> bool:
    """Re-hash the stored event log and compare with the manifest."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    if manifest["event_log_hash"] is None:
        return True
    data = (out_dir / EVENTS_NAME).read_bytes()
    return git_blob_sha1(data) == manifest["event_log_hash"]
