"""Newline-delimited JSON worker protocol.

External generators/verifiers attach as subprocesses speaking one JSON
envelope per line over stdin/stdout:

    {"msg_id": <int>, "kind": <str>, "payload": <object>}

The worker opens the session by announcing `hello` (protocol_version 1)
and `capabilities`; afterwards the engine sends `*_request` messages and
the worker answers each exactly once with the matching `*_response` (or
`error`) carrying the request's msg_id.  Responses may arrive out of
order; the engine pipelines up to a bounded in-flight window.  `shutdown`
is a fire-and-forget control message.

Fault semantics at the engine boundary: generator faults are fail-closed
(the candidate is dropped), verifier faults are fail-open (the candidate
survives unscored).
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional, Sequence

from .core import CandidateNode, ProtocolError, SearchPath, Stage, TextPrompt
from .generator import (
    Generator,
    GeneratorCapabilities,
    GeneratorFault,
    PartialFrameState,
)
from .verifiers import Verifier, VerifierFault

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT = 10.0
REQUEST_TIMEOUT = 120.0
INFLIGHT_WINDOW = 4

REQUEST_KINDS = (
    "generate_request",
    "partial_denoise_request",
    "verify_request",
    "gate_request",
    "decompose_request",
)
ALL_KINDS = (
    ("hello", "capabilities", "error", "shutdown")
    + REQUEST_KINDS
    + tuple(k.replace("_request", "_response") for k in REQUEST_KINDS)
)


@dataclass(frozen=True)
class WorkerMessage:
    msg_id: Optional[int]
    kind: str
    payload: dict[str, Any]


def encode_message(msg_id: Optional[int], kind: str, payload: dict) -> str:
    """One canonical line, no trailing newline: compact, sorted keys,
    ASCII-escaped.  Canonical form is what golden transcripts pin down."""
    return json.dumps(
        {"msg_id": msg_id, "kind": kind, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
    )


def parse_message(line: str) -> WorkerMessage:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed message line: {e}") from e
    if not isinstance(data, dict):
        raise ProtocolError("message must be a JSON object")
    if set(data) != {"msg_id", "kind", "payload"}:
        raise ProtocolError(f"bad envelope keys: {sorted(data)}")
    kind = data["kind"]
    if kind not in ALL_KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    msg_id = data["msg_id"]
    if msg_id is not None and not isinstance(msg_id, int):
        raise ProtocolError("msg_id must be an integer or null")
    if msg_id is None and kind != "error":
        raise ProtocolError(f"null msg_id only allowed on error, not {kind!r}")
    if not isinstance(data["payload"], dict):
        raise ProtocolError("payload must be a JSON object")
    return WorkerMessage(msg_id=msg_id, kind=kind, payload=data["payload"])


@dataclass(frozen=True)
class WorkerCapabilities:
    worker_name: str = "worker"
    generator: bool = False
    verifier: bool = False
    gates: bool = False
    decompose: bool = False
    supports_partial_denoise: bool = False
    supports_branching: bool = True
    deterministic: bool = True


class WorkerTimeout(RuntimeError):
    pass


class WorkerError(RuntimeError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


class CapabilityMismatch(RuntimeError):
    pass


# --- transports -----------------------------------------------------------------


class Transport:
    """Line-oriented bidirectional channel to one worker."""

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: Optional[float]) -> Optional[str]:
        """Next line without trailing newline, or None on EOF."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class SubprocessTransport(Transport):
    """Spawn a worker command and talk over its standard streams."""

    def __init__(self, command: str | Sequence[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[Optional[str]] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._write_lock = threading.Lock()

    def _pump(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        if self.proc.poll() is not None:
            raise ProtocolError("worker process has exited")
        with self._write_lock:
            assert self.proc.stdin is not None
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()

    def recv_line(self, timeout: Optional[float]) -> Optional[str]:
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            raise WorkerTimeout("no line from worker within timeout") from None

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


# --- client -----------------------------------------------------------------------


class _Pending:
    __slots__ = ("event", "message")

    def __init__(self):
        self.event = threading.Event()
        self.message: Optional[WorkerMessage] = None


class WorkerClient:
    """Pipelined request/response client over one transport.

    Thread-safe: multiple engine threads may issue requests concurrently;
    a background reader matches responses to requests by msg_id.  Keeps
    totality accounting (sent / answered / timed out) for protocol-check.
    """

    def __init__(
        self,
        transport: Transport,
        *,
        request_timeout: float = REQUEST_TIMEOUT,
        window: int = INFLIGHT_WINDOW,
    ):
        self.transport = transport
        self.request_timeout = request_timeout
        self.capabilities: Optional[WorkerCapabilities] = None
        self._window = threading.BoundedSemaphore(window)
        self._lock = threading.Lock()
        self._next_id = 1
        self._pending: dict[int, _Pending] = {}
        self._timed_out: set[int] = set()
        self._session_fault: Optional[str] = None
        self._reader: Optional[threading.Thread] = None
        self.sent = 0
        self.answered = 0
        self.timeouts = 0
        self.violations: list[str] = []

    # -- session lifecycle --

    def handshake(self, timeout: float = HANDSHAKE_TIMEOUT) -> WorkerCapabilities:
        hello = self._read_handshake_message(timeout)
        if hello.kind != "hello":
            raise ProtocolError(f"expected hello, got {hello.kind!r}")
        version = hello.payload.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"unsupported protocol_version {version!r} "
                f"(engine speaks {PROTOCOL_VERSION})"
            )
        caps_msg = self._read_handshake_message(timeout)
        if caps_msg.kind != "capabilities":
            raise ProtocolError(f"expected capabilities, got {caps_msg.kind!r}")
        known = {f for f in WorkerCapabilities.__dataclass_fields__}
        fields = {k: v for k, v in caps_msg.payload.items() if k in known}
        fields["worker_name"] = hello.payload.get("worker_name", "worker")
        self.capabilities = WorkerCapabilities(**fields)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        return self.capabilities

    def _read_handshake_message(self, timeout: float) -> WorkerMessage:
        line = self.transport.recv_line(timeout)
        if line is None:
            raise ProtocolError("worker closed the stream during handshake")
        return parse_message(line)

    def close(self) -> None:
        try:
            with self._lock:
                msg_id = self._next_id
                self._next_id += 1
            self.transport.send_line(encode_message(msg_id, "shutdown", {}))
        except Exception:
            pass
        self.transport.close()

    # -- request path --

    def request(self, kind: str, payload: dict) -> dict:
        if kind not in REQUEST_KINDS:
            raise ValueError(f"not a request kind: {kind!r}")
        return self._roundtrip(kind, payload)

    def _roundtrip(self, kind: str, payload: dict) -> dict:
        if self._session_fault:
            raise ProtocolError(f"session is down: {self._session_fault}")
        with self._window:
            with self._lock:
                msg_id = self._next_id
                self._next_id += 1
                pending = _Pending()
                self._pending[msg_id] = pending
                self.sent += 1
            self.transport.send_line(encode_message(msg_id, kind, payload))
            if not pending.event.wait(self.request_timeout):
                with self._lock:
                    self._pending.pop(msg_id, None)
                    self._timed_out.add(msg_id)
                    self.timeouts += 1
                raise WorkerTimeout(f"{kind} msg_id={msg_id} timed out")
            if pending.message is None:
                raise ProtocolError(
                    f"session closed while waiting for msg_id={msg_id}: "
                    f"{self._session_fault}"
                )
            msg = pending.message
            if msg.kind == "error":
                raise WorkerError(
                    str(msg.payload.get("code", "unknown")),
                    str(msg.payload.get("message", "")),
                )
            expected = kind.replace("_request", "_response")
            if msg.kind != expected:
                raise ProtocolError(f"expected {expected}, got {msg.kind}")
            return msg.payload

    def _read_loop(self) -> None:
        while True:
            try:
                line = self.transport.recv_line(None)
            except Exception as e:
                self._fail_session(f"transport error: {e}")
                return
            if line is None:
                self._fail_session("worker closed the stream")
                return
            try:
                msg = parse_message(line)
            except ProtocolError as e:
                self.violations.append(str(e))
                self._fail_session(str(e))
                return
            if msg.msg_id is None:  # session-level error report
                log.warning("worker error: %s", msg.payload)
                continue
            with self._lock:
                pending = self._pending.pop(msg.msg_id, None)
                late = msg.msg_id in self._timed_out
            if pending is None:
                if late:
                    log.warning("late response for timed-out msg_id=%s", msg.msg_id)
                    continue
                self.violations.append(f"response for unknown msg_id={msg.msg_id}")
                self._fail_session(f"unknown msg_id {msg.msg_id}")
                return
            self.answered += 1
            pending.message = msg
            pending.event.set()

    def _fail_session(self, reason: str) -> None:
        with self._lock:
            self._session_fault = reason
            stuck = list(self._pending.values())
            self._pending.clear()
        for p in stuck:
            p.event.set()


# --- engine-side adapters ------------------------------------------------------------


class WorkerGenerator(Generator):
    """GeneratorInterface over the wire.  latent_ref is a worker-minted
    opaque handle string; the engine never interprets it."""

    def __init__(self, client: WorkerClient, *, depth: int, step_budget: int,
                 temporal_length: int = 1):
        caps = client.capabilities or WorkerCapabilities()
        if not caps.generator:
            raise CapabilityMismatch("worker does not declare generator capability")
        self.client = client
        self.depth = depth
        self.step_budget = step_budget
        self.temporal_length = temporal_length
        self.capabilities = GeneratorCapabilities(
            supports_partial_denoise=caps.supports_partial_denoise,
            supports_branching=caps.supports_branching,
            deterministic=caps.deterministic,
        )

    def _generate(self, parent_handle: Optional[str], frame_index: int, seed: int,
                  stage: Stage, prompt: TextPrompt, steps: int) -> dict:
        try:
            return self.client.request("generate_request", {
                "parent": parent_handle,
                "frame_index": frame_index,
                "seed": seed,
                "stage": stage.value,
                "prompt": prompt.text,
                "step_budget": self.step_budget,
                "steps": steps,
            })
        except (WorkerError, WorkerTimeout, ProtocolError) as e:
            raise GeneratorFault(str(e)) from e

    def sample_root(self, node_id: int, seed: int, prompt: TextPrompt) -> CandidateNode:
        resp = self._generate(None, 0, seed, Stage.INITIAL, prompt, self.step_budget)
        return CandidateNode(
            node_id=node_id, parent_id=None, frame_index=0, seed=seed,
            latent_ref=resp["handle"], stage=Stage.INITIAL,
            steps_spent=self.step_budget,
        )

    def extend(self, parent, node_id, frame_index, seed, stage, prompt,
               step_budget=None):
        budget = self.step_budget if step_budget is None else step_budget
        if frame_index != parent.frame_index + 1:
            raise ValueError("frame index must extend the parent by one")
        if frame_index >= self.depth:
            raise ValueError(f"depth overflow: {frame_index} >= {self.depth}")
        if not 1 <= budget <= self.step_budget:
            raise ValueError("step budget outside [1, budget]")
        resp = self._generate(parent.latent_ref, frame_index, seed, stage,
                              prompt, budget)
        return CandidateNode(
            node_id=node_id, parent_id=parent.node_id, frame_index=frame_index,
            seed=seed, latent_ref=resp["handle"], stage=stage, steps_spent=budget,
        )

    def begin_partial(self, parent, node_id, frame_index, seed, stage, prompt):
        if not self.capabilities.supports_partial_denoise:
            raise CapabilityMismatch("worker lacks partial denoise support")
        resp = self._generate(parent.latent_ref, frame_index, seed, stage, prompt, 0)
        return PartialFrameState(
            node_id=node_id, parent_id=parent.node_id, frame_index=frame_index,
            seed=seed, stage=stage, latent_ref=resp["handle"], steps_done=0,
            step_budget=self.step_budget,
        )

    def partial_denoise(self, state: PartialFrameState, steps: int) -> PartialFrameState:
        try:
            resp = self.client.request("partial_denoise_request", {
                "handle": state.latent_ref, "steps": steps,
            })
        except (WorkerError, WorkerTimeout, ProtocolError) as e:
            raise GeneratorFault(str(e)) from e
        return replace(state, steps_done=resp["steps_done"],
                       latent_ref=resp["handle"])

    def node_from_state(self, state: PartialFrameState, truncated: bool) -> CandidateNode:
        if not truncated and state.steps_done < state.step_budget:
            raise ValueError("cannot finalize an incomplete frame as complete")
        return CandidateNode(
            node_id=state.node_id, parent_id=state.parent_id,
            frame_index=state.frame_index, seed=state.seed,
            latent_ref=state.latent_ref, stage=state.stage,
            steps_spent=state.steps_done, truncated=truncated,
        )

    def decode(self, path: SearchPath):
        if len(path.nodes) != self.depth:
            raise ValueError("cannot decode an incomplete path")
        return tuple(n.latent_ref for n in path.nodes)

    def close(self) -> None:
        self.client.close()


class WorkerVerifier(Verifier):
    """VerifierInterface over the wire; faults surface as VerifierFault so
    the engine can fail open."""

    def __init__(self, client: WorkerClient, verifier_id: Optional[str] = None):
        caps = client.capabilities or WorkerCapabilities()
        if not caps.verifier:
            raise CapabilityMismatch("worker does not declare verifier capability")
        self.client = client
        self.verifier_id = verifier_id or caps.worker_name
        self.deterministic = caps.deterministic

    def score(self, prefix, stage, prompt, mode="frame"):
        handles = [p.latent_ref for p in prefix]
        if not all(isinstance(h, str) for h in handles):
            raise VerifierFault("worker verifier needs worker-minted handles")
        try:
            resp = self.client.request("verify_request", {
                "handles": handles,
                "mode": mode,
                "stage": stage.value,
                "prompt": prompt.text,
            })
        except (WorkerError, WorkerTimeout, ProtocolError) as e:
            raise VerifierFault(str(e)) from e
        score = resp.get("score")
        if not isinstance(score, (int, float)):
            raise VerifierFault(f"non-numeric score {score!r}")
        return float(score)


def worker_decomposer(client: WorkerClient) -> Callable[[TextPrompt], list[TextPrompt]]:
    def decompose(prompt: TextPrompt) -> list[TextPrompt]:
        resp = client.request("decompose_request", {
            "prompt": {"text": prompt.text, "id": prompt.id},
        })
        return [TextPrompt(text=p["text"], id=p["id"]) for p in resp["prompts"]]

    return decompose


@dataclass
class WorkerSession:
    client: WorkerClient
    capabilities: WorkerCapabilities

    def close(self) -> None:
        self.client.close()


def worker_session(
    transport: Transport,
    *,
    handshake_timeout: float = HANDSHAKE_TIMEOUT,
    request_timeout: float = REQUEST_TIMEOUT,
) -> WorkerSession:
    client = WorkerClient(transport, request_timeout=request_timeout)
    caps = client.handshake(handshake_timeout)
    log.info("attached worker %r (generator=%s verifier=%s deterministic=%s)",
             caps.worker_name, caps.generator, caps.verifier, caps.deterministic)
    return WorkerSession(client=client, capabilities=caps)


# --- conformance battery ---------------------------------------------------------------


def protocol_check(
    transport: Transport,
    *,
    request_timeout: float = REQUEST_TIMEOUT,
) -> dict[str, Any]:
    """Run the protocol conformance battery against a live worker.

    Covers the handshake, every request kind, determinism of repeated
    calls, resume-equals-one-shot partial denoising, the error path for an
    unknown request kind, and msg_id totality accounting.
    """
    violations: list[str] = []
    checks: list[str] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        checks.append(name)
        if not ok:
            violations.append(f"{name}: {detail}" if detail else name)

    client = WorkerClient(transport, request_timeout=request_timeout)
    try:
        caps = client.handshake()
        check("handshake", True)
    except ProtocolError as e:
        return {"checks": ["handshake"], "violations": [f"handshake: {e}"],
                "passed": False}

    prompt = "protocol conformance probe"
    try:
        if caps.generator:
            a = client.request("generate_request", {
                "parent": None, "frame_index": 0, "seed": 7, "stage": "initial",
                "prompt": prompt, "step_budget": 8, "steps": 8,
            })
            b = client.request("generate_request", {
                "parent": None, "frame_index": 0, "seed": 7, "stage": "initial",
                "prompt": prompt, "step_budget": 8, "steps": 8,
            })
            check("generate_full_progress", a["progress"] == 1.0,
                  f"progress={a['progress']}")
            if caps.verifier:
                sa = client.request("verify_request", {
                    "handles": [a["handle"]], "mode": "frame",
                    "stage": "initial", "prompt": prompt,
                })["score"]
                sb = client.request("verify_request", {
                    "handles": [b["handle"]], "mode": "frame",
                    "stage": "initial", "prompt": prompt,
                })["score"]
                check("generate_deterministic", sa == sb, f"{sa} != {sb}")

            if caps.supports_partial_denoise:
                p = client.request("generate_request", {
                    "parent": a["handle"], "frame_index": 1, "seed": 9,
                    "stage": "intermediate", "prompt": prompt,
                    "step_budget": 8, "steps": 0,
                })
                check("partial_zero_progress", p["progress"] == 0.0,
                      f"progress={p['progress']}")
                half = client.request("partial_denoise_request",
                                      {"handle": p["handle"], "steps": 4})
                check("partial_half_progress", 0.0 < half["progress"] < 1.0,
                      f"progress={half['progress']}")
                full = client.request("partial_denoise_request",
                                      {"handle": p["handle"], "steps": 4})
                check("partial_resumed_full", full["progress"] == 1.0,
                      f"progress={full['progress']}")
                oneshot = client.request("generate_request", {
                    "parent": a["handle"], "frame_index": 1, "seed": 9,
                    "stage": "intermediate", "prompt": prompt,
                    "step_budget": 8, "steps": 8,
                })
                if caps.verifier:
                    s_resumed = client.request("verify_request", {
                        "handles": [a["handle"], full["handle"]], "mode": "frame",
                        "stage": "intermediate", "prompt": prompt,
                    })["score"]
                    s_oneshot = client.request("verify_request", {
                        "handles": [a["handle"], oneshot["handle"]], "mode": "frame",
                        "stage": "intermediate", "prompt": prompt,
                    })["score"]
                    check("resume_equals_oneshot", s_resumed == s_oneshot,
                          f"{s_resumed} != {s_oneshot}")

            if caps.gates:
                g = client.request("gate_request", {
                    "gate": "clarity", "handle": a["handle"],
                    "stage": "initial", "prompt": prompt, "threshold": 0.4,
                })
                check("gate_clarity_full_frame", g["verdict"] is True,
                      f"verdict={g['verdict']}")

        if caps.decompose:
            d = client.request("decompose_request", {
                "prompt": {"text": prompt, "id": "probe"},
            })
            check("decompose_three_prompts", len(d.get("prompts", [])) == 3,
                  f"got {len(d.get('prompts', []))}")

        # Unknown request kind must produce an error response, not a hang
        # or a dead session.
        try:
            client.request("verify_request", {"handles": ["no-such-handle"],
                                              "mode": "frame",
                                              "stage": "initial",
                                              "prompt": prompt})
            check("unknown_handle_is_error", False, "expected error response")
        except WorkerError:
            check("unknown_handle_is_error", True)
        except (WorkerTimeout, ProtocolError) as e:
            check("unknown_handle_is_error", False, str(e))

        if caps.decompose:  # session must still be alive after an error
            d2 = client.request("decompose_request", {
                "prompt": {"text": prompt, "id": "probe2"},
            })
            check("session_survives_error", len(d2.get("prompts", [])) == 3)
    except (WorkerError, WorkerTimeout, ProtocolError) as e:
        violations.append(f"battery aborted: {e}")

    check("msg_id_totality",
          client.sent == client.answered + client.timeouts,
          f"sent={client.sent} answered={client.answered} "
          f"timeouts={client.timeouts}")
    check("no_reader_violations", not client.violations,
          "; ".join(client.violations))
    client.close()
    return {"checks": checks, "violations": violations,
            "passed": not violations}


def replay_transcript(transport: Transport, pairs: Sequence[dict]) -> list[str]:
    """Replay frozen request lines against a live worker; every response
    line must match the transcript byte-for-byte.  The worker's hello and
    capabilities lines are consumed (and checked) first."""
    mismatches = []
    hello = transport.recv_line(HANDSHAKE_TIMEOUT)
    caps = transport.recv_line(HANDSHAKE_TIMEOUT)
    for label, line in (("hello", hello), ("capabilities", caps)):
        if line is None:
            mismatches.append(f"missing {label} line")
            return mismatches
        if parse_message(line).kind != label:
            mismatches.append(f"expected {label}, got {line!r}")
    for i, pair in enumerate(pairs):
        transport.send_line(pair["request"])
        got = transport.recv_line(REQUEST_TIMEOUT)
        if got != pair["response"]:
            mismatches.append(
                f"pair {i}: expected {pair['response']!r}, got {got!r}"
            )
    return mismatches
