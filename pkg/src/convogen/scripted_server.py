"""Deterministic stand-in for a chat-completion endpoint.

Requests are answered by digest fixtures first, then by ordered fallback
rules (static text, canned fault statuses, or small built-in response
programs), so whole pipeline runs reproduce offline. Identical ordered
request streams always get identical response streams.
"""

from __future__ import annotations

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional

from .gateway import request_digest

_NUMBERED = re.compile(r"^\s*(\d+)\.\s+(.*\S)\s*$", re.MULTILINE)
_QA_PAIR = re.compile(r"^\s*(\d+)\.\s*Q:\s*(.*?)\s*A:\s*(.*?)\s*$", re.MULTILINE)
_QA_SINGLE = re.compile(r"^Q:\s*(.*?)\s*$\s*^A:\s*(.*?)\s*$", re.MULTILINE)
_TREE_LINE = re.compile(
    r"^\s*(?:(\d+|several|many)\s+)?([a-z][a-z ]*?)(?:\s*\[[^\]]*\])?"
    r"\s+center=\((-?\d+),(-?\d+)\)",
    re.MULTILINE,
)


def _context_sentences(prompt: str) -> list[str]:
    return [text for _, text in _NUMBERED.findall(prompt)]


def _prog_echo_last_user(request: dict, prompt: str) -> str:
    for message in reversed(request.get("messages", [])):
        if message.get("role") == "user":
            return message.get("content", "")
    return ""


def _prog_qa_statements(request: dict, prompt: str) -> str:
    lines = [
        f"{idx}. The answer to '{q}' is {a}."
        for idx, q, a in _QA_PAIR.findall(prompt)
    ]
    return "\n".join(lines) if lines else "1. There is no information."


def _prog_qa_single(request: dict, prompt: str) -> str:
    match = _QA_SINGLE.search(prompt)
    if not match:
        return "There is no information."
    question, answer = match.groups()
    return f"The answer to '{question}' is {answer}."


def _prog_tree_sentences(request: dict, prompt: str) -> str:
    sentences = []
    for count, label, cx, cy in _TREE_LINE.findall(prompt):
        label = label.strip()
        if count:
            sentences.append(f"There are {count} {label} near ({cx}, {cy}).")
        else:
            sentences.append(f"There is a {label} at ({cx}, {cy}).")
    return " ".join(sentences) if sentences else "The scene shows several objects."


def _prog_single_turn(request: dict, prompt: str) -> str:
    sentences = _context_sentences(prompt)
    if not sentences:
        return "Human: What is shown here?\nAssistant: An image."
    covered = " ".join(sentences[:2])
    return f"Human: What stands out in this image?\nAssistant: {covered}"


def _prog_full_conversation(request: dict, prompt: str) -> str:
    """Same content the staged program would emit over its iterations, in
    one response: consecutive two-sentence windows, up to six pairs."""
    sentences = _context_sentences(prompt)
    if not sentences:
        return "Human: What is shown here?\nAssistant: An image."
    blocks = []
    for start in range(0, min(len(sentences), 12), 2):
        covered = " ".join(sentences[start:start + 2])
        blocks.append(f"Human: What stands out in this image?\nAssistant: {covered}")
    return "\n".join(blocks)


PROGRAMS: dict[str, Callable[[dict, str], str]] = {
    "echo-last-user": _prog_echo_last_user,
    "qa-statements": _prog_qa_statements,
    "qa-single": _prog_qa_single,
    "tree-sentences": _prog_tree_sentences,
    "single-turn": _prog_single_turn,
    "full-conversation": _prog_full_conversation,
}


class _Rule:
    """One fixture rule; sequence consumption and match budgets are stateful."""

    def __init__(self, spec: dict):
        if "fallback" in spec:
            spec = {"pattern": ".", "program": spec["fallback"]}
        self.digest: Optional[str] = spec.get("digest")
        self.pattern = re.compile(spec["pattern"]) if "pattern" in spec else None
        if self.digest is None and self.pattern is None:
            raise ValueError(f"rule needs a digest or a pattern: {spec}")
        self.program = spec.get("program")
        if self.program is not None and self.program not in PROGRAMS:
            raise ValueError(f"unknown program {self.program!r}")
        if "responses" in spec:
            self.entries = list(spec["responses"])
        elif "response" in spec:
            self.entries = [spec["response"]]
        elif "status" in spec:
            self.entries = [{"status": spec["status"], "body": spec.get("body", "")}]
        else:
            self.entries = None  # program-only rule
        self.times = spec.get("times")  # None = unlimited matches
        self.cursor = 0

    def matches(self, digest: str, prompt: str) -> bool:
        if self.times is not None and self.times <= 0:
            return False
        if self.digest is not None:
            return digest == self.digest
        return bool(self.pattern.search(prompt))

    def resolve(self, request: dict, prompt: str) -> tuple[int, str]:
        """(status, content). Sequences advance and repeat their last entry."""
        if self.times is not None:
            self.times -= 1
        if self.entries is None:
            return 200, PROGRAMS[self.program](request, prompt)
        entry = self.entries[min(self.cursor, len(self.entries) - 1)]
        self.cursor += 1
        if isinstance(entry, dict):
            if "status" in entry:
                return int(entry["status"]), entry.get("body", "")
            return 200, entry.get("content", "")
        return 200, str(entry)


def load_fixture_file(path: str | Path) -> list[dict]:
    """JSON Lines: {"digest","response"} plus the rule extensions above."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rules.append(json.loads(line))
    return rules


def default_pipeline_rules() -> list[dict]:
    """Pattern rules matched to the shipped prompt wordings; enough to run
    the whole pipeline offline with deterministic content."""
    return [
        {"pattern": r"Rewrite each question and answer pair", "program": "qa-statements"},
        {"pattern": r"Rewrite the question and answer pair", "program": "qa-single"},
        {"pattern": r"Convert the following scene outline", "program": "tree-sentences"},
        {"pattern": r"Answer yes or no", "response": "Yes."},
        {"pattern": r"numbers of the covered facts", "response": "1, 2"},
        {"pattern": r"KEEP or DROP", "response": "KEEP"},
        {"pattern": r"exactly one question", "program": "single-turn"},
        {"pattern": r"Write a conversation between", "program": "full-conversation"},
        {"pattern": r"detailed description of the image", "program": "full-conversation"},
        {"pattern": r"reasoning question", "program": "single-turn"},
        {"pattern": r"spatial arrangement", "program": "single-turn"},
    ]


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # silence stderr chatter
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/stats":
            self._send(200, self.server.owner.stats())
        else:
            self._send(200, {"ok": True})

    def do_POST(self):
        owner = self.server.owner
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        if self.path != "/v1/chat/completions":
            self._send(404, {"error": "unknown path"})
            return
        try:
            request = json.loads(raw)
            messages = request["messages"]
        except (ValueError, KeyError):
            self._send(400, {"error": "bad request body"})
            return
        status, payload = owner.respond(request, messages)
        self._send(status, payload)


class ScriptedLlmServer:
    """Serves the chat-completion wire protocol from fixture rules.

    Latency is simulated as ``base_ms + per_char_ms * len(content)``, which
    models a throughput-bound backend where long completions cost more.
    """

    def __init__(
        self,
        fixtures: Optional[list[dict]] = None,
        latency_base_ms: float = 0.0,
        latency_per_char_ms: float = 0.0,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self._rules = [_Rule(spec) for spec in (fixtures or [])]
        self.latency_base_ms = latency_base_ms
        self.latency_per_char_ms = latency_per_char_ms
        self._lock = threading.Lock()
        self._in_flight = 0
        self._stats = {
            "requests": 0,
            "high_water_in_flight": 0,
            "by_status": {},
            "unmatched": 0,
        }
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.owner = self
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ScriptedLlmServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ScriptedLlmServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def stats(self) -> dict:
        with self._lock:
            return {
                "requests": self._stats["requests"],
                "high_water_in_flight": self._stats["high_water_in_flight"],
                "by_status": dict(self._stats["by_status"]),
                "unmatched": self._stats["unmatched"],
            }

    def respond(self, request: dict, messages: list[dict]) -> tuple[int, dict]:
        digest = request_digest(messages)
        prompt = "\x1e".join(m.get("content", "") for m in messages)
        with self._lock:
            self._in_flight += 1
            self._stats["requests"] += 1
            self._stats["high_water_in_flight"] = max(
                self._stats["high_water_in_flight"], self._in_flight
            )
            status, content = self._resolve_locked(request, digest, prompt)
        try:
            delay_ms = self.latency_base_ms + self.latency_per_char_ms * len(content)
            if delay_ms > 0:
                time.sleep(delay_ms / 1000.0)
        finally:
            with self._lock:
                self._in_flight -= 1
                key = str(status)
                self._stats["by_status"][key] = self._stats["by_status"].get(key, 0) + 1
        if status != 200:
            return status, {"error": {"message": f"scripted status {status}", "detail": content}}
        return 200, {
            "id": f"scripted-{self._stats['requests']}",
            "object": "chat.completion",
            "model": request.get("model", "scripted"),
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": max(len(prompt) // 4, 1),
                "completion_tokens": max(len(content) // 4, 1),
                "total_tokens": max(len(prompt) // 4, 1) + max(len(content) // 4, 1),
            },
        }

    def _resolve_locked(self, request: dict, digest: str, prompt: str) -> tuple[int, str]:
        digest_rules = [r for r in self._rules if r.digest is not None]
        pattern_rules = [r for r in self._rules if r.digest is None]
        for rule in digest_rules:
            if rule.matches(digest, prompt):
                return rule.resolve(request, prompt)
        for rule in pattern_rules:
            if rule.matches(digest, prompt):
                return rule.resolve(request, prompt)
        self._stats["unmatched"] += 1
        return 404, f"no fixture for digest {digest}"
