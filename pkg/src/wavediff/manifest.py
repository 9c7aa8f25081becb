"""Run manifests: one JSON record per CLI run, written even on failure.

Keys are emitted in sorted order so identical runs produce identical bytes;
reruns with the same arguments and seed must therefore match checksums.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(args: dict) -> str:
    payload = json.dumps(args, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()


class ManifestWriter:
    """Collects run metadata and flushes a sorted-key JSON manifest."""

    def __init__(self, command: str, args: dict, path: str | Path, tool_version: str):
        self.path = Path(path)
        self._t0 = time.perf_counter()
        self._phase_start = self._t0
        self.doc: dict = {
            "command": command,
            "args": {k: v for k, v in sorted(args.items())},
            "config_hash": config_hash(args),
            "seed": args.get("seed"),
            "tool_version": tool_version,
            "inputs": {},
            "outputs": {},
            "params": {},
            "timings_s": {},
            "status": "running",
            "error": None,
        }

    def add_input(self, name: str, path: str | Path) -> None:
        self.doc["inputs"][name] = {"path": str(path), "sha256": file_sha256(path)}

    def add_output(self, name: str, path: str | Path) -> None:
        self.doc["outputs"][name] = {"path": str(path), "sha256": file_sha256(path)}

    def set_params(self, **params) -> None:
        self.doc["params"].update(params)

    def phase(self, name: str) -> None:
        now = time.perf_counter()
        self.doc["timings_s"][name] = round(now - self._phase_start, 6)
        self._phase_start = now

    def finish(self, status: str = "ok", error: dict | None = None) -> None:
        self.doc["timings_s"]["total"] = round(time.perf_counter() - self._t0, 6)
        self.doc["status"] = status
        self.doc["error"] = error
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def error_record(exc: Exception) -> dict:
    code = getattr(exc, "code", type(exc).__name__)
    return {"error": code, "message": str(exc)}


def emit_error(exc: Exception) -> None:
    print(json.dumps(error_record(exc), sort_keys=True), file=sys.stderr)
