"""Newline-delimited trace persistence with a hash chain for integrity."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Optional


class TraceIntegrityError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()[:16]


def _chain_hash(prev: str, record: dict) -> str:
    payload = prev + canonical_json(record)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_trace(path: str, records: Iterable[dict]) -> None:
    prev = ""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            body = {k: v for k, v in rec.items() if k != "h"}
            h = _chain_hash(prev, body)
            body["h"] = h
            f.write(canonical_json(body) + "\n")
            prev = h


def read_trace(path: str, verify: bool = True) -> list[dict]:
    records = []
    prev = ""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceIntegrityError(f"line {lineno}: invalid JSON: {e}")
            if verify:
                h = rec.get("h")
                body = {k: v for k, v in rec.items() if k != "h"}
                if h != _chain_hash(prev, body):
                    raise TraceIntegrityError(
                        f"line {lineno}: hash chain broken")
                prev = h
            records.append(rec)
    if not records:
        raise TraceIntegrityError("empty trace")
    if records[0].get("type") != "header":
        raise TraceIntegrityError("line 1: missing header record")
    return records


def trace_bytes(records: Iterable[dict]) -> bytes:
    """The exact byte stream write_trace would produce."""
    prev = ""
    out = []
    for rec in records:
        body = {k: v for k, v in rec.items() if k != "h"}
        h = _chain_hash(prev, body)
        body["h"] = h
        out.append(canonical_json(body))
        prev = h
    return ("\n".join(out) + "\n").encode()
