"""Optional chat-completion bridge: paraphrase templated instruction docs
into narrative prose and normalize free text into the formal grammar.

Modes: ``disabled`` (identity), ``mock`` (fixture directory keyed by request
hash, hermetic for CI), ``live`` (HTTPS chat-completion endpoint configured
via COWTALK_LLM_URL / COWTALK_LLM_KEY / COWTALK_LLM_MODEL).

Every accepted paraphrase must parse back to the identical command list as
its source template; otherwise the template is retained and the doc flagged.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

from .errors import VesselForgeError
from .instruction import InstructionDoc, parse_instruction

PARAPHRASE_PROMPT = (
    "Rewrite the following vascular segmentation error description and "
    "corrective instruction as a radiologist would phrase them, keeping every "
    "segment name, percentage, factor, and endpoint word unchanged."
)
NORMALIZE_PROMPT = (
    "Rewrite the following free-text request as one or more clauses of the "
    "formal instruction grammar (thicken/thin/restore/extend/bridge/"
    "consolidate/remove + segment + optional span, end, and magnitude)."
)


class BridgeError(VesselForgeError):
    pass


class UnnormalizableError(BridgeError):
    pass


@dataclass
class BridgeConfig:
    mode: str = "disabled"  # live | mock | disabled
    endpoint_url: str | None = None
    api_key: str | None = None
    model_name: str = "gpt-4o-mini"
    timeout_seconds: float = 30.0
    fixture_dir: str | None = None
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, mode: str = "live") -> "BridgeConfig":
        return cls(mode=mode,
                   endpoint_url=os.environ.get("COWTALK_LLM_URL"),
                   api_key=os.environ.get("COWTALK_LLM_KEY"),
                   model_name=os.environ.get("COWTALK_LLM_MODEL", "gpt-4o-mini"),
                   fixture_dir=os.environ.get("COWTALK_FIXTURE_DIR"))

    def validate(self):
        if self.mode == "live" and not (self.endpoint_url and self.api_key):
            raise BridgeError("live mode requires endpoint_url and api_key")
        if self.mode == "mock" and not self.fixture_dir:
            raise BridgeError("mock mode requires a fixture directory")
        if self.mode not in ("live", "mock", "disabled"):
            raise BridgeError(f"unknown mode {self.mode!r}")


def request_key(system: str, user: str) -> str:
    h = hashlib.sha256()
    h.update(system.encode())
    h.update(b"\x00")
    h.update(user.encode())
    return h.hexdigest()


def write_fixture(fixture_dir, system: str, user: str, response: str) -> Path:
    """Record a canned response for mock mode."""
    p = Path(fixture_dir)
    p.mkdir(parents=True, exist_ok=True)
    f = p / (request_key(system, user) + ".json")
    f.write_text(json.dumps({"system": system, "user": user,
                             "response": response}, indent=2))
    return f


def _complete(cfg: BridgeConfig, system: str, user: str) -> str:
    if cfg.mode == "mock":
        f = Path(cfg.fixture_dir) / (request_key(system, user) + ".json")
        if not f.exists():
            raise BridgeError(f"no mock fixture for request {f.name}")
        return json.loads(f.read_text())["response"]
    if cfg.mode == "live":
        import httpx

        body = {
            "model": cfg.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        try:
            resp = httpx.post(cfg.endpoint_url, json=body,
                              headers={"Authorization": f"Bearer {cfg.api_key}"},
                              timeout=cfg.timeout_seconds)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            raise BridgeError(f"chat service failure: {e}") from e
    raise BridgeError("bridge disabled")


def paraphrase(doc: InstructionDoc, cfg: BridgeConfig) -> InstructionDoc:
    """Rewrite narrative + instructions; keep the template on any failure or
    semantic drift (parse-back mismatch), flagging via ``view`` suffix."""
    cfg.validate()
    if cfg.mode == "disabled":
        return doc
    user = json.dumps({"narrative": doc.narrative, "concise": doc.concise,
                       "detailed": doc.detailed})
    try:
        raw = _complete(cfg, PARAPHRASE_PROMPT, user)
        data = json.loads(raw)
        new_detailed = data["detailed"]
    except (BridgeError, KeyError, TypeError, json.JSONDecodeError):
        return dc_replace(doc, view=doc.view + "|paraphrase_failed")
    label_map = _label_map_for(doc)
    want = parse_instruction(doc.detailed, label_map)
    got = parse_instruction(new_detailed, label_map)
    if got.errors or got.commands != want.commands:
        return dc_replace(doc, view=doc.view + "|paraphrase_rejected")
    return dc_replace(doc,
                      narrative=data.get("narrative", doc.narrative),
                      concise=data.get("concise", doc.concise),
                      detailed=new_detailed)


def _label_map_for(doc: InstructionDoc):
    from .labels import DEFAULT_LABEL_MAP

    return DEFAULT_LABEL_MAP


def normalize(free_text: str, cfg: BridgeConfig,
              label_map: dict[int, str] | None = None) -> str:
    """Turn free text into grammar-conformant text, or raise Unnormalizable."""
    cfg.validate()
    if cfg.mode == "disabled":
        raise BridgeError("bridge disabled")
    # short-circuit: already conformant text passes through unchanged
    if not parse_instruction(free_text, label_map).errors:
        return free_text
    try:
        candidate = _complete(cfg, NORMALIZE_PROMPT, free_text)
    except BridgeError as e:
        raise UnnormalizableError(str(e)) from e
    if parse_instruction(candidate, label_map).errors:
        raise UnnormalizableError(
            f"service output does not parse: {candidate!r}")
    return candidate
