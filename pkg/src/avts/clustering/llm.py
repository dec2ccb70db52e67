"""Structured LLM calls: typed signatures, a chat-completions HTTP backend and
a deterministic rule-based mock backend."""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import httpx

from .stopwords import STOPWORDS

log = logging.getLogger(__name__)


class LLMBackendError(RuntimeError):
    """The backend failed or kept replying with something unusable."""


@dataclass(frozen=True)
class Field:
    name: str
    type: str  # "str" | "dict[str, str]" | "bool" | "float" | "list[list[str]]"
    description: str


@dataclass(frozen=True)
class Signature:
    name: str
    instructions: str
    inputs: tuple[Field, ...]
    outputs: tuple[Field, ...]


TOPIC_DETECTION = Signature(
    name="topic_detection",
    instructions="Decide whether the speaker talks about an identifiable topic or subject.",
    inputs=(Field("transcript", "str", "a single speaker transcript"),),
    outputs=(
        Field("contains_topic", "bool", "Whether it is possible to detect topic or subject from the transcript"),
    ),
)

PAIRWISE_SIMILARITY = Signature(
    name="pairwise_topic_similarity",
    instructions="Estimate how similar the topics discussed by the two speakers are.",
    inputs=(
        Field(
            "transcripts",
            "dict[str, str]",
            "A dictionary mapping speaker IDs to their transcripts. Each key is a speaker ID.",
        ),
    ),
    outputs=(
        Field(
            "topic_similarity",
            "float",
            "Score between 0-1 indicating topic similarity between the two speakers. "
            "0 = completely different topics, 1 = same topic.",
        ),
    ),
)

JOINT_CLUSTERING = Signature(
    name="joint_conversation_clustering",
    instructions="Group the speakers into the separate conversations they take part in, based on the topics of their transcripts.",
    inputs=(
        Field(
            "transcripts",
            "dict[str, str]",
            "A dictionary mapping speaker IDs to their transcripts. Each key is a speaker ID.",
        ),
    ),
    outputs=(
        Field(
            "groups",
            "list[list[str]]",
            "List of conversation groups, each a list of speaker IDs. Every speaker ID appears in exactly one group.",
        ),
    ),
)


def build_prompt(sig: Signature, inputs: dict[str, Any]) -> str:
    """Render a signature the way declarative prompting frameworks do:
    field list, structured sections and the task description."""
    lines = ["Your input fields are:"]
    lines += [f"{i}. `{f.name}` ({f.type}): {f.description}" for i, f in enumerate(sig.inputs, 1)]
    lines.append("Your output fields are:")
    lines += [f"{i}. `{f.name}` ({f.type}): {f.description}" for i, f in enumerate(sig.outputs, 1)]
    lines.append("")
    lines.append("All interactions will be structured in the following way, with the appropriate values filled in.")
    lines.append("")
    for f in sig.inputs:
        val = inputs[f.name]
        lines += [f"[[ ## {f.name} ## ]]", val if isinstance(val, str) else json.dumps(val, ensure_ascii=False), ""]
    for f in sig.outputs:
        lines += [f"[[ ## {f.name} ## ]]", f"{{{f.name}}}  # must be a single JSON value of type {f.type}", ""]
    lines += ["[[ ## completed ## ]]", "", f"In adhering to this structure, your objective is: {sig.instructions}"]
    lines.append("Respond with the output fields only, each under its [[ ## name ## ]] header, then [[ ## completed ## ]].")
    return "\n".join(lines)


_FENCE = re.compile(r"```(?:json)?\s*(.*?)\s*```", re.DOTALL)


def _coerce(f: Field, raw: Any) -> Any:
    if isinstance(raw, str):
        text = raw.strip()
        m = _FENCE.search(text)
        if m:
            text = m.group(1).strip()
        if f.type == "bool":
            low = text.lower().strip(" .\"'")
            if low in ("true", "yes"):
                return True
            if low in ("false", "no"):
                return False
            raise ValueError(f"{f.name}: not a boolean: {raw!r}")
        if f.type == "float":
            try:
                return float(text.strip(" \"'"))
            except ValueError as exc:
                raise ValueError(f"{f.name}: not a number: {raw!r}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{f.name}: not valid JSON: {raw!r}") from exc
    if f.type == "bool" and isinstance(raw, bool):
        return raw
    if f.type == "float" and isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    if f.type == "list[list[str]]" and isinstance(raw, list) and all(
        isinstance(g, list) and all(isinstance(s, str) for s in g) for g in raw
    ):
        return raw
    raise ValueError(f"{f.name}: unexpected value {raw!r}")


def parse_reply(sig: Signature, text: str) -> dict[str, Any]:
    """Extract output fields from ``[[ ## name ## ]]`` sections or a JSON object."""
    sections = dict(re.findall(r"\[\[ ## (\w+) ## \]\]\s*(.*?)\s*(?=\[\[ ## |\Z)", text, re.DOTALL))
    if not all(f.name in sections for f in sig.outputs):
        body = _FENCE.search(text)
        candidate = body.group(1) if body else text[text.find("{") : text.rfind("}") + 1]
        try:
            obj = json.loads(candidate)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ValueError(f"reply has no parsable output fields: {text[:200]!r}") from exc
        if not isinstance(obj, dict):
            raise ValueError("reply JSON is not an object")
        sections = obj
    out = {}
    for f in sig.outputs:
        if f.name not in sections:
            raise ValueError(f"reply lacks field {f.name!r}")
        out[f.name] = _coerce(f, sections[f.name])
    return out


class LLMBackend:
    """Base class: ``complete`` returns validated output fields for a signature."""

    kind = "base"
    temperature = 0.0
    max_attempts = 2  # one retry

    def _raw_complete(self, sig: Signature, inputs: dict[str, Any]) -> dict[str, Any]:
        raise NotImplementedError

    def complete(
        self,
        sig: Signature,
        inputs: dict[str, Any],
        validate: Callable[[dict[str, Any]], None] | None = None,
    ) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                out = self._raw_complete(sig, inputs)
                if validate is not None:
                    validate(out)
                return out
            except ValueError as exc:
                last = exc
                log.warning("%s: unusable reply (attempt %d): %s", sig.name, attempt + 1, exc)
        raise LLMBackendError(f"{sig.name}: {last}") from last


@dataclass
class HTTPBackend(LLMBackend):
    """Chat-completions-compatible endpoint; one user message per call."""

    base_url: str
    model: str
    api_key: str | None = None
    timeout_s: float = 120.0
    client: httpx.Client | None = field(default=None, repr=False)
    kind = "http"

    @classmethod
    def from_env(cls) -> HTTPBackend:
        base = os.environ.get("LLM_BASE_URL")
        model = os.environ.get("LLM_MODEL")
        if not base or not model:
            raise LLMBackendError("LLM_BASE_URL and LLM_MODEL must be set for the http backend")
        return cls(base_url=base, model=model, api_key=os.environ.get("LLM_API_KEY"))

    def _post(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        url = self.base_url.rstrip("/") + "/chat/completions"
        try:
            if self.client is not None:
                resp = self.client.post(url, json=payload, headers=headers, timeout=self.timeout_s)
            else:
                resp = httpx.post(url, json=payload, headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise LLMBackendError(f"LLM request failed: {exc}") from exc

    def _raw_complete(self, sig: Signature, inputs: dict[str, Any]) -> dict[str, Any]:
        return parse_reply(sig, self._post(build_prompt(sig, inputs)))


def content_words(text: str) -> set[str]:
    return {w for w in re.findall(r"[a-z0-9'-]+", text.lower()) if w not in STOPWORDS}


def jaccard(a: set[str], b: set[str]) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


@dataclass
class MockBackend(LLMBackend):
    """Deterministic rules standing in for the LLM.

    * topic detection: at least ``min_content_types`` distinct content words;
    * pairwise similarity: Jaccard index of the content-word sets;
    * joint clustering: each speaker goes to the topic pool sharing most of
      its words (speakers matching no pool stay alone); without pools,
      speakers sharing any content word are grouped.
    """

    min_content_types: int = 5
    topic_pools: dict[str, list[str]] | None = None
    kind = "mock"

    def _raw_complete(self, sig: Signature, inputs: dict[str, Any]) -> dict[str, Any]:
        if sig.name == TOPIC_DETECTION.name:
            return {"contains_topic": len(content_words(inputs["transcript"])) >= self.min_content_types}
        if sig.name == PAIRWISE_SIMILARITY.name:
            a, b = (content_words(t) for t in inputs["transcripts"].values())
            return {"topic_similarity": jaccard(a, b)}
        if sig.name == JOINT_CLUSTERING.name:
            return {"groups": self._joint(inputs["transcripts"])}
        raise ValueError(f"mock backend does not know signature {sig.name}")

    def _joint(self, transcripts: dict[str, str]) -> list[list[str]]:
        words = {sid: content_words(t) for sid, t in transcripts.items()}
        label: dict[str, Any] = {}
        if self.topic_pools:
            pools = list(self.topic_pools.items())
            for sid, ws in words.items():
                hits = [len(ws & set(p)) for _, p in pools]
                best = max(range(len(pools)), key=lambda k: (hits[k], -k))
                label[sid] = pools[best][0] if hits[best] > 0 else ("_alone", sid)
        else:
            ids = list(words)
            parent = {s: s for s in ids}

            def find(s: str) -> str:
                while parent[s] != s:
                    s = parent[s]
                return s

            for i, a in enumerate(ids):
                for b in ids[i + 1 :]:
                    if words[a] & words[b]:
                        parent[find(b)] = find(a)
            label = {s: find(s) for s in ids}
        groups: dict[Any, list[str]] = {}
        for sid in transcripts:
            groups.setdefault(label[sid], []).append(sid)
        return list(groups.values())


def make_backend(kind: str, topic_pools: dict[str, list[str]] | None = None) -> LLMBackend:
    if kind == "mock":
        return MockBackend(topic_pools=topic_pools)
    if kind == "http":
        return HTTPBackend.from_env()
    raise ValueError(f"unknown backend {kind!r}")
