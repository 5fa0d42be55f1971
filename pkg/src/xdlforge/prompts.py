"""Versioned prompt templates shipped in ``data/prompts``.

Each file holds a ``=== system ===`` and a ``=== user ===`` section using
``$name`` placeholders.  The first line of every system section carries an
``[agent:<name> v<version>]`` tag so transcripts can be read by eye.
"""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from string import Template

_SECTION_RE = re.compile(r"^=== (system|user) ===\n", re.MULTILINE)
_TAG_RE = re.compile(r"\[agent:([\w-]+) v(\d+)\]")


@lru_cache(maxsize=None)
def load_template(name: str) -> tuple[Template, Template]:
    text = resources.files("xdlforge").joinpath(f"data/prompts/{name}.txt").read_text(encoding="utf-8")
    parts = _SECTION_RE.split(text)
    sections = dict(zip(parts[1::2], parts[2::2]))
    if set(sections) != {"system", "user"}:
        raise ValueError(f"prompt {name!r} needs a system and a user section")
    return Template(sections["system"].rstrip("\n")), Template(sections["user"].rstrip("\n"))


def render(name: str, **values) -> tuple[str, str]:
    system, user = load_template(name)
    values = {k: str(v) for k, v in values.items()}
    return system.substitute(values), user.substitute(values)


def agent_tag(system_text: str) -> str:
    """Agent name from a rendered system prompt, e.g. ``"critique"``."""
    m = _TAG_RE.search(system_text)
    return m.group(1) if m else ""


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_json(reply: str):
    """Decode the JSON object in an agent reply, tolerating code fences and
    prose around it.  Raises ``ValueError`` when there is none."""
    import json

    m = _FENCE_RE.search(reply)
    body = m.group(1) if m else reply
    start, end = body.find("{"), body.rfind("}")
    if start == -1 or end < start:
        raise ValueError("reply contains no JSON object")
    try:
        return json.loads(body[start : end + 1])
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not valid JSON: {exc}") from None
