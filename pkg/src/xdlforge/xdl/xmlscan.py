"""A forgiving XML reader that keeps going after well-formedness errors.

Expat and ElementTree stop at the first error, which is useless when the
goal is to hand an LLM every problem in a document at once.  This reader
covers the subset of XML that XDL uses (elements, attributes, comments,
processing instructions, CDATA, character references) and recovers at
element granularity: a broken tag is reported, marked ``malformed`` and
the scan resumes at the next ``<``.
"""
from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field
from typing import Optional

_NAME_RE = re.compile(r"[A-Za-z_][\w.\-:]*")
_ATTR_RE = re.compile(r"""([A-Za-z_][\w.\-:]*)\s*=\s*(?:"([^"]*)"|'([^']*)')""")
_ENTITY_RE = re.compile(r"&(#x[0-9A-Fa-f]+|#\d+|\w+);|&")
_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}


@dataclass
class Attr:
    name: str
    value: str
    offset: int


@dataclass
class Element:
    tag: str
    offset: int
    attrs: list[Attr] = field(default_factory=list)
    children: list["Element"] = field(default_factory=list)
    malformed: bool = False


@dataclass
class ScanIssue:
    offset: Optional[int]  # None means end of input
    message: str


class LineIndex:
    """Map character offsets to 1-based (line, column)."""

    def __init__(self, text: str):
        self._starts = [0] + [m.end() for m in re.finditer(r"\n", text)]

    def __call__(self, offset: int) -> tuple[int, int]:
        i = bisect.bisect_right(self._starts, offset) - 1
        return i + 1, offset - self._starts[i] + 1


def _decode(value: str, base: int, issues: list[ScanIssue]) -> tuple[str, bool]:
    ok = True

    def sub(m: re.Match) -> str:
        nonlocal ok
        ref = m.group(1)
        if ref is None:
            ok = False
            issues.append(ScanIssue(base + m.start(), "bare '&' in attribute value"))
            return "&"
        if ref.startswith("#x"):
            return chr(int(ref[2:], 16))
        if ref.startswith("#"):
            return chr(int(ref[1:]))
        if ref in _ENTITIES:
            return _ENTITIES[ref]
        ok = False
        issues.append(ScanIssue(base + m.start(), f"unknown entity '&{ref};'"))
        return m.group(0)

    try:
        return _ENTITY_RE.sub(sub, value), ok
    except (ValueError, OverflowError):
        issues.append(ScanIssue(base, "invalid character reference"))
        return value, False


def _parse_tag_body(text: str, start: int, end: int, issues: list[ScanIssue]) -> Element:
    """Parse ``<name attr="v" ...`` between ``start`` (the '<') and ``end``
    (the '>' or the point where the tag was cut off)."""
    pos = start + 1
    m = _NAME_RE.match(text, pos, end)
    if m is None:
        issues.append(ScanIssue(start, "expected an element name after '<'"))
        return Element(tag="", offset=start, malformed=True)
    el = Element(tag=m.group(0), offset=start)
    pos = m.end()
    seen: set[str] = set()
    while True:
        while pos < end and text[pos].isspace():
            pos += 1
        if pos >= end or text[pos] == "/":
            break
        if pos == m.end():
            issues.append(ScanIssue(pos, f"missing whitespace before attribute in <{el.tag}>"))
            el.malformed = True
        am = _ATTR_RE.match(text, pos, end)
        if am is None:
            issues.append(ScanIssue(pos, f"malformed attribute in <{el.tag}>"))
            el.malformed = True
            break
        name = am.group(1)
        raw = am.group(2) if am.group(2) is not None else am.group(3)
        value_start = am.start(2) if am.group(2) is not None else am.start(3)
        value, ok = _decode(raw, value_start, issues)
        if not ok:
            el.malformed = True
        if name in seen:
            issues.append(ScanIssue(pos, f"duplicate attribute '{name}' in <{el.tag}>"))
            el.malformed = True
        else:
            seen.add(name)
            el.attrs.append(Attr(name, value, pos))
        pos = am.end()
        m = am
    if pos < end and text[pos] == "/" and text[pos + 1 : end].strip():
        issues.append(ScanIssue(pos, f"unexpected content after '/' in <{el.tag}>"))
        el.malformed = True
    return el


def _find_tag_end(text: str, start: int) -> tuple[int, bool]:
    """Return (index of closing '>' or of the offending position, closed?).
    ``<`` always terminates a tag since it cannot appear in attribute values."""
    quote = None
    i = start + 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "<":
            return i, False
        if quote:
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c == ">":
            return i, True
        i += 1
    return n, False


def scan(text: str) -> tuple[Optional[Element], list[ScanIssue]]:
    """Build an element tree from ``text``.  Returns the first root element
    (or None when no element was found) and every issue encountered."""
    issues: list[ScanIssue] = []
    roots: list[Element] = []
    stack: list[Element] = []
    n = len(text)
    pos = 0

    def stray_text(a: int, b: int) -> None:
        if stack:
            return
        chunk = text[a:b]
        stripped = chunk.lstrip()
        if stripped:
            off = a + (len(chunk) - len(stripped))
            issues.append(ScanIssue(off, "text outside the root element"))

    def attach(el: Element) -> None:
        if stack:
            stack[-1].children.append(el)
        else:
            if roots:
                issues.append(ScanIssue(el.offset, f"extra root element <{el.tag}>"))
            roots.append(el)

    while pos < n:
        lt = text.find("<", pos)
        if lt == -1:
            stray_text(pos, n)
            break
        stray_text(pos, lt)
        if text.startswith("<!--", lt):
            end = text.find("-->", lt + 4)
            if end == -1:
                issues.append(ScanIssue(lt, "unterminated comment"))
                break
            pos = end + 3
            continue
        if text.startswith("<![CDATA[", lt):
            end = text.find("]]>", lt + 9)
            if end == -1:
                issues.append(ScanIssue(lt, "unterminated CDATA section"))
                break
            pos = end + 3
            continue
        if text.startswith("<?", lt):
            end = text.find("?>", lt + 2)
            if end == -1:
                issues.append(ScanIssue(lt, "unterminated processing instruction"))
                break
            pos = end + 2
            continue
        if text.startswith("<!", lt):
            end = text.find(">", lt + 2)
            if end == -1:
                issues.append(ScanIssue(lt, "unterminated declaration"))
                break
            pos = end + 1
            continue

        end, closed = _find_tag_end(text, lt)
        if not closed:
            issues.append(ScanIssue(lt, "tag is not closed with '>'"))

        if text.startswith("</", lt):
            m = _NAME_RE.match(text, lt + 2, end)
            pos = end + 1 if closed else end
            if m is None or text[m.end() : end].strip():
                issues.append(ScanIssue(lt, "malformed end tag"))
                continue
            name = m.group(0)
            if stack and stack[-1].tag == name:
                stack.pop()
            elif any(el.tag == name for el in stack):
                while stack[-1].tag != name:
                    el = stack.pop()
                    issues.append(ScanIssue(el.offset, f"element <{el.tag}> is never closed"))
                stack.pop()
            else:
                issues.append(ScanIssue(lt, f"end tag </{name}> without matching start tag"))
            continue

        el = _parse_tag_body(text, lt, end, issues)
        if not closed:
            el.malformed = True
        self_closing = closed and text[end - 1] == "/"
        pos = end + 1 if closed else end
        if not el.tag:
            continue
        attach(el)
        if not self_closing and closed:
            stack.append(el)

    for el in reversed(stack):
        line_hint = text.count("\n", 0, el.offset) + 1
        issues.append(ScanIssue(None, f"element <{el.tag}> opened on line {line_hint} is never closed"))

    return (roots[0] if roots else None), issues
