"""Templated error narratives / corrective instructions and the formal
instruction grammar.

Grammar (see GRAMMAR.md):

    instruction := clause { (";" | ".") clause } "."?
    clause      := ["in the" SEGMENT ","] ACTION ["the"] TARGET
                   [locator] [end_locator] [magnitude] [hints]
    TARGET      := SEGMENT | "region" | "tube" | "segment"
                 | "entire segment" | "gap" ["in the" SEGMENT]
    ACTION      := thicken | thin | restore | extend | bridge | consolidate
                 | remove   (plus synonyms)
    locator     := ("from" PCT "to" PCT | "between" PCT "and" PCT)
                   ["measured from the" ("proximal"|"distal") "end"]
    end_locator := ("at"|"from") "the" ("proximal"|"distal") "end"
    magnitude   := "by a factor of" REAL | "by" REAL ("%"|"percent"|"voxels"|"mm")
                 | "to radius" REAL "mm"
    hints       := "connecting" SEGMENT "and" SEGMENT
                 | "at point" "(" REAL "," REAL "," REAL ")"

Parsing is total: every clause yields a command or a structured error with
clause index and character offsets; no input crashes the parser.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, asdict

from .corruption import (
    DISCONNECT,
    EditRecord,
    FRAGMENT,
    GLOBAL_THICKEN,
    GLOBAL_THIN,
    LOCAL_THICKEN,
    LOCAL_THIN,
    MISSING_SEGMENT,
    SHORTEN,
)
from .errors import UnknownLabelError
from .labels import DEFAULT_LABEL_MAP, resolve_segment_name

THICKEN = "Thicken"
THIN = "Thin"
RESTORE = "RestoreSegment"
EXTEND = "Extend"
BRIDGE = "Bridge"
CONSOLIDATE = "Consolidate"
REMOVE = "Remove"

ACTION_SYNONYMS = {
    "thicken": THICKEN, "widen": THICKEN, "inflate": THICKEN, "dilate": THICKEN,
    "thin": THIN, "narrow": THIN, "slim": THIN, "erode": THIN,
    "restore": RESTORE, "recreate": RESTORE, "reinstate": RESTORE,
    "extend": EXTEND, "lengthen": EXTEND, "elongate": EXTEND,
    "bridge": BRIDGE, "reconnect": BRIDGE, "rejoin": BRIDGE,
    "consolidate": CONSOLIDATE, "merge": CONSOLIDATE, "unify": CONSOLIDATE,
    "remove": REMOVE, "delete": REMOVE, "erase": REMOVE,
}


@dataclass(frozen=True)
class Magnitude:
    value: float
    unit: str  # factor | percent | voxels | mm | radius_mm


@dataclass(frozen=True)
class Span:
    p_lo: float
    p_hi: float
    anchor: str = "proximal"


@dataclass(frozen=True)
class EditCommand:
    action: str
    segment_id: int
    span: Span | None = None
    magnitude: Magnitude | None = None
    end: str | None = None            # endpoint to grow, for Extend
    hints: tuple | None = None        # ("connect", id_a, id_b) | ("point", x, y, z)


@dataclass(frozen=True)
class ClauseError:
    clause_index: int
    start: int
    end: int
    message: str


@dataclass
class ParseResult:
    commands: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)  # per clause: EditCommand | ClauseError

    @property
    def ok(self) -> bool:
        return not self.errors


# ---------------------------------------------------------------------------
# record inversion

def _opposite(anchor: str) -> str:
    return "distal" if anchor == "proximal" else "proximal"


def invert_record(r: EditRecord) -> EditCommand:
    """Kind-wise inverse command with identical span/anchor and magnitude."""
    sid = r.segment_id
    if r.kind == GLOBAL_THICKEN:
        return EditCommand(THIN, sid, magnitude=Magnitude(r.magnitude, "factor"))
    if r.kind == GLOBAL_THIN:
        return EditCommand(THICKEN, sid, magnitude=Magnitude(r.magnitude, "factor"))
    if r.kind == MISSING_SEGMENT:
        return EditCommand(RESTORE, sid)
    if r.kind == LOCAL_THICKEN:
        return EditCommand(THIN, sid, span=Span(*r.span, r.anchor),
                           magnitude=Magnitude(r.magnitude, "factor"))
    if r.kind == LOCAL_THIN:
        return EditCommand(THICKEN, sid, span=Span(*r.span, r.anchor),
                           magnitude=Magnitude(r.magnitude, "factor"))
    if r.kind == SHORTEN:
        # material was removed at the far end from the measuring anchor
        return EditCommand(EXTEND, sid, magnitude=Magnitude(r.magnitude, "percent"),
                           end=_opposite(r.anchor))
    if r.kind == DISCONNECT:
        return EditCommand(BRIDGE, sid, span=Span(*r.span, r.anchor))
    if r.kind == FRAGMENT:
        return EditCommand(CONSOLIDATE, sid, span=Span(*r.span, r.anchor))
    raise ValueError(f"unknown kind {r.kind}")


# ---------------------------------------------------------------------------
# rendering

@dataclass
class InstructionDoc:
    narrative: str
    concise: str
    detailed: str
    record: EditRecord
    view: str = "posterior"

    def to_dict(self) -> dict:
        return {
            "narrative": self.narrative,
            "concise": self.concise,
            "detailed": self.detailed,
            "record": self.record.to_dict(),
            "view": self.view,
        }


def _fmt(x: float) -> str:
    return f"{x:g}"


_CONCISE_VERB = {THICKEN: "Thicken", THIN: "Thin", RESTORE: "Restore",
                 EXTEND: "Extend", CONSOLIDATE: "Consolidate", REMOVE: "Remove"}


def render_instruction(r: EditRecord, granularity: str = "detailed",
                       label_map: dict[int, str] | None = None) -> InstructionDoc:
    """Render the error narrative plus its concise and detailed corrections.

    The detailed text always parses back to exactly ``invert_record(r)``;
    the concise text parses to the same action and segment.
    """
    label_map = label_map or DEFAULT_LABEL_MAP
    if r.segment_id not in label_map:
        raise UnknownLabelError([r.segment_id])
    if granularity not in ("concise", "detailed"):
        raise ValueError("granularity must be concise or detailed")
    seg = label_map[r.segment_id]
    cmd = invert_record(r)

    if cmd.action == BRIDGE:
        concise = f"Bridge the gap in the {seg}."
    else:
        concise = f"{_CONCISE_VERB[cmd.action]} the {seg}."

    if cmd.action in (THICKEN, THIN):
        verb = cmd.action.lower()
        f = _fmt(cmd.magnitude.value)
        if cmd.span is None:
            detailed = (f"In the {seg}, {verb} the entire segment "
                        f"by a factor of {f}.")
        else:
            detailed = (f"In the {seg}, {verb} the region from "
                        f"{_fmt(cmd.span.p_lo)}% to {_fmt(cmd.span.p_hi)}% "
                        f"measured from the {cmd.span.anchor} end "
                        f"by a factor of {f}.")
    elif cmd.action == RESTORE:
        detailed = f"Restore the {seg}."
    elif cmd.action == EXTEND:
        detailed = (f"In the {seg}, extend the tube at the {cmd.end} end "
                    f"by {_fmt(cmd.magnitude.value)}%.")
    elif cmd.action == BRIDGE:
        detailed = (f"In the {seg}, bridge the gap from "
                    f"{_fmt(cmd.span.p_lo)}% to {_fmt(cmd.span.p_hi)}% "
                    f"measured from the {cmd.span.anchor} end.")
    elif cmd.action == CONSOLIDATE:
        detailed = (f"In the {seg}, consolidate the region from "
                    f"{_fmt(cmd.span.p_lo)}% to {_fmt(cmd.span.p_hi)}% "
                    f"measured from the {cmd.span.anchor} end.")
    else:  # pragma: no cover
        detailed = concise

    narrative = _narrative(r, seg)
    return InstructionDoc(narrative, concise, detailed, r)


def _narrative(r: EditRecord, seg: str) -> str:
    prefix = f"Under the canonical posterior view, the {seg} appears "
    if r.kind == GLOBAL_THICKEN:
        body = f"thickened along its entire course by a factor of {_fmt(r.magnitude)}"
    elif r.kind == GLOBAL_THIN:
        body = f"thinned along its entire course by a factor of {_fmt(r.magnitude)}"
    elif r.kind == MISSING_SEGMENT:
        body = "entirely absent"
    elif r.kind == LOCAL_THICKEN:
        body = (f"locally thickened between {_fmt(r.span[0])}% and "
                f"{_fmt(r.span[1])}% from the {r.anchor} end "
                f"by a factor of {_fmt(r.magnitude)}")
    elif r.kind == LOCAL_THIN:
        body = (f"locally thinned between {_fmt(r.span[0])}% and "
                f"{_fmt(r.span[1])}% from the {r.anchor} end "
                f"by a factor of {_fmt(r.magnitude)}")
    elif r.kind == SHORTEN:
        body = (f"truncated, missing the final {_fmt(r.magnitude)}% of its "
                f"length at the {_opposite(r.anchor)} end")
    elif r.kind == DISCONNECT:
        body = (f"interrupted by a gap between {_fmt(r.span[0])}% and "
                f"{_fmt(r.span[1])}% from the {r.anchor} end")
    elif r.kind == FRAGMENT:
        body = (f"broken into {r.fragment_count} fragments between "
                f"{_fmt(r.span[0])}% and {_fmt(r.span[1])}% from the "
                f"{r.anchor} end")
    else:  # pragma: no cover
        body = "altered"
    return prefix + body + "."


# ---------------------------------------------------------------------------
# parsing

# decimals first, then words (which may start with a digit, e.g. "3rd-A2")
_TOKEN_RE = re.compile(r"-\d+(?:\.\d+)?|\d+\.\d+|[A-Za-z0-9][A-Za-z0-9'-]*|[%(),]")


def _split_clauses(text: str):
    """Yield (start, end) spans of clauses; '.' splits only outside numbers."""
    spans = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            spans.append((start, i))
            start = i + 1
        elif ch == ".":
            prev_digit = i > 0 and text[i - 1].isdigit()
            next_digit = i + 1 < n and text[i + 1].isdigit()
            if not (prev_digit and next_digit):
                spans.append((start, i))
                start = i + 1
        i += 1
    spans.append((start, n))
    return [(s, e) for s, e in spans if text[s:e].strip()]


class _Tokens:
    def __init__(self, text: str, offset: int):
        self.toks = [(m.group(0), offset + m.start(), offset + m.end())
                     for m in _TOKEN_RE.finditer(text)]
        self.pos = 0

    def peek(self, k: int = 0):
        i = self.pos + k
        return self.toks[i][0].lower() if i < len(self.toks) else None

    def raw(self, k: int = 0):
        i = self.pos + k
        return self.toks[i][0] if i < len(self.toks) else None

    def span(self, k: int = 0):
        i = self.pos + k
        if i < len(self.toks):
            return self.toks[i][1], self.toks[i][2]
        if self.toks:
            return self.toks[-1][2], self.toks[-1][2]
        return 0, 0

    def advance(self, k: int = 1):
        self.pos += k

    def exhausted(self) -> bool:
        return self.pos >= len(self.toks)

    def accept(self, *words) -> bool:
        for k, w in enumerate(words):
            if self.peek(k) != w:
                return False
        self.advance(len(words))
        return True

    def number(self):
        t = self.peek()
        if t is None:
            return None
        try:
            val = float(t)
        except ValueError:
            return None
        self.advance()
        return val


class _ClauseFail(Exception):
    def __init__(self, message: str, start: int, end: int):
        self.message = message
        self.start = start
        self.end = end


def _match_segment(toks: _Tokens, label_map) -> int | None:
    """Longest token-run match against canonical names and aliases."""
    for length in range(5, 0, -1):
        words = [toks.raw(k) for k in range(length)]
        if any(w is None for w in words):
            continue
        cid = resolve_segment_name(" ".join(words), label_map)
        if cid is not None:
            toks.advance(length)
            return cid
    return None


def _parse_locator(toks: _Tokens):
    """from PCT to PCT | between PCT and PCT, optional anchor suffix."""
    save = toks.pos
    if toks.accept("from"):
        lo = toks.number()
        if lo is None or not toks.accept("%") or not toks.accept("to"):
            toks.pos = save
            return None
        hi = toks.number()
        if hi is None or not toks.accept("%"):
            raise _ClauseFail("malformed span", *toks.span())
    elif toks.accept("between"):
        lo = toks.number()
        if lo is None or not toks.accept("%") or not toks.accept("and"):
            raise _ClauseFail("malformed span", *toks.span())
        hi = toks.number()
        if hi is None or not toks.accept("%"):
            raise _ClauseFail("malformed span", *toks.span())
    else:
        return None
    anchor = "proximal"
    if toks.accept("measured", "from", "the"):
        if toks.peek() in ("proximal", "distal"):
            anchor = toks.peek()
            toks.advance()
            toks.accept("end")
        else:
            raise _ClauseFail("malformed span anchor", *toks.span())
    if not (0 <= lo < hi <= 100):
        raise _ClauseFail(f"malformed span ({lo}, {hi})", *toks.span())
    return Span(lo, hi, anchor)


def _parse_end_locator(toks: _Tokens):
    save = toks.pos
    if (toks.peek() in ("at", "from") and toks.peek(1) == "the"
            and toks.peek(2) in ("proximal", "distal")):
        end = toks.peek(2)
        toks.advance(3)
        toks.accept("end")
        return end
    toks.pos = save
    return None


def _parse_magnitude(toks: _Tokens):
    if toks.accept("by", "a", "factor", "of"):
        val = toks.number()
        if val is None:
            raise _ClauseFail("malformed magnitude", *toks.span())
        return Magnitude(val, "factor")
    if toks.peek() == "by":
        save = toks.pos
        toks.advance()
        val = toks.number()
        if val is None:
            toks.pos = save
            return None
        unit = toks.peek()
        if unit == "%" or unit == "percent":
            toks.advance()
            return Magnitude(val, "percent")
        if unit in ("voxels", "voxel"):
            toks.advance()
            return Magnitude(val, "voxels")
        if unit == "mm":
            toks.advance()
            return Magnitude(val, "mm")
        raise _ClauseFail("malformed magnitude unit", *toks.span())
    if toks.accept("to", "radius"):
        val = toks.number()
        if val is None:
            raise _ClauseFail("malformed magnitude", *toks.span())
        toks.accept("mm")
        return Magnitude(val, "radius_mm")
    return None


def _parse_hints(toks: _Tokens, label_map):
    if toks.accept("connecting"):
        a = _match_segment(toks, label_map)
        if a is None:
            raise _ClauseFail("unknown segment name in hint", *toks.span())
        if not toks.accept("and"):
            raise _ClauseFail("malformed connection hint", *toks.span())
        b = _match_segment(toks, label_map)
        if b is None:
            raise _ClauseFail("unknown segment name in hint", *toks.span())
        return ("connect", a, b)
    if toks.accept("at", "point"):
        if not toks.accept("("):
            raise _ClauseFail("malformed point hint", *toks.span())
        coords = []
        for k in range(3):
            val = toks.number()
            if val is None:
                raise _ClauseFail("malformed point hint", *toks.span())
            coords.append(val)
            if k < 2 and not toks.accept(","):
                raise _ClauseFail("malformed point hint", *toks.span())
        toks.accept(")")
        return ("point", *coords)
    return None


_FILLERS = {"the", "region", "tube", "segment", "entire", "course", "it",
            "its", "please", "a"}


def _parse_clause(text: str, offset: int, index: int, label_map) -> EditCommand:
    toks = _Tokens(text, offset)
    if toks.exhausted():
        raise _ClauseFail("empty clause", offset, offset + len(text))

    segment_id = None
    # optional "in the SEGMENT ," prefix
    save = toks.pos
    if toks.accept("in", "the"):
        segment_id = _match_segment(toks, label_map)
        if segment_id is None:
            toks.pos = save
        else:
            toks.accept(",")

    verb = toks.peek()
    action = ACTION_SYNONYMS.get(verb or "")
    if action is None:
        raise _ClauseFail(f"unknown action verb {verb!r}", *toks.span())
    toks.advance()

    span = None
    magnitude = None
    end = None
    hints = None
    guard = -1
    while not toks.exhausted() and toks.pos != guard:
        guard = toks.pos
        t = toks.peek()
        if t in _FILLERS or t == ",":
            toks.advance()
            continue
        if t == "gap":
            toks.advance()
            toks.accept("in")
            continue
        if segment_id is None:
            cid = _match_segment(toks, label_map)
            if cid is not None:
                segment_id = cid
                continue
        e = _parse_end_locator(toks)
        if e is not None:
            end = end or e
            continue
        loc = _parse_locator(toks)
        if loc is not None:
            span = span or loc
            continue
        mag = _parse_magnitude(toks)
        if mag is not None:
            magnitude = magnitude or mag
            continue
        h = _parse_hints(toks, label_map)
        if h is not None:
            hints = hints or h
            continue
        # unconsumable token
        if segment_id is None and re.match(r"[A-Za-z]", t or ""):
            raise _ClauseFail(f"unknown segment name {toks.raw()!r}", *toks.span())
        raise _ClauseFail(f"unexpected token {toks.raw()!r}", *toks.span())

    if segment_id is None:
        raise _ClauseFail("no segment named in clause", offset, offset + len(text))
    if magnitude is not None and magnitude.value <= 0:
        raise _ClauseFail("magnitude must be positive", offset, offset + len(text))
    return EditCommand(action, segment_id, span=span, magnitude=magnitude,
                       end=end, hints=hints)


def parse_instruction(text: str,
                      label_map: dict[int, str] | None = None) -> ParseResult:
    """Parse instruction text into commands; never raises on bad input."""
    label_map = label_map or DEFAULT_LABEL_MAP
    result = ParseResult()
    if not isinstance(text, str):
        text = str(text)
    for index, (s, e) in enumerate(_split_clauses(text)):
        clause = text[s:e]
        try:
            cmd = _parse_clause(clause, s, index, label_map)
            result.commands.append(cmd)
            result.outcomes.append(cmd)
        except _ClauseFail as err:
            ce = ClauseError(index, err.start, err.end, err.message)
            result.errors.append(ce)
            result.outcomes.append(ce)
        except Exception as err:  # defensive: parsing must be total
            ce = ClauseError(index, s, e, f"internal parse failure: {err}")
            result.errors.append(ce)
            result.outcomes.append(ce)
    return result


def command_to_dict(cmd: EditCommand) -> dict:
    d = {"action": cmd.action, "segment_id": cmd.segment_id}
    if cmd.span is not None:
        d["span"] = {"p_lo": cmd.span.p_lo, "p_hi": cmd.span.p_hi,
                     "anchor": cmd.span.anchor}
    if cmd.magnitude is not None:
        d["magnitude"] = {"value": cmd.magnitude.value, "unit": cmd.magnitude.unit}
    if cmd.end is not None:
        d["end"] = cmd.end
    if cmd.hints is not None:
        d["hints"] = list(cmd.hints)
    return d
