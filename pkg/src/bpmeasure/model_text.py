"""Textual process-model format: parser and canonical serializer.

    model      := item*
    item       := process | resources | orgunit
    process    := 'process' STRING '{' pitem* '}'
    pitem      := lane | node | flow | measure
    lane       := 'lane' STRING '{' node* '}'
    node       := 'start' STRING | 'finish' STRING
                | 'task' STRING block?
                | 'subprocess' STRING 'ref' STRING block?
                | 'decision' STRING '{' branch+ '}'
                | 'datastore' STRING ('material' STRING)?
    block      := '{' (perf | trig | dur | measure)* '}'
    perf       := 'performer:' (STRING | 'any')
    trig       := 'every' DURATION
    dur        := 'duration:' ('fixed(' DURATION ')' | 'uniform(' DURATION ',' DURATION ')')
    branch     := 'branch' STRING '->' STRING ('p=' NUMBER)?
    flow       := 'flow' STRING '->' STRING ('object' STRING)?
    measure    := 'measure' STRING
    resources  := 'resources' '{' (STRING ':' ('people'|'equipment'|'material') 'x' INT)* '}'
    orgunit    := 'orgunit' STRING '{' 'members:' STRING (',' STRING)* '}'
    DURATION   := 0:03:00 | 90s | 3min | 2hour

Names are quoted and may contain spaces; `#` starts a line comment.  Measure
strings are carried verbatim (the measure parser interprets them later).
Performer/duration/trigger items inside a `subprocess` block are accepted
and dropped: the called process's own tasks carry those.  Parsing never
mutates shared state and reports 1-based line/column on failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ParseError
from .model import (
    ANY_PERFORMER,
    Branch,
    BusinessProcess,
    Datastore,
    Decision,
    DurationSpec,
    Element,
    FinishNode,
    Flow,
    OrgUnit,
    ProcessModel,
    Resource,
    StartNode,
    SubprocessCall,
    Task,
)

_RESOURCE_KINDS = ("people", "equipment", "material")
_DURATION_SUFFIXES = {"s": 1, "sec": 1, "min": 60, "hour": 3600, "h": 3600}


@dataclass(frozen=True)
class _Token:
    kind: str  # STRING | WORD | NUMBER | CLOCK | SYM | END
    text: str
    line: int
    column: int


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)

    def bump(k: int) -> None:
        nonlocal i, col
        i += k
        col += k

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            bump(1)
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                bump(1)
            continue
        start_line, start_col = line, col
        if ch == '"':
            j = i + 1
            buf = []
            while j < n:
                c = text[j]
                if c == "\\" and j + 1 < n and text[j + 1] in ('"', "\\"):
                    buf.append(text[j + 1])
                    j += 2
                    continue
                if c == '"':
                    break
                if c == "\n":
                    raise ParseError("unterminated string", start_line, start_col)
                buf.append(c)
                j += 1
            if j >= n:
                raise ParseError("unterminated string", start_line, start_col)
            tokens.append(_Token("STRING", "".join(buf), start_line, start_col))
            bump(j + 1 - i)
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if text[j:j + 1] == ":" and text[j + 1:j + 3].isdigit() and text[j + 3:j + 4] == ":" \
                    and text[j + 4:j + 6].isdigit():
                tokens.append(_Token("CLOCK", text[i:j + 6], start_line, start_col))
                bump(j + 6 - i)
                continue
            if j < n and text[j] == "." and text[j + 1:j + 2].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            tokens.append(_Token("NUMBER", text[i:j], start_line, start_col))
            bump(j - i)
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("WORD", text[i:j], start_line, start_col))
            bump(j - i)
            continue
        if text.startswith("->", i):
            tokens.append(_Token("SYM", "->", start_line, start_col))
            bump(2)
            continue
        if ch in "{}():,=":
            tokens.append(_Token("SYM", ch, start_line, start_col))
            bump(1)
            continue
        raise ParseError(f"unexpected character {ch!r}", start_line, start_col)
    tokens.append(_Token("END", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str, expected: str | None = None) -> ParseError:
        tok = self.peek()
        shown = tok.text if tok.kind != "END" else "end of input"
        return ParseError(f"{message}, got {shown!r}", tok.line, tok.column, expected)

    def at_word(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "WORD" and tok.text in words

    def at_sym(self, sym: str) -> bool:
        tok = self.peek()
        return tok.kind == "SYM" and tok.text == sym

    def expect_word(self, word: str) -> _Token:
        if not self.at_word(word):
            raise self.fail("unexpected token", expected=repr(word))
        return self.advance()

    def expect_sym(self, sym: str) -> _Token:
        if not self.at_sym(sym):
            raise self.fail("unexpected token", expected=repr(sym))
        return self.advance()

    def expect_string(self, what: str = "a quoted name") -> str:
        tok = self.peek()
        if tok.kind != "STRING":
            raise self.fail("unexpected token", expected=what)
        return self.advance().text

    # -- grammar -----------------------------------------------------------

    def parse_model(self) -> ProcessModel:
        processes: list[BusinessProcess] = []
        flows: list[Flow] = []
        resources: list[Resource] = []
        org_units: list[OrgUnit] = []
        while self.peek().kind != "END":
            if self.at_word("process"):
                proc, proc_flows = self.parse_process()
                if any(p.name == proc.name for p in processes):
                    tok = self.peek()
                    raise ParseError(f"duplicate process name {proc.name!r}",
                                     tok.line, tok.column)
                processes.append(proc)
                flows.extend(proc_flows)
            elif self.at_word("resources"):
                self.parse_resources(resources)
            elif self.at_word("orgunit"):
                org_units.append(self.parse_orgunit())
            else:
                raise self.fail("unexpected token",
                                expected="'process', 'resources' or 'orgunit'")
        name = processes[0].name if processes else ""
        return ProcessModel(
            name=name,
            org_units=tuple(org_units),
            resources=tuple(resources),
            processes=tuple(processes),
            flows=tuple(flows),
        )

    def parse_process(self) -> tuple[BusinessProcess, list[Flow]]:
        self.expect_word("process")
        tok = self.peek()
        name = self.expect_string("a process name")
        self.expect_sym("{")
        children: list[Element] = []
        measures: list[str] = []
        flows: list[Flow] = []

        def add_child(child: Element, at: _Token) -> None:
            if any(c.name == child.name for c in children):
                raise ParseError(f"duplicate element name {child.name!r} in process {name!r}",
                                 at.line, at.column)
            children.append(child)

        while not self.at_sym("}"):
            at = self.peek()
            if self.at_word("lane"):
                self.advance()
                lane_name = self.expect_string("a lane name")
                self.expect_sym("{")
                while not self.at_sym("}"):
                    add_child(self.parse_node(lane_name), self.peek())
                self.expect_sym("}")
            elif self.at_word("flow"):
                self.advance()
                source = self.expect_string("a source element name")
                self.expect_sym("->")
                target = self.expect_string("a target element name")
                obj = None
                if self.at_word("object"):
                    self.advance()
                    obj = self.expect_string("an object name")
                flows.append(Flow(name, source, target, obj))
            elif self.at_word("measure"):
                self.advance()
                measures.append(self.expect_string("a measure annotation"))
            elif self.at_word("start", "finish", "task", "subprocess", "decision", "datastore"):
                add_child(self.parse_node(""), at)
            else:
                raise self.fail("unexpected token",
                                expected="an element, 'lane', 'flow', 'measure' or '}'")
        self.expect_sym("}")
        return BusinessProcess(name, tuple(children), tuple(measures)), flows

    def parse_node(self, lane: str) -> Element:
        if self.at_word("start"):
            self.advance()
            return StartNode(self.expect_string())
        if self.at_word("finish"):
            self.advance()
            return FinishNode(self.expect_string())
        if self.at_word("task"):
            self.advance()
            name = self.expect_string("a task name")
            performer, trigger, dur, measures = self.parse_block()
            return Task(name, performer=performer, org_unit=lane,
                        time_trigger=trigger, duration=dur, measures=tuple(measures))
        if self.at_word("subprocess"):
            self.advance()
            name = self.expect_string("a call name")
            self.expect_word("ref")
            target = self.expect_string("a process name")
            _, _, _, measures = self.parse_block()
            return SubprocessCall(name, target, tuple(measures))
        if self.at_word("decision"):
            self.advance()
            name = self.expect_string("a decision name")
            self.expect_sym("{")
            branches: list[Branch] = []
            while self.at_word("branch"):
                self.advance()
                label = self.expect_string("a branch label")
                self.expect_sym("->")
                target = self.expect_string("a target element name")
                prob = None
                if self.at_word("p"):
                    self.advance()
                    self.expect_sym("=")
                    tok = self.peek()
                    if tok.kind != "NUMBER":
                        raise self.fail("unexpected token", expected="a probability")
                    prob = Fraction(self.advance().text)
                branches.append(Branch(label, target, prob))
            if not branches:
                raise self.fail("decision needs at least one 'branch'", expected="'branch'")
            self.expect_sym("}")
            return Decision(name, tuple(branches))
        if self.at_word("datastore"):
            self.advance()
            name = self.expect_string("a datastore name")
            material = ""
            if self.at_word("material"):
                self.advance()
                material = self.expect_string("a material resource name")
            return Datastore(name, material)
        raise self.fail("unexpected token", expected="an element keyword")

    def parse_block(self):
        performer = None
        trigger = None
        dur = None
        measures: list[str] = []
        if not self.at_sym("{"):
            return performer, trigger, dur, measures
        self.advance()
        while not self.at_sym("}"):
            if self.at_word("performer"):
                self.advance()
                self.expect_sym(":")
                if self.at_word(ANY_PERFORMER):
                    self.advance()
                    performer = ANY_PERFORMER
                else:
                    performer = self.expect_string("a resource name or 'any'")
            elif self.at_word("every"):
                self.advance()
                trigger = self.parse_duration()
            elif self.at_word("duration"):
                self.advance()
                self.expect_sym(":")
                if self.at_word("fixed"):
                    self.advance()
                    self.expect_sym("(")
                    dur = DurationSpec.fixed(self.parse_duration())
                    self.expect_sym(")")
                elif self.at_word("uniform"):
                    self.advance()
                    self.expect_sym("(")
                    low = self.parse_duration()
                    self.expect_sym(",")
                    high = self.parse_duration()
                    self.expect_sym(")")
                    if high < low:
                        raise self.fail(f"uniform({low}s, {high}s) is reversed")
                    dur = DurationSpec.uniform(low, high)
                else:
                    raise self.fail("unexpected token", expected="'fixed' or 'uniform'")
            elif self.at_word("measure"):
                self.advance()
                measures.append(self.expect_string("a measure annotation"))
            else:
                raise self.fail("unexpected token",
                                expected="'performer', 'every', 'duration', 'measure' or '}'")
        self.expect_sym("}")
        return performer, trigger, dur, measures

    def parse_duration(self) -> int:
        tok = self.peek()
        if tok.kind == "CLOCK":
            self.advance()
            h, m, s = (int(p) for p in tok.text.split(":"))
            if m > 59 or s > 59:
                raise ParseError(f"bad duration {tok.text!r}", tok.line, tok.column)
            return h * 3600 + m * 60 + s
        if tok.kind == "NUMBER":
            self.advance()
            suffix = self.peek()
            if suffix.kind != "WORD" or suffix.text not in _DURATION_SUFFIXES:
                raise self.fail("unexpected token", expected="a duration unit (s, min, hour)")
            self.advance()
            seconds = Fraction(tok.text) * _DURATION_SUFFIXES[suffix.text]
            if seconds.denominator != 1:
                raise ParseError(f"duration {tok.text}{suffix.text} is not a whole number "
                                 "of seconds", tok.line, tok.column)
            return int(seconds)
        raise self.fail("unexpected token", expected="a duration literal")

    def parse_resources(self, out: list[Resource]) -> None:
        self.expect_word("resources")
        self.expect_sym("{")
        while not self.at_sym("}"):
            tok = self.peek()
            name = self.expect_string("a resource name")
            self.expect_sym(":")
            kind_tok = self.peek()
            if kind_tok.kind != "WORD" or kind_tok.text not in _RESOURCE_KINDS:
                raise self.fail("unexpected token",
                                expected="'people', 'equipment' or 'material'")
            kind = self.advance().text
            count_tok = self.peek()
            if count_tok.kind == "WORD" and count_tok.text.startswith("x") \
                    and count_tok.text[1:].isdigit():
                self.advance()
                capacity = int(count_tok.text[1:])
            elif count_tok.kind == "WORD" and count_tok.text == "x":
                self.advance()
                num = self.peek()
                if num.kind != "NUMBER" or "." in num.text:
                    raise self.fail("unexpected token", expected="an integer count")
                capacity = int(self.advance().text)
            else:
                raise self.fail("unexpected token", expected="'x <count>'")
            if any(r.name == name for r in out):
                raise ParseError(f"duplicate resource name {name!r}", tok.line, tok.column)
            out.append(Resource(name, kind, capacity))
        self.expect_sym("}")

    def parse_orgunit(self) -> OrgUnit:
        self.expect_word("orgunit")
        name = self.expect_string("an org unit name")
        self.expect_sym("{")
        self.expect_word("members")
        self.expect_sym(":")
        members = [self.expect_string("a resource name")]
        while self.at_sym(","):
            self.advance()
            members.append(self.expect_string("a resource name"))
        self.expect_sym("}")
        return OrgUnit(name, tuple(members))


def parse_model(text: str) -> ProcessModel:
    """Parse model text; raises ParseError with 1-based line/column."""
    return _Parser(_lex(text)).parse_model()


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _quote(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _duration_text(seconds: int) -> str:
    if 0 < seconds < 60 or seconds == 0:
        return f"{seconds}s"
    if seconds % 3600 == 0:
        return f"{seconds // 3600}hour"
    if seconds % 60 == 0 and seconds < 3600:
        return f"{seconds // 60}min"
    h, rem = divmod(seconds, 3600)
    m, s = divmod(rem, 60)
    return f"{h}:{m:02d}:{s:02d}"


def _block_lines(element: Task | SubprocessCall, indent: str) -> list[str]:
    lines = []
    if isinstance(element, Task):
        if element.performer == ANY_PERFORMER:
            lines.append(f"{indent}performer: any")
        elif element.performer:
            lines.append(f"{indent}performer: {_quote(element.performer)}")
        if element.time_trigger is not None:
            lines.append(f"{indent}every {_duration_text(element.time_trigger)}")
        if element.duration is not None:
            if element.duration.kind == "fixed":
                lines.append(f"{indent}duration: fixed({_duration_text(element.duration.low)})")
            else:
                lines.append(f"{indent}duration: uniform({_duration_text(element.duration.low)}, "
                             f"{_duration_text(element.duration.high)})")
    for measure in element.measures:
        lines.append(f"{indent}measure {_quote(measure)}")
    return lines


def _node_lines(element: Element, indent: str) -> list[str]:
    if isinstance(element, StartNode):
        return [f"{indent}start {_quote(element.name)}"]
    if isinstance(element, FinishNode):
        return [f"{indent}finish {_quote(element.name)}"]
    if isinstance(element, Datastore):
        line = f"{indent}datastore {_quote(element.name)}"
        if element.material:
            line += f" material {_quote(element.material)}"
        return [line]
    if isinstance(element, Decision):
        lines = [f"{indent}decision {_quote(element.name)} {{"]
        for b in element.branches:
            line = f"{indent}  branch {_quote(b.label)} -> {_quote(b.target)}"
            if b.probability is not None:
                from .units import format_decimal
                line += f" p={format_decimal(b.probability)}"
            lines.append(line)
        lines.append(f"{indent}}}")
        return lines
    if isinstance(element, Task):
        head = f"{indent}task {_quote(element.name)}"
    elif isinstance(element, SubprocessCall):
        head = f"{indent}subprocess {_quote(element.name)} ref {_quote(element.target)}"
    else:
        raise TypeError(f"not a serializable element: {element!r}")
    body = _block_lines(element, indent + "  ")
    if not body:
        return [head]
    return [head + " {", *body, f"{indent}}}"]


def serialize_model(model: ProcessModel) -> str:
    """Canonical text: one element per line, two-space indent, flows after
    elements.  `parse_model(serialize_model(m))` equals `m` structurally and
    a second serialize is byte-identical."""
    lines: list[str] = []
    if model.resources:
        lines.append("resources {")
        for res in model.resources:
            lines.append(f"  {_quote(res.name)}: {res.kind} x {res.capacity}")
        lines.append("}")
    for unit in model.org_units:
        lines.append(f"orgunit {_quote(unit.name)} {{")
        lines.append("  members: " + ", ".join(_quote(m) for m in unit.members))
        lines.append("}")
    for proc in model.processes:
        lines.append(f"process {_quote(proc.name)} {{")
        open_lane: str | None = None
        for child in proc.children:
            lane = child.org_unit if isinstance(child, Task) else ""
            if lane != (open_lane or ""):
                if open_lane:
                    lines.append("  }")
                    open_lane = None
                if lane:
                    lines.append(f"  lane {_quote(lane)} {{")
                    open_lane = lane
            lines.extend(_node_lines(child, "    " if open_lane else "  "))
        if open_lane:
            lines.append("  }")
        for measure in proc.measures:
            lines.append(f"  measure {_quote(measure)}")
        for flow in model.flows_of(proc.name):
            line = f"  flow {_quote(flow.source)} -> {_quote(flow.target)}"
            if flow.object_name is not None:
                line += f" object {_quote(flow.object_name)}"
            lines.append(line)
        lines.append("}")
    return "\n".join(lines) + "\n"
