"""Process model domain types and structural validation.

A model is a set of top-level process definitions plus shared resources and
organizational units.  Processes contain primitive elements (tasks,
decisions, start/finish nodes, datastores) and calls to other processes;
flows connect elements within one process.  Instances are immutable after
construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Union

from .errors import Diagnostic, LEVEL_ERROR, LEVEL_WARNING, UnknownElementError

PRIMITIVE = "Primitive"
CONTAINER = "Container"

PEOPLE = "people"
EQUIPMENT = "equipment"
MATERIAL = "material"

# Values of the performer field on a task: a resource name, ANY_PERFORMER
# (anyone from the lane's organizational unit), or None (no resource needed).
ANY_PERFORMER = "any"


@dataclass(frozen=True)
class DurationSpec:
    """How long a task runs in simulation: fixed or uniform integer seconds."""

    kind: str  # "fixed" | "uniform"
    low: int
    high: int

    @staticmethod
    def fixed(seconds: int) -> "DurationSpec":
        return DurationSpec("fixed", seconds, seconds)

    @staticmethod
    def uniform(low: int, high: int) -> "DurationSpec":
        return DurationSpec("uniform", low, high)


@dataclass(frozen=True)
class Task:
    name: str
    performer: str | None = None
    org_unit: str = ""
    time_trigger: int | None = None  # fire on this period, in seconds
    duration: DurationSpec | None = None
    measures: tuple[str, ...] = ()


@dataclass(frozen=True)
class SubprocessCall:
    name: str
    target: str
    measures: tuple[str, ...] = ()


@dataclass(frozen=True)
class Branch:
    label: str
    target: str
    probability: Fraction | None = None


@dataclass(frozen=True)
class Decision:
    name: str
    branches: tuple[Branch, ...] = ()


@dataclass(frozen=True)
class StartNode:
    name: str


@dataclass(frozen=True)
class FinishNode:
    name: str


@dataclass(frozen=True)
class Datastore:
    name: str
    material: str = ""


Element = Union[Task, SubprocessCall, Decision, StartNode, FinishNode, Datastore]


@dataclass(frozen=True)
class BusinessProcess:
    name: str
    children: tuple[Element, ...] = ()
    measures: tuple[str, ...] = ()
    realizes_goal: str | None = None


@dataclass(frozen=True)
class OrgUnit:
    name: str
    members: tuple[str, ...] = ()


@dataclass(frozen=True)
class Resource:
    name: str
    kind: str  # people | equipment | material
    capacity: int = 1


@dataclass(frozen=True)
class Flow:
    process: str  # owning process scope
    source: str
    target: str
    object_name: str | None = None  # None: control flow

    @property
    def is_object_flow(self) -> bool:
        return self.object_name is not None


@dataclass(frozen=True)
class ProcessModel:
    name: str = ""
    org_units: tuple[OrgUnit, ...] = ()
    resources: tuple[Resource, ...] = ()
    processes: tuple[BusinessProcess, ...] = ()
    flows: tuple[Flow, ...] = ()

    def process(self, name: str) -> BusinessProcess:
        for proc in self.processes:
            if proc.name == name:
                return proc
        raise UnknownElementError(name)

    def has_process(self, name: str) -> bool:
        return any(p.name == name for p in self.processes)

    def element(self, process_name: str, element_name: str) -> Element:
        for child in self.process(process_name).children:
            if child.name == element_name:
                return child
        raise UnknownElementError(element_name)

    def resource(self, name: str) -> Resource | None:
        for res in self.resources:
            if res.name == name:
                return res
        return None

    def org_unit(self, name: str) -> OrgUnit | None:
        for unit in self.org_units:
            if unit.name == name:
                return unit
        return None

    def flows_of(self, process_name: str) -> list[Flow]:
        return [f for f in self.flows if f.process == process_name]

    def entry_processes(self) -> list[BusinessProcess]:
        """Processes not referenced by any call: the simulation entry points."""
        called = {
            child.target
            for proc in self.processes
            for child in proc.children
            if isinstance(child, SubprocessCall)
        }
        return [p for p in self.processes if p.name not in called]


def element_kind(obj: Element | BusinessProcess) -> str:
    """Primitive/Container classification.

    Processes are the only composites; a call stands for the process it
    names, so it classifies as a container too.
    """
    if isinstance(obj, (BusinessProcess, SubprocessCall)):
        return CONTAINER
    return PRIMITIVE


def element_type(obj: Element | BusinessProcess) -> str:
    """Lowercase type tag used by the measure attachment matrix."""
    if isinstance(obj, (BusinessProcess, SubprocessCall)):
        return "process"
    if isinstance(obj, Task):
        return "task"
    if isinstance(obj, Decision):
        return "decision"
    if isinstance(obj, StartNode):
        return "start"
    if isinstance(obj, FinishNode):
        return "finish"
    if isinstance(obj, Datastore):
        return "datastore"
    raise TypeError(f"not a model element: {obj!r}")


def children_of(model: ProcessModel, process_name: str) -> list[Element]:
    """Direct children of a process, in declaration order."""
    return list(model.process(process_name).children)


def measures_of(obj: Element | BusinessProcess) -> tuple[str, ...]:
    return getattr(obj, "measures", ())


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

PROB_TOLERANCE = Fraction(1, 10**9)


def _token_edges(model: ProcessModel, proc: BusinessProcess) -> dict[str, list[str]]:
    """Successor map over token-carrying edges (flows from non-datastores,
    plus decision branches).  Datastore flows move material, not tokens."""
    datastores = {c.name for c in proc.children if isinstance(c, Datastore)}
    succ: dict[str, list[str]] = {c.name: [] for c in proc.children}
    for flow in model.flows_of(proc.name):
        if flow.source in succ and flow.source not in datastores:
            succ[flow.source].append(flow.target)
    for child in proc.children:
        if isinstance(child, Decision):
            succ[child.name].extend(b.target for b in child.branches)
    return succ


def validate_model(model: ProcessModel) -> list[Diagnostic]:
    """Check every structural invariant; an empty list means the model is
    well formed.  Pure: the same model always yields the same diagnostics."""
    out: list[Diagnostic] = []

    def err(rule: str, location: str, message: str) -> None:
        out.append(Diagnostic(LEVEL_ERROR, rule, location, message))

    seen_procs: set[str] = set()
    for proc in model.processes:
        if proc.name in seen_procs:
            err("RULE_DUP_NAME", proc.name, "duplicate process name")
        seen_procs.add(proc.name)

    resource_names = set()
    for res in model.resources:
        if res.name in resource_names:
            err("RULE_DUP_NAME", res.name, "duplicate resource name")
        resource_names.add(res.name)
        if res.capacity < 0:
            err("RULE_CAPACITY", res.name, f"capacity {res.capacity} is negative")
        if res.kind not in (PEOPLE, EQUIPMENT, MATERIAL):
            err("RULE_RESOURCE_KIND", res.name, f"unknown resource kind {res.kind!r}")

    for unit in model.org_units:
        for member in unit.members:
            if member not in resource_names:
                err("RULE_ORG_MEMBER", unit.name,
                    f"member {member!r} is not a declared resource")

    for proc in model.processes:
        loc = proc.name
        if not proc.children:
            err("RULE_NONEMPTY", loc, "process has no elements")
            continue
        names: set[str] = set()
        starts, finishes = [], []
        for child in proc.children:
            if child.name in names:
                err("RULE_DUP_NAME", f"{loc}/{child.name}", "duplicate element name")
            names.add(child.name)
            if isinstance(child, StartNode):
                starts.append(child.name)
            elif isinstance(child, FinishNode):
                finishes.append(child.name)
        if len(starts) != 1:
            err("RULE_ONE_START", loc, f"process needs exactly one start node, found {len(starts)}")
        if len(finishes) != 1:
            err("RULE_ONE_FINISH", loc, f"process needs exactly one finish node, found {len(finishes)}")

        flows = model.flows_of(proc.name)
        for flow in flows:
            for endpoint in (flow.source, flow.target):
                if endpoint not in names:
                    err("RULE_FLOW_ENDPOINT", f"{loc}/{endpoint}",
                        "flow endpoint is not an element of this process")
            if flow.source == flow.target:
                err("RULE_SELF_LOOP", f"{loc}/{flow.source}", "flow loops onto itself")

        incoming: dict[str, int] = {n: 0 for n in names}
        outgoing: dict[str, int] = {n: 0 for n in names}
        for flow in flows:
            if flow.source in outgoing:
                outgoing[flow.source] += 1
            if flow.target in incoming:
                incoming[flow.target] += 1

        for child in proc.children:
            cloc = f"{loc}/{child.name}"
            if isinstance(child, StartNode) and incoming[child.name]:
                err("RULE_START_INCOMING", cloc, "start node has incoming flows")
            if isinstance(child, FinishNode) and outgoing[child.name]:
                err("RULE_FINISH_OUTGOING", cloc, "finish node has outgoing flows")
            if isinstance(child, Decision):
                outgoing[child.name] += len(child.branches)
                if len(child.branches) < 2:
                    err("RULE_DECISION_BRANCHES", cloc,
                        f"decision needs at least 2 branches, found {len(child.branches)}")
                for branch in child.branches:
                    if branch.target not in names:
                        err("RULE_FLOW_ENDPOINT", cloc,
                            f"branch target {branch.target!r} is not an element of this process")
                probs = [b.probability for b in child.branches]
                given = [p for p in probs if p is not None]
                if given and len(given) != len(probs):
                    err("RULE_PROB_SUM", cloc, "either all branch probabilities or none")
                elif given and abs(sum(given) - 1) > PROB_TOLERANCE:
                    err("RULE_PROB_SUM", cloc,
                        f"branch probabilities sum to {float(sum(given))}, not 1.0")
            if isinstance(child, Task) and child.performer not in (None, ANY_PERFORMER):
                res = model.resource(child.performer)
                if res is None:
                    err("RULE_PERFORMER", cloc,
                        f"performer {child.performer!r} is not a declared resource")
                elif res.kind == MATERIAL:
                    err("RULE_PERFORMER", cloc,
                        f"performer {child.performer!r} must be people or equipment")
            if isinstance(child, Datastore) and child.material:
                res = model.resource(child.material)
                if res is None or res.kind != MATERIAL:
                    err("RULE_DATASTORE_MATERIAL", cloc,
                        f"datastore material {child.material!r} is not a material resource")
            if isinstance(child, SubprocessCall) and not model.has_process(child.target):
                err("RULE_SUBPROCESS_TARGET", cloc,
                    f"called process {child.target!r} is not defined")

        # reachability from the start node over token edges
        if len(starts) == 1:
            succ = _token_edges(model, proc)
            reached = {starts[0]}
            frontier = [starts[0]]
            while frontier:
                for nxt in succ.get(frontier.pop(), []):
                    if nxt in names and nxt not in reached:
                        reached.add(nxt)
                        frontier.append(nxt)
            for child in proc.children:
                if isinstance(child, Datastore):
                    continue
                if child.name not in reached:
                    out.append(Diagnostic(LEVEL_WARNING, "RULE_UNREACHABLE",
                                          f"{loc}/{child.name}",
                                          "element is not reachable from the start node"))

    # containment cycles across subprocess calls
    call_targets: dict[str, list[str]] = {
        proc.name: [c.target for c in proc.children if isinstance(c, SubprocessCall)]
        for proc in model.processes
    }
    state: dict[str, int] = {}

    def dfs(name: str, trail: list[str]) -> None:
        state[name] = 1
        for target in call_targets.get(name, []):
            if state.get(target) == 1:
                cycle = trail[trail.index(target):] + [target] if target in trail else [name, target]
                err("RULE_PROCESS_CYCLE", name,
                    "process contains itself through calls: " + " -> ".join(cycle))
            elif state.get(target, 0) == 0 and target in call_targets:
                dfs(target, trail + [target])
        state[name] = 2

    for proc in model.processes:
        if state.get(proc.name, 0) == 0:
            dfs(proc.name, [proc.name])

    return out


def ancestor_processes(model: ProcessModel, object_name: str) -> set[str]:
    """Names of every process that transitively contains the named object
    (an element or a process reached through calls)."""
    direct_parent: dict[str, set[str]] = {}
    for proc in model.processes:
        for child in proc.children:
            key = child.target if isinstance(child, SubprocessCall) else child.name
            direct_parent.setdefault(key, set()).add(proc.name)
    out: set[str] = set()
    frontier = list(direct_parent.get(object_name, ()))
    while frontier:
        parent = frontier.pop()
        if parent in out:
            continue
        out.add(parent)
        frontier.extend(direct_parent.get(parent, ()))
    return out
