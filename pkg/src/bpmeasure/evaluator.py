"""Measure extraction: from a model, a registry and an execution log to the
per-instance measure table with provenance.

For each process scope and each process instance, the engine folds the
instance's log rows per element (earliest start, latest end, summed
processing times, occurrence count — loops collapse into one occurrence),
binds log-sourced measures, evaluates declared expressions topologically and
emits numbered measure instances.

Ordering within one (scope, instance) group is structural: the container's
start-time measure first, then each child's measures in declaration and
annotation order, then the container's end-time measure, then the
container's remaining measures.  Dependencies always get lower numbers; when
an explicit declaration references a later element the order shifts just
enough to respect it.

Availability times are assigned deterministically: a start/end measure
carries its own value; any other log-sourced measure becomes available when
its last logged occurrence starts; a derived measure when its sources and
its own element are complete.  Times of a group's sources never exceed the
dependent instance's time.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

from .errors import (
    AttachmentError,
    BpMeasureError,
    CycleError,
    Diagnostic,
    DimensionMismatchError,
    LEVEL_ERROR,
    LEVEL_WARNING,
    MissingFieldError,
    ParseError,
    UnknownInstanceError,
    UnknownMeasureError,
    UnknownUnitError,
    UnresolvedRefError,
)
from .logs import ExecutionLog, LogRecord, dedup_records
from .measures import (
    BinOp,
    Call,
    ChildrenRef,
    Const,
    ElementRef,
    Expr,
    MeasureAnnotation,
    Ref,
    SelfObject,
    eval_expr,
    parse_measure,
    typecheck,
)
from .model import (
    CONTAINER,
    BusinessProcess,
    Decision,
    Element,
    ProcessModel,
    SubprocessCall,
    Task,
    element_kind,
    element_type,
    measures_of,
)
from .registry import (
    MeasureKind,
    Registry,
    SOURCE_END,
    SOURCE_OCCURRENCE,
    SOURCE_PROCESSING,
    SOURCE_START,
    check_attachment,
)
from .units import Dimension, Quantity, convert, counted, duration

NodeKey = tuple[str, str, str]  # (scope, element, canonical measure name)

_OBJECT_TYPE = {"process": "Business Process", "task": "Task", "decision": "Decision"}


@dataclass(frozen=True)
class MeasureNode:
    key: NodeKey
    object_type: str
    annotation: MeasureAnnotation
    kind: MeasureKind
    is_container: bool
    resolved: Expr | None  # fully qualified declaration; None = log-sourced
    source: str | None
    deps: tuple[NodeKey, ...]
    order: int  # structural position within the scope


@dataclass(frozen=True)
class MeasureGraph:
    nodes: dict[NodeKey, MeasureNode]
    scope_order: dict[str, tuple[NodeKey, ...]]  # structural order per scope

    def scopes(self) -> list[str]:
        return list(self.scope_order)


@dataclass(frozen=True)
class MeasureInstance:
    no: int
    object_type: str
    object: str
    measure_text: str
    value: Quantity
    time: Quantity
    sources: tuple[int, ...] = ()


@dataclass
class InstanceGroup:
    scope: str
    process_id: str
    instances: list[MeasureInstance] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

def _scope_objects(proc: BusinessProcess) -> list[tuple[str, Element | BusinessProcess]]:
    """The container itself plus its direct children, in declaration order."""
    return [(proc.name, proc)] + [(c.name, c) for c in proc.children]


def _resolve_refs(expr: Expr, scope: str, element: str, proc: BusinessProcess,
                  registry: Registry, carriers: dict[str, set[str]],
                  in_aggregate: bool = False) -> Expr:
    """Qualify every reference to a concrete (element, kind) pair and expand
    `children.X` fan-ins; raises UnresolvedRefError when a reference points
    nowhere."""
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Ref):
        kind_name = registry.canonical_name(expr.measure) if registry.has_kind(expr.measure) else None
        if kind_name is None:
            raise UnresolvedRefError(str(expr), f"{scope}/{element}: not a registered measure")
        if isinstance(expr.target, SelfObject):
            target = element
        elif isinstance(expr.target, ElementRef):
            target = expr.target.name
            if target != proc.name and all(c.name != target for c in proc.children):
                raise UnresolvedRefError(str(expr), f"{scope}/{element}: no such element in scope")
        else:  # ChildrenRef is expanded by the enclosing aggregate
            raise UnresolvedRefError(
                str(expr), f"{scope}/{element}: children.* is only valid inside an aggregate")
        if kind_name not in carriers.get(target, set()):
            raise UnresolvedRefError(
                str(expr), f"{scope}/{element}: {target!r} carries no {kind_name!r} measure")
        return Ref(kind_name, ElementRef(target))
    if isinstance(expr, BinOp):
        return BinOp(expr.op,
                     _resolve_refs(expr.lhs, scope, element, proc, registry, carriers),
                     _resolve_refs(expr.rhs, scope, element, proc, registry, carriers))
    if isinstance(expr, Call):
        args: list[Expr] = []
        aggregate = expr.fn in ("Sum", "Avg", "Min", "Max", "Count")
        for arg in expr.args:
            if aggregate and isinstance(arg, Ref) and isinstance(arg.target, ChildrenRef):
                if not registry.has_kind(arg.measure):
                    raise UnresolvedRefError(str(arg), f"{scope}/{element}: not a registered measure")
                kind_name = registry.canonical_name(arg.measure)
                expanded = [Ref(kind_name, ElementRef(c.name)) for c in proc.children
                            if kind_name in carriers.get(c.name, set())]
                if not expanded:
                    raise UnresolvedRefError(
                        str(arg), f"{scope}/{element}: no child carries {kind_name!r}")
                args.extend(expanded)
            else:
                args.append(_resolve_refs(arg, scope, element, proc, registry, carriers))
        return Call(expr.fn, tuple(args))
    raise TypeError(f"not an expression node: {expr!r}")


def _collect_refs(expr: Expr, out: list[Ref]) -> None:
    if isinstance(expr, Ref):
        out.append(expr)
    elif isinstance(expr, BinOp):
        _collect_refs(expr.lhs, out)
        _collect_refs(expr.rhs, out)
    elif isinstance(expr, Call):
        for arg in expr.args:
            _collect_refs(arg, out)


def build_graph(model: ProcessModel, registry: Registry
                ) -> tuple[MeasureGraph, list[Diagnostic], list[BpMeasureError]]:
    """Resolve every annotation into a measure node.

    Problems become diagnostics (plus a matching typed exception, for callers
    that want to raise) and the offending node is left out."""
    diagnostics: list[Diagnostic] = []
    errors: list[BpMeasureError] = []
    nodes: dict[NodeKey, MeasureNode] = {}
    scope_order: dict[str, list[NodeKey]] = {}

    def err(rule: str, location: str, message: str, exc: BpMeasureError | None = None) -> None:
        diagnostics.append(Diagnostic(LEVEL_ERROR, rule, location, message))
        errors.append(exc if exc is not None else BpMeasureError(f"{location}: {message}"))

    for proc in model.processes:
        scope = proc.name
        parsed: dict[str, list[MeasureAnnotation]] = {}
        carriers: dict[str, set[str]] = {}
        # pass 1: parse annotations, check attachment, record who carries what
        for name, obj in _scope_objects(proc):
            for raw in measures_of(obj):
                location = f"{scope}/{name}"
                try:
                    ann = parse_measure(raw, registry.units)
                except (ParseError, UnknownUnitError) as exc:
                    err("MEASURE_SYNTAX", location, f"bad measure {raw!r}: {exc}", exc)
                    continue
                if isinstance(obj, SubprocessCall):
                    err("ATTACH_CALL", location,
                        f"measures on a call are not evaluated; annotate process {obj.target!r}",
                        AttachmentError(ann.name, name, "call"))
                    continue
                problem = check_attachment(registry, ann.name, element_type(obj))
                if problem is not None:
                    diagnostics.append(replace(problem, location=location))
                    if problem.rule == "UNKNOWN_MEASURE":
                        errors.append(UnknownMeasureError(ann.name))
                    else:
                        errors.append(AttachmentError(ann.name, name, element_type(obj)))
                    continue
                kind = registry.kind(ann.name)
                if ann.unit.dimension is not kind.dimension:
                    err("MEASURE_UNIT", location,
                        f"{ann.name!r} is a {kind.dimension} measure; unit "
                        f"{ann.unit.symbol!r} is a {ann.unit.dimension}")
                    continue
                if kind.name in carriers.get(name, set()):
                    err("DUPLICATE_MEASURE", location,
                        f"{kind.name!r} is annotated more than once")
                    continue
                parsed.setdefault(name, []).append(ann)
                carriers.setdefault(name, set()).add(kind.name)

        # pass 2: resolve declarations and build nodes
        scope_nodes: list[MeasureNode] = []
        for name, obj in _scope_objects(proc):
            if isinstance(obj, SubprocessCall):
                continue
            is_container = obj is proc
            for ann in parsed.get(name, []):
                location = f"{scope}/{name}/{ann.name}"
                kind = registry.kind(ann.name)
                decl = ann.decl
                source = None
                if decl is None and is_container and kind.container_implicit is not None:
                    decl = kind.container_implicit
                if decl is None:
                    if kind.primitive_source is None:
                        err("NO_DECLARATION", location,
                            f"{kind.name!r} has no declaration and no log source")
                        continue
                    source = kind.primitive_source
                    resolved = None
                else:
                    try:
                        resolved = _resolve_refs(decl, scope, name, proc, registry, carriers)
                    except UnresolvedRefError as exc:
                        err("UNRESOLVED_REF", location, str(exc), exc)
                        continue
                key = (scope, name, kind.name)
                deps = []
                if resolved is not None:
                    refs: list[Ref] = []
                    _collect_refs(resolved, refs)
                    deps = sorted({(scope, r.target.name, r.measure) for r in refs})
                scope_nodes.append(MeasureNode(
                    key=key,
                    object_type=_OBJECT_TYPE[element_type(obj)],
                    annotation=ann,
                    kind=kind,
                    is_container=is_container,
                    resolved=resolved,
                    source=source,
                    deps=tuple(deps),
                    order=0,
                ))

        # structural order: container start, children, container end, container rest
        def slot(node: MeasureNode) -> int:
            if node.is_container:
                if node.source == SOURCE_START:
                    return 0
                if node.source == SOURCE_END:
                    return 2
                return 3
            return 1

        child_index = {c.name: i for i, c in enumerate(proc.children)}
        scope_nodes.sort(key=lambda n: (
            slot(n),
            child_index.get(n.key[1], -1),
            parsed.get(n.key[1], []).index(n.annotation),
        ))
        ordered = [replace(n, order=i) for i, n in enumerate(scope_nodes)]
        for node in ordered:
            nodes[node.key] = node
        if ordered:
            scope_order[scope] = [n.key for n in ordered]

    # deps may dangle when the referenced node was rejected above
    for key, node in list(nodes.items()):
        live = tuple(d for d in node.deps if d in nodes)
        if live != node.deps:
            diagnostics.append(Diagnostic(
                LEVEL_WARNING, "DROPPED_DEP", "/".join(key),
                "a referenced measure was rejected; this one will not evaluate"))
            nodes[key] = replace(node, deps=live)

    # cycle check
    state: dict[NodeKey, int] = {}

    def dfs(key: NodeKey, trail: list[NodeKey]) -> list[NodeKey] | None:
        state[key] = 1
        for dep in nodes[key].deps:
            if state.get(dep) == 1:
                return trail[trail.index(dep):] + [dep]
            if state.get(dep, 0) == 0:
                found = dfs(dep, trail + [dep])
                if found:
                    return found
        state[key] = 2
        return None

    cycle_keys: set[NodeKey] = set()
    for key in nodes:
        if state.get(key, 0) == 0:
            found = dfs(key, [key])
            if found:
                path = ["/".join(k) for k in found]
                err("CYCLE", path[0], "measure dependency cycle: " + " -> ".join(path),
                    CycleError(path))
                cycle_keys.update(found)

    # dimension check of resolved declarations
    def dimension_of(ref: Ref) -> Dimension:
        return nodes[(ref_scope, ref.target.name, ref.measure)].kind.dimension

    for key, node in nodes.items():
        if node.resolved is None or key in cycle_keys:
            continue
        ref_scope = key[0]
        location = "/".join(key)
        try:
            got = typecheck(node.resolved, dimension_of, path=location)
        except DimensionMismatchError as exc:
            err("DIMENSION_MISMATCH", location, str(exc), exc)
            continue
        if got is not node.kind.dimension:
            err("DIMENSION_MISMATCH", location,
                f"declaration evaluates to {got}, measure unit needs {node.kind.dimension}",
                DimensionMismatchError(location, got, node.kind.dimension))

    return MeasureGraph(nodes, {s: tuple(k) for s, k in scope_order.items()}), diagnostics, errors


def build_measure_graph(model: ProcessModel, registry: Registry) -> MeasureGraph:
    """Build the dependency graph, raising on the first error."""
    graph, _, errors = build_graph(model, registry)
    if errors:
        raise errors[0]
    return graph


# ---------------------------------------------------------------------------
# Folding log occurrences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldedOccurrence:
    """One element's rows within one process instance, collapsed."""

    element: str
    process_id: str
    start: Quantity | None
    end: Quantity | None
    processing_time: Quantity | None  # summed over occurrences
    count: int
    rows: tuple[int, ...]
    last_start: Quantity | None  # start of the latest contributing row

    def value_for(self, source: str, measure: str = "") -> Quantity:
        if source == SOURCE_START and self.start is not None:
            return self.start
        if source == SOURCE_END and self.end is not None:
            return self.end
        if source == SOURCE_PROCESSING and self.processing_time is not None:
            return self.processing_time
        if source == SOURCE_OCCURRENCE:
            return counted(self.count)
        raise MissingFieldError(self.element, measure, source)


def fold_occurrences(records: list[LogRecord]) -> FoldedOccurrence:
    """Fold rows of one (element, process id) pair; exact repeats collapse
    first, so a re-logged row never double-counts."""
    rows = dedup_records(records)
    if not rows:
        raise ValueError("fold_occurrences needs at least one record")
    element = rows[0].object
    pid = rows[0].process_id
    starts = [r.start for r in rows if r.start is not None]
    ends = [r.end for r in rows if r.end is not None]
    pts = [r.processing_time for r in rows if r.processing_time is not None]
    last_start = None
    for r in rows:  # ascending by No: the last one wins
        if r.start is not None:
            last_start = r.start
    return FoldedOccurrence(
        element=element,
        process_id=pid,
        start=min(starts, key=lambda q: q.in_base()) if starts else None,
        end=max(ends, key=lambda q: q.in_base()) if ends else None,
        processing_time=duration(sum(p.in_base() for p in pts)) if pts else None,
        count=len(rows),
        rows=tuple(r.no for r in rows),
        last_start=last_start,
    )


# ---------------------------------------------------------------------------
# Instance evaluation
# ---------------------------------------------------------------------------

def _anchor(fold: FoldedOccurrence, is_container: bool) -> Quantity | None:
    """When an element's occurrence counts as complete for availability."""
    if is_container:
        return fold.end or fold.last_start or fold.start
    return fold.last_start or fold.end or fold.start


def _topo_emit(graph: MeasureGraph, scope: str) -> list[MeasureNode]:
    """Structural order, minimally adjusted so dependencies come first."""
    keys = graph.scope_order.get(scope, ())
    nodes = [graph.nodes[k] for k in keys]
    index = {n.key: n.order for n in nodes}
    pending: dict[NodeKey, set[NodeKey]] = {
        n.key: {d for d in n.deps if d in index} for n in nodes
    }
    waiting_on: dict[NodeKey, list[NodeKey]] = {}
    for n in nodes:
        for dep in pending[n.key]:
            waiting_on.setdefault(dep, []).append(n.key)
    ready = [index[k] for k, deps in pending.items() if not deps]
    heapq.heapify(ready)
    out: list[MeasureNode] = []
    emitted: set[NodeKey] = set()
    while ready:
        node = nodes[heapq.heappop(ready)]
        out.append(node)
        emitted.add(node.key)
        for waiter in waiting_on.get(node.key, ()):
            deps = pending[waiter]
            deps.discard(node.key)
            if not deps and waiter not in emitted:
                heapq.heappush(ready, index[waiter])
    return out  # nodes on cycles never become ready and are left out


def _instance_records(model: ProcessModel, log: ExecutionLog, scope: str,
                      process_id: str) -> dict[str, list[LogRecord]]:
    proc = model.process(scope)
    wanted = {proc.name: "Business Process"}
    for child in proc.children:
        if isinstance(child, Task):
            wanted[child.name] = "Task"
        elif isinstance(child, Decision):
            wanted[child.name] = "Decision"
    by_element: dict[str, list[LogRecord]] = {}
    for record in log.records:
        if record.process_id != process_id:
            continue
        if wanted.get(record.object) == record.object_type:
            by_element.setdefault(record.object, []).append(record)
    return by_element


def _evaluate_group(model: ProcessModel, log: ExecutionLog, registry: Registry,
                    graph: MeasureGraph, scope: str, process_id: str) -> InstanceGroup:
    group = InstanceGroup(scope, process_id)
    rows = _instance_records(model, log, scope, process_id)
    if scope not in rows:
        raise UnknownInstanceError(process_id, scope)
    folds = {name: fold_occurrences(records) for name, records in rows.items()}

    values: dict[NodeKey, Quantity] = {}
    times: dict[NodeKey, Quantity] = {}
    numbers: dict[NodeKey, int] = {}

    def diag(level: str, rule: str, key: NodeKey, message: str) -> None:
        group.diagnostics.append(Diagnostic(level, rule, "/".join(key) + f"@{process_id}", message))

    for node in _topo_emit(graph, scope):
        element = node.key[1]
        fold = folds.get(element)
        sources: tuple[int, ...] = ()
        if node.resolved is None:
            if fold is None:
                continue  # the element never executed in this instance
            try:
                value = fold.value_for(node.source, node.kind.name)
            except MissingFieldError as exc:
                if node.is_container and node.source == SOURCE_END:
                    diag(LEVEL_WARNING, "INCOMPLETE", node.key,
                         "instance has not finished; end-dependent measures are skipped")
                else:
                    diag(LEVEL_ERROR, "MISSING_FIELD", node.key, str(exc))
                continue
            if node.source in (SOURCE_START, SOURCE_END):
                time = value
            else:
                time = _anchor(fold, node.is_container) or value
        else:
            if fold is None:
                continue  # derived measures need their element to have run
            used: list[NodeKey] = []

            def bind(ref: Ref) -> Quantity | None:
                dep = (scope, ref.target.name, ref.measure)
                bound = values.get(dep)
                if bound is not None:
                    used.append(dep)
                return bound

            try:
                value = eval_expr(node.resolved, bind)
            except BpMeasureError as exc:
                rule = type(exc).__name__.removesuffix("Error").upper()
                skipped = any(d not in values and d in graph.nodes for d in node.deps)
                level = LEVEL_WARNING if skipped else LEVEL_ERROR
                diag(level, rule if not skipped else "SKIPPED_DEPENDENT", node.key, str(exc))
                continue
            anchor = _anchor(fold, node.is_container)
            candidates = [times[d] for d in used] + ([anchor] if anchor else [])
            time = max(candidates, key=lambda q: q.in_base())
            sources = tuple(sorted({numbers[d] for d in used}))
        try:
            value = convert(value, node.annotation.unit)
        except BpMeasureError as exc:
            diag(LEVEL_ERROR, "DIMENSION_MISMATCH", node.key, str(exc))
            continue
        number = len(group.instances) + 1
        values[node.key] = value
        times[node.key] = time
        numbers[node.key] = number
        group.instances.append(MeasureInstance(
            no=number,
            object_type=node.object_type,
            object=element,
            measure_text=node.annotation.canonical_text(),
            value=value,
            time=time,
            sources=sources,
        ))
    return group


def evaluate_instance(model: ProcessModel, log: ExecutionLog, registry: Registry,
                      scope: str, process_id: str,
                      graph: MeasureGraph | None = None) -> list[MeasureInstance]:
    """Evaluate one process instance; error-level problems raise."""
    if graph is None:
        graph = build_measure_graph(model, registry)
    group = _evaluate_group(model, log, registry, graph, scope, process_id)
    for diagnostic in group.diagnostics:
        if diagnostic.level == LEVEL_ERROR:
            raise BpMeasureError(str(diagnostic))
    return group.instances


def evaluate_all(model: ProcessModel, log: ExecutionLog,
                 registry: Registry) -> list[InstanceGroup]:
    """Every measure-carrying scope, every instance that ran it; instance ids
    keep first-appearance order and per-instance problems stay per-group."""
    from .logs import instances as log_instances

    graph = build_measure_graph(model, registry)
    groups: list[InstanceGroup] = []
    ids = log_instances(log)
    for proc in model.processes:
        if proc.name not in graph.scope_order:
            continue
        for pid in ids:
            try:
                groups.append(_evaluate_group(model, log, registry, graph, proc.name, pid))
            except UnknownInstanceError:
                continue  # this instance never entered this scope
    return groups


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

TABLE_HEADER = ("No", "Object Type", "Object", "Measure Declaration Unit",
                "Value", "Time", "Source No")


def render_table(table: list[InstanceGroup]) -> str:
    """Measure-instance CSV; groups follow each other with numbering
    restarting at 1 (each group opens with its container's instances)."""
    import csv
    import io

    from .units import format_time_point, format_value

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for group in table:
        for inst in group.instances:
            writer.writerow([
                inst.no,
                inst.object_type,
                inst.object,
                inst.measure_text,
                format_value(inst.value),
                format_time_point(inst.time),
                ",".join(str(s) for s in inst.sources) if inst.sources else "-",
            ])
    return buf.getvalue()
