"""Domain types for hierarchical business process nets and their validator.

A model is a finite tree of process nets: every process owns typed input and
output ports, a net wires member processes through directed channels, and a
decomposed process is linked to its subnet through an interface binding.  All
values are immutable; every operation in this package is a pure function from
model to result.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional, Union

from .errors import CycleDetectedError, NoNetError, UnknownProcessError

ProcessId = str
PortId = str

INPUT = "in"
OUTPUT = "out"

SEQUENCE = "seq"
SET = "set"
COLLECTION_KINDS = (SEQUENCE, SET)


# --- sorts -----------------------------------------------------------------


@dataclass(frozen=True)
class AtomicSort:
    name: str


@dataclass(frozen=True)
class RecordSort:
    """Record of named component sorts; field order is structural."""

    fields: tuple[tuple[str, "Sort"], ...]

    def field_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.fields)

    def field_sort(self, name: str) -> Optional["Sort"]:
        for fname, fsort in self.fields:
            if fname == name:
                return fsort
        return None


@dataclass(frozen=True)
class CollectionSort:
    kind: str  # "seq" or "set"
    element: "Sort"


Sort = Union[AtomicSort, RecordSort, CollectionSort]


@functools.lru_cache(maxsize=4096)
def _sort_problems_cached(sort: Sort) -> tuple[str, ...]:
    problems: list[str] = []
    if isinstance(sort, RecordSort):
        if not sort.fields:
            problems.append("record sort has no fields")
        names = [name for name, _ in sort.fields]
        for name in sorted(set(n for n in names if names.count(n) > 1)):
            problems.append(f"record field {name!r} duplicated")
        for _, fsort in sort.fields:
            problems.extend(_sort_problems_cached(fsort))
    elif isinstance(sort, CollectionSort):
        if sort.kind not in COLLECTION_KINDS:
            problems.append(f"unknown collection kind {sort.kind!r}")
        problems.extend(_sort_problems_cached(sort.element))
    return tuple(problems)


def sort_problems(sort: Sort) -> list[str]:
    """Structural defects of a sort value (empty or duplicated record fields)."""
    return list(_sort_problems_cached(sort))


def sorts_compatible(a: Sort | None, b: Sort | None) -> bool:
    """Whether two port sorts may sit on the two ends of a channel.

    Underspecification is permitted: a missing sort is compatible with
    anything.  Two specified sorts must be structurally equal.
    """
    if a is None or b is None:
        return True
    return a == b


def render_sort(sort: Sort) -> str:
    """Structural text form of a sort, matching the model file grammar."""
    if isinstance(sort, AtomicSort):
        return sort.name
    if isinstance(sort, CollectionSort):
        return f"{sort.kind} {render_sort(sort.element)}"
    inner = ", ".join(f"{name}: {render_sort(fsort)}" for name, fsort in sort.fields)
    return f"record {{ {inner} }}"


# --- firing rules ----------------------------------------------------------


@dataclass(frozen=True)
class FiringRule:
    """Executable stand-in for a process behavior relation.

    ``needs`` lists the (input port, fragment label) pairs that must all be
    present before the rule fires; ``produces`` lists the (output port,
    label) pairs it emits.  ``compute`` names a pure payload function from
    the sim module's registry.
    """

    needs: tuple[tuple[PortId, str], ...]
    produces: tuple[tuple[PortId, str], ...]
    compute: str = "tag"


WHOLE = "whole"


# --- processes, nets, models -----------------------------------------------


@dataclass(frozen=True)
class Port:
    id: PortId
    name: str
    direction: str  # INPUT or OUTPUT
    owner: ProcessId
    sort: Sort | None = None


@dataclass(frozen=True)
class Process:
    id: ProcessId
    name: str
    inputs: tuple[PortId, ...] = ()
    outputs: tuple[PortId, ...] = ()
    behavior_note: str = ""
    firing_rules: tuple[FiringRule, ...] = ()

    def ports(self) -> tuple[PortId, ...]:
        return self.inputs + self.outputs


@dataclass(frozen=True)
class Channel:
    source: PortId
    dest: PortId


@dataclass(frozen=True)
class ProcessNet:
    """A net (P, C, I, O): member processes, channels, and the env boundary."""

    processes: frozenset[ProcessId] = frozenset()
    channels: frozenset[Channel] = frozenset()
    env_inputs: frozenset[PortId] = frozenset()
    env_outputs: frozenset[PortId] = frozenset()


@dataclass(frozen=True)
class InterfaceBinding:
    """Direction-preserving bijection: parent port <-> subnet boundary port."""

    pairs: tuple[tuple[PortId, PortId], ...] = ()

    @staticmethod
    def of(mapping: Mapping[PortId, PortId]) -> "InterfaceBinding":
        return InterfaceBinding(tuple(sorted(mapping.items())))

    def to_subnet(self) -> dict[PortId, PortId]:
        return {parent: inner for parent, inner in self.pairs}

    def to_parent(self) -> dict[PortId, PortId]:
        return {inner: parent for parent, inner in self.pairs}


@dataclass(frozen=True)
class Model:
    """A root process plus a tree-shaped assignment of nets to processes."""

    sort_table: Mapping[str, Sort]
    processes: Mapping[ProcessId, Process]
    ports: Mapping[PortId, Port]
    root: ProcessId
    nets: Mapping[ProcessId, tuple[ProcessNet, InterfaceBinding]]

    def process(self, pid: ProcessId) -> Process:
        try:
            return self.processes[pid]
        except KeyError:
            raise UnknownProcessError(f"unknown process {pid!r}") from None

    def port(self, pid: PortId) -> Port:
        return self.ports[pid]

    def net_of(self, owner: ProcessId) -> tuple[ProcessNet, InterfaceBinding]:
        self.process(owner)
        try:
            return self.nets[owner]
        except KeyError:
            raise NoNetError(f"process {owner!r} has no net") from None


def container_index(model: Model) -> dict[ProcessId, ProcessId]:
    """Map each process to the owner of the net containing it."""
    index: dict[ProcessId, ProcessId] = {}
    for owner, (net, _) in model.nets.items():
        for member in net.processes:
            index.setdefault(member, owner)
    return index


def containing_net(
    model: Model, pid: ProcessId
) -> tuple[ProcessId, ProcessNet, InterfaceBinding] | None:
    for owner, (net, binding) in model.nets.items():
        if pid in net.processes:
            return owner, net, binding
    return None


def display_path(model: Model, pid: ProcessId) -> tuple[str, ...]:
    """Names from the root to a process, as used in the text format."""
    located = container_index(model)
    names: list[str] = []
    cur = pid
    seen: set[ProcessId] = set()
    while True:
        proc = model.processes.get(cur)
        names.append(proc.name if proc is not None else cur)
        if cur == model.root or cur in seen:
            break
        seen.add(cur)
        parent = located.get(cur)
        if parent is None:
            break
        cur = parent
    return tuple(reversed(names))


def resolve_path(model: Model, path: tuple[str, ...]) -> ProcessId:
    """Process id for a dotted name path starting at the root."""
    if not path:
        raise UnknownProcessError("empty process path")
    root = model.processes.get(model.root)
    if root is None or root.name != path[0]:
        raise UnknownProcessError(f"path must start at the root process, got {path[0]!r}")
    cur = model.root
    for name in path[1:]:
        entry = model.nets.get(cur)
        if entry is None:
            raise UnknownProcessError(
                f"process {'.'.join(path)!r}: {model.processes[cur].name!r} has no net"
            )
        net, _ = entry
        matches = sorted(
            m
            for m in net.processes
            if m in model.processes and model.processes[m].name == name
        )
        if not matches:
            raise UnknownProcessError(f"no process named {name!r} in net of {cur!r}")
        cur = matches[0]
    return cur


def port_by_name(model: Model, pid: ProcessId, name: str) -> PortId | None:
    proc = model.processes.get(pid)
    if proc is None:
        return None
    for port_id in proc.ports():
        port = model.ports.get(port_id)
        if port is not None and port.name == name:
            return port_id
    return None


def format_port(model: Model, pid: PortId) -> str:
    """Render a port as ``name^{process-name}`` for diagnostics and traces."""
    port = model.ports.get(pid)
    if port is None:
        return pid
    proc = model.processes.get(port.owner)
    owner = proc.name if proc is not None else port.owner
    return f"{port.name}^{{{owner}}}"


def fresh_id(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    if base not in taken:
        return base
    for n in itertools.count(2):
        candidate = f"{base}~{n}"
        if candidate not in taken:
            return candidate


def fresh_name(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    if base not in taken:
        return base
    for n in itertools.count(2):
        candidate = f"{base}_{n}"
        if candidate not in taken:
            return candidate


# --- violations -------------------------------------------------------------

PORT_CLASH = "PortClash"
DANGLING_REF = "DanglingRef"
INPUT_BOTH_INTERNAL_AND_ENV = "InputBothInternalAndEnv"
INPUT_MULTIPLY_DRIVEN = "InputMultiplyDriven"
INPUT_UNCONNECTED = "InputUnconnected"
SORT_MISMATCH = "SortMismatch"
CYCLE_DETECTED = "CycleDetected"
BINDING_INCOMPLETE = "BindingIncomplete"
BINDING_SORT_MISMATCH = "BindingSortMismatch"
HIERARCHY_NOT_TREE = "HierarchyNotTree"
SELF_LOOP = "SelfLoop"

VIOLATION_CODES = frozenset(
    {
        PORT_CLASH,
        DANGLING_REF,
        INPUT_BOTH_INTERNAL_AND_ENV,
        INPUT_MULTIPLY_DRIVEN,
        INPUT_UNCONNECTED,
        SORT_MISMATCH,
        CYCLE_DETECTED,
        BINDING_INCOMPLETE,
        BINDING_SORT_MISMATCH,
        HIERARCHY_NOT_TREE,
        SELF_LOOP,
    }
)


@dataclass(frozen=True)
class Violation:
    code: str
    location: tuple[str, ...]
    message: str

    def __post_init__(self) -> None:
        assert self.code in VIOLATION_CODES, f"unknown violation code {self.code!r}"
        assert self.location, "a violation must name at least one location"

    def __str__(self) -> str:
        return f"{self.code} {','.join(self.location)}: {self.message}"


# --- process-level dependency graph -----------------------------------------


def process_digraph(
    model: Model, net: ProcessNet, include_self: bool = False
) -> dict[ProcessId, set[ProcessId]]:
    """Successor map between member processes induced by the net's channels.

    Self-loop channels are cycles of length one; they are included only when
    ``include_self`` is set (the validator reports them separately).
    """
    graph: dict[ProcessId, set[ProcessId]] = {p: set() for p in net.processes}
    for ch in net.channels:
        src = model.ports.get(ch.source)
        dst = model.ports.get(ch.dest)
        if src is None or dst is None:
            continue
        if src.owner in graph and dst.owner in graph:
            if src.owner != dst.owner or include_self:
                graph[src.owner].add(dst.owner)
    return graph


def find_cycle(graph: Mapping[ProcessId, set[ProcessId]]) -> list[ProcessId] | None:
    """A directed cycle in the successor map, or None when acyclic."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {node: WHITE for node in graph}
    stack: list[ProcessId] = []

    def visit(node: ProcessId) -> list[ProcessId] | None:
        color[node] = GREY
        stack.append(node)
        for succ in sorted(graph[node]):
            if color[succ] == GREY:
                return stack[stack.index(succ) :]
            if color[succ] == WHITE:
                cycle = visit(succ)
                if cycle is not None:
                    return cycle
        stack.pop()
        color[node] = BLACK
        return None

    for node in sorted(graph):
        if color[node] == WHITE:
            cycle = visit(node)
            if cycle is not None:
                return list(cycle)
    return None


def serialize_order(model: Model, owner: ProcessId) -> dict[ProcessId, int]:
    """Injective numbering of the net's processes increasing along channels.

    Kahn's algorithm with lexicographic (name, id) tie-breaking among ready
    processes, so the witness is deterministic.  Raises CycleDetectedError
    with a witness cycle when no such numbering exists.
    """
    net, _ = model.net_of(owner)
    graph = process_digraph(model, net, include_self=True)
    indegree = {node: 0 for node in graph}
    for node, succs in graph.items():
        for succ in succs:
            indegree[succ] += 1

    def key(pid: ProcessId) -> tuple[str, str]:
        proc = model.processes.get(pid)
        return (proc.name if proc else pid, pid)

    ready = sorted((p for p, d in indegree.items() if d == 0), key=key)
    order: dict[ProcessId, int] = {}
    rank = 1
    while ready:
        node = ready.pop(0)
        order[node] = rank
        rank += 1
        freed = []
        for succ in graph[node]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                freed.append(succ)
        ready = sorted(ready + freed, key=key)
    if len(order) != len(graph):
        remaining = {
            n: {s for s in succs if s not in order}
            for n, succs in graph.items()
            if n not in order
        }
        cycle = find_cycle(remaining) or sorted(remaining)
        raise CycleDetectedError(
            f"net of {owner!r} admits no serialization", list(cycle)
        )
    return order


def abstract_net(model: Model, owner: ProcessId) -> tuple[frozenset[PortId], frozenset[PortId]]:
    """The black-box view of a decomposed process: its subnet's boundary sets."""
    net, _ = model.net_of(owner)
    return net.env_inputs, net.env_outputs


# --- validation --------------------------------------------------------------


def _check_sort_values(model: Model) -> Iterator[Violation]:
    for name in sorted(model.sort_table):
        for problem in sort_problems(model.sort_table[name]):
            yield Violation(SORT_MISMATCH, (name,), f"malformed sort: {problem}")
    for pid in sorted(model.ports):
        port = model.ports[pid]
        if port.sort is not None:
            for problem in sort_problems(port.sort):
                yield Violation(SORT_MISMATCH, (pid,), f"malformed port sort: {problem}")


def _check_port_tables(model: Model) -> Iterator[Violation]:
    listed_by: dict[PortId, list[tuple[ProcessId, str]]] = {}
    for pid in sorted(model.processes):
        proc = model.processes[pid]
        seen_names: dict[str, PortId] = {}
        for direction, port_ids in ((INPUT, proc.inputs), (OUTPUT, proc.outputs)):
            for port_id in port_ids:
                listed_by.setdefault(port_id, []).append((pid, direction))
                port = model.ports.get(port_id)
                if port is None:
                    yield Violation(
                        DANGLING_REF, (pid, port_id), "process lists an undefined port"
                    )
                    continue
                if port.owner != pid:
                    yield Violation(
                        PORT_CLASH,
                        (pid, port_id),
                        f"port is owned by {port.owner!r} but listed by {pid!r}",
                    )
                elif port.direction != direction:
                    yield Violation(
                        PORT_CLASH,
                        (pid, port_id),
                        f"port direction {port.direction!r} listed under {direction!r}",
                    )
                if port.name in seen_names and seen_names[port.name] != port_id:
                    yield Violation(
                        PORT_CLASH,
                        (pid, port_id),
                        f"duplicate port name {port.name!r} on process",
                    )
                seen_names.setdefault(port.name, port_id)
    for port_id in sorted(listed_by):
        listers = listed_by[port_id]
        if len(listers) > 1:
            yield Violation(
                PORT_CLASH,
                (port_id,) + tuple(p for p, _ in listers),
                "port listed by more than one process interface entry",
            )
    for port_id in sorted(model.ports):
        port = model.ports[port_id]
        owner = model.processes.get(port.owner)
        if owner is None:
            yield Violation(
                DANGLING_REF, (port_id,), f"port owner {port.owner!r} is undefined"
            )
        elif port_id not in owner.ports():
            yield Violation(
                DANGLING_REF, (port_id,), "port is not listed by its owner's interface"
            )


def _check_firing_rules(model: Model) -> Iterator[Violation]:
    for pid in sorted(model.processes):
        proc = model.processes[pid]
        inputs, outputs = set(proc.inputs), set(proc.outputs)
        for rule in proc.firing_rules:
            for port_id, label in rule.needs:
                yield from _check_rule_ref(model, pid, port_id, label, inputs, "needs")
            for port_id, label in rule.produces:
                yield from _check_rule_ref(model, pid, port_id, label, outputs, "produces")


def _check_rule_ref(
    model: Model,
    pid: ProcessId,
    port_id: PortId,
    label: str,
    allowed: set[PortId],
    side: str,
) -> Iterator[Violation]:
    if port_id not in allowed:
        expected = "input" if side == "needs" else "output"
        yield Violation(
            DANGLING_REF,
            (pid, port_id),
            f"firing rule {side} {port_id!r}, which is not an {expected} port of the process",
        )
        return
    port = model.ports.get(port_id)
    if port is None:
        return
    if label == WHOLE:
        return
    if not isinstance(port.sort, RecordSort) or port.sort.field_sort(label) is None:
        yield Violation(
            DANGLING_REF,
            (pid, port_id),
            f"firing rule uses label {label!r} which is not a record field of the port sort",
        )


def _member_name_violations(
    model: Model, owner: ProcessId, net: ProcessNet
) -> Iterator[Violation]:
    names_seen: dict[str, ProcessId] = {}
    for member in sorted(net.processes):
        proc = model.processes.get(member)
        if proc is None:
            continue
        if proc.name in names_seen and names_seen[proc.name] != member:
            yield Violation(
                PORT_CLASH,
                (owner, member, names_seen[proc.name]),
                f"duplicate process name {proc.name!r} within one net",
            )
        names_seen.setdefault(proc.name, member)


def _check_hierarchy(model: Model) -> Iterator[Violation]:
    if model.root not in model.processes:
        yield Violation(DANGLING_REF, (model.root,), "root process is undefined")
    membership: dict[ProcessId, list[ProcessId]] = {}
    for owner in sorted(model.nets):
        if owner not in model.processes:
            yield Violation(DANGLING_REF, (owner,), "net owner is undefined")
        net, _ = model.nets[owner]
        for member in sorted(net.processes):
            membership.setdefault(member, []).append(owner)
            if member not in model.processes:
                yield Violation(
                    DANGLING_REF, (owner, member), "net contains an undefined process"
                )
        yield from _member_name_violations(model, owner, net)
    for member in sorted(membership):
        owners = membership[member]
        if len(owners) > 1:
            yield Violation(
                HIERARCHY_NOT_TREE,
                (member,) + tuple(owners),
                "process contained in more than one net",
            )
    if model.root in membership:
        yield Violation(
            HIERARCHY_NOT_TREE,
            (model.root,),
            "root process must not be contained in any net",
        )
    parent = {m: owners[0] for m, owners in membership.items()}
    for pid in sorted(model.processes):
        if pid == model.root:
            continue
        if pid not in parent:
            yield Violation(
                HIERARCHY_NOT_TREE, (pid,), "process is not contained in any net"
            )
            continue
        seen = {pid}
        node = pid
        while node in parent:
            node = parent[node]
            if node in seen:
                yield Violation(
                    HIERARCHY_NOT_TREE,
                    tuple(sorted(seen)),
                    "containment relation is cyclic",
                )
                break
            seen.add(node)


def _net_body_violations(model: Model, net: ProcessNet, at: str) -> Iterator[Violation]:
    """Constraints 1-4 plus totality and reference integrity, sans binding."""
    members = sorted(net.processes)
    defined = [m for m in members if m in model.processes]
    for member in members:
        if member not in model.processes:
            yield Violation(DANGLING_REF, (at, member), "net member is undefined")
    member_set = set(defined)

    def resolvable(port_id: PortId) -> Port | None:
        return model.ports.get(port_id)

    usable_channels: list[Channel] = []
    self_loopers: list[ProcessId] = []
    for ch in sorted(net.channels, key=lambda c: (c.source, c.dest)):
        src, dst = resolvable(ch.source), resolvable(ch.dest)
        ok = True
        if src is None:
            yield Violation(DANGLING_REF, (at, ch.source), "channel source is undefined")
            ok = False
        if dst is None:
            yield Violation(DANGLING_REF, (at, ch.dest), "channel dest is undefined")
            ok = False
        if not ok:
            continue
        if src.direction != OUTPUT:
            yield Violation(
                DANGLING_REF, (at, ch.source), "channel source is not an output port"
            )
            ok = False
        if dst.direction != INPUT:
            yield Violation(
                DANGLING_REF, (at, ch.dest), "channel dest is not an input port"
            )
            ok = False
        if src.owner not in member_set:
            yield Violation(
                DANGLING_REF, (at, ch.source), "channel source is not on a member process"
            )
            ok = False
        if dst.owner not in member_set:
            yield Violation(
                DANGLING_REF, (at, ch.dest), "channel dest is not on a member process"
            )
            ok = False
        if ok and src.owner == dst.owner:
            yield Violation(
                SELF_LOOP,
                (src.owner, ch.source, ch.dest),
                "channel connects a process to itself",
            )
            self_loopers.append(src.owner)
            ok = False
        if ok:
            usable_channels.append(ch)
            if not sorts_compatible(src.sort, dst.sort):
                yield Violation(
                    SORT_MISMATCH,
                    (ch.source, ch.dest),
                    f"channel sorts differ: {render_sort(src.sort)} vs {render_sort(dst.sort)}",
                )

    for boundary, direction in ((net.env_inputs, INPUT), (net.env_outputs, OUTPUT)):
        for port_id in sorted(boundary):
            port = resolvable(port_id)
            if port is None:
                yield Violation(DANGLING_REF, (at, port_id), "boundary port is undefined")
            elif port.direction != direction or port.owner not in member_set:
                yield Violation(
                    DANGLING_REF,
                    (at, port_id),
                    f"boundary {direction}-entry is not an {direction}put port of a member",
                )

    driven: dict[PortId, int] = {}
    for ch in usable_channels:
        driven[ch.dest] = driven.get(ch.dest, 0) + 1
    for port_id in sorted(driven):
        if driven[port_id] > 1:
            yield Violation(
                INPUT_MULTIPLY_DRIVEN,
                (port_id,),
                f"input port driven by {driven[port_id]} channels",
            )
        if port_id in net.env_inputs:
            yield Violation(
                INPUT_BOTH_INTERNAL_AND_ENV,
                (port_id,),
                "input port is both a channel destination and an environment input",
            )
    for member in defined:
        for port_id in model.processes[member].inputs:
            if port_id not in driven and port_id not in net.env_inputs:
                yield Violation(
                    INPUT_UNCONNECTED,
                    (member, port_id),
                    "input port is neither channel-driven nor an environment input",
                )

    graph: dict[ProcessId, set[ProcessId]] = {p: set() for p in defined}
    for ch in usable_channels:
        s, d = model.ports[ch.source].owner, model.ports[ch.dest].owner
        if s != d:
            graph[s].add(d)
    for p in self_loopers:
        if p in graph:
            graph[p].add(p)
    cycle = find_cycle(graph)
    if cycle is not None:
        yield Violation(
            CYCLE_DETECTED,
            tuple(cycle),
            "channels induce a cyclic dependency between processes",
        )


def _binding_violations(
    model: Model, owner: ProcessId, net: ProcessNet, binding: InterfaceBinding
) -> Iterator[Violation]:
    proc = model.processes.get(owner)
    if proc is None:
        return
    boundary = net.env_inputs | net.env_outputs
    seen_parent: set[PortId] = set()
    seen_inner: set[PortId] = set()
    for parent_port, inner_port in sorted(binding.pairs):
        if parent_port in seen_parent:
            yield Violation(
                BINDING_INCOMPLETE, (owner, parent_port), "parent port bound twice"
            )
        if inner_port in seen_inner:
            yield Violation(
                BINDING_INCOMPLETE, (owner, inner_port), "boundary port bound twice"
            )
        seen_parent.add(parent_port)
        seen_inner.add(inner_port)
        pp, ip = model.ports.get(parent_port), model.ports.get(inner_port)
        if pp is None or pp.owner != owner:
            yield Violation(
                BINDING_INCOMPLETE,
                (owner, parent_port),
                "binding names a port that is not on the decomposed process",
            )
            continue
        if ip is None or inner_port not in boundary:
            yield Violation(
                BINDING_INCOMPLETE,
                (owner, inner_port),
                "binding names a port that is not on the subnet boundary",
            )
            continue
        expected = net.env_inputs if pp.direction == INPUT else net.env_outputs
        if inner_port not in expected:
            yield Violation(
                BINDING_INCOMPLETE,
                (owner, parent_port, inner_port),
                "binding does not preserve port direction",
            )
        both_unspecified = pp.sort is None and ip.sort is None
        if not both_unspecified and pp.sort != ip.sort:
            yield Violation(
                BINDING_SORT_MISMATCH,
                (parent_port, inner_port),
                "bound ports must both be unspecified or carry equal sorts",
            )
    for port_id in sorted(proc.ports()):
        if port_id not in seen_parent:
            yield Violation(
                BINDING_INCOMPLETE,
                (owner, port_id),
                "parent port is not bound to any subnet boundary port",
            )
    for port_id in sorted(boundary):
        if port_id not in seen_inner:
            yield Violation(
                BINDING_INCOMPLETE,
                (owner, port_id),
                "subnet boundary port is not bound to any parent port",
            )


def validate_net(model: Model, owner: ProcessId) -> list[Violation]:
    """All violations of the net owned by ``owner``.

    Covers reference integrity, the four net constraints (internal/env
    disjointness, unique drivers, channel sort fit, acyclicity), input
    totality, and consistency of the interface binding.  Output ports may
    feed any number of channels.
    """
    net, binding = model.net_of(owner)
    findings = list(_net_body_violations(model, net, owner))
    findings.extend(_binding_violations(model, owner, net, binding))
    return findings


def validate_scope(
    model: Model,
    owners: Iterable[ProcessId] = (),
    processes: Iterable[ProcessId] = (),
) -> list[Violation]:
    """Net-level and per-process checks restricted to the named scope.

    Sufficient after a rule application whose effects are confined to the
    given nets and processes, provided the input model was well-formed;
    ``validate_model`` remains the complete check.
    """
    findings: list[Violation] = []
    for pid in sorted(set(processes)):
        proc = model.processes.get(pid)
        if proc is None:
            findings.append(Violation(DANGLING_REF, (pid,), "process is undefined"))
            continue
        seen_names: dict[str, PortId] = {}
        for direction, port_ids in ((INPUT, proc.inputs), (OUTPUT, proc.outputs)):
            for port_id in port_ids:
                port = model.ports.get(port_id)
                if port is None:
                    findings.append(
                        Violation(DANGLING_REF, (pid, port_id), "process lists an undefined port")
                    )
                    continue
                if port.owner != pid or port.direction != direction:
                    findings.append(
                        Violation(PORT_CLASH, (pid, port_id), "port owner or direction mismatch")
                    )
                if port.name in seen_names and seen_names[port.name] != port_id:
                    findings.append(
                        Violation(
                            PORT_CLASH,
                            (pid, port_id),
                            f"duplicate port name {port.name!r} on process",
                        )
                    )
                seen_names.setdefault(port.name, port_id)
                if port.sort is not None:
                    for problem in sort_problems(port.sort):
                        findings.append(
                            Violation(SORT_MISMATCH, (port_id,), f"malformed port sort: {problem}")
                        )
        inputs, outputs = set(proc.inputs), set(proc.outputs)
        for rule in proc.firing_rules:
            for port_id, label in rule.needs:
                findings.extend(_check_rule_ref(model, pid, port_id, label, inputs, "needs"))
            for port_id, label in rule.produces:
                findings.extend(
                    _check_rule_ref(model, pid, port_id, label, outputs, "produces")
                )
    for owner in sorted(set(owners)):
        if owner not in model.processes or owner not in model.nets:
            continue
        net, binding = model.nets[owner]
        findings.extend(_member_name_violations(model, owner, net))
        findings.extend(_net_body_violations(model, net, owner))
        findings.extend(_binding_violations(model, owner, net, binding))
    return findings


def validate_model(model: Model) -> list[Violation]:
    """Union of per-net validation plus global id-uniqueness and tree checks."""
    findings: list[Violation] = []
    findings.extend(_check_sort_values(model))
    findings.extend(_check_port_tables(model))
    findings.extend(_check_firing_rules(model))
    findings.extend(_check_hierarchy(model))
    for owner in sorted(model.nets):
        if owner not in model.processes:
            continue
        net, binding = model.nets[owner]
        findings.extend(_net_body_violations(model, net, owner))
        findings.extend(_binding_violations(model, owner, net, binding))
    return findings


# --- sort expressions ---------------------------------------------------------


@dataclass(frozen=True)
class SortNameRef:
    name: str


@dataclass(frozen=True)
class RecordExpr:
    fields: tuple[tuple[str, "SortExpr"], ...]


@dataclass(frozen=True)
class CollectionExpr:
    kind: str
    element: "SortExpr"


SortExpr = Union[SortNameRef, RecordExpr, CollectionExpr]


def resolve_sort_expr(expr: SortExpr, table: Mapping[str, Sort]) -> Sort:
    """Resolve a textual sort expression against a table of declared sorts."""
    from .errors import UnknownSortNameError

    if isinstance(expr, SortNameRef):
        sort = table.get(expr.name)
        if sort is None:
            raise UnknownSortNameError(f"unknown sort name {expr.name!r}")
        return sort
    if isinstance(expr, CollectionExpr):
        return CollectionSort(expr.kind, resolve_sort_expr(expr.element, table))
    return RecordSort(
        tuple((name, resolve_sort_expr(fexpr, table)) for name, fexpr in expr.fields)
    )


# --- sort closure ------------------------------------------------------------


def port_closure(model: Model, start: PortId) -> set[PortId]:
    """Transitive closure of a port under {channel peer, binding partner}.

    This is the set of ports that must agree on a sort for constraints to
    keep holding, and the set that a split must traverse.
    """
    seen = {start}
    work = [start]
    located = container_index(model)
    while work:
        pid = work.pop()
        port = model.ports.get(pid)
        if port is None:
            continue
        neighbors: list[PortId] = []
        owner_container = located.get(port.owner)
        if owner_container is not None and owner_container in model.nets:
            net, binding = model.nets[owner_container]
            for ch in net.channels:
                if ch.source == pid:
                    neighbors.append(ch.dest)
                if ch.dest == pid:
                    neighbors.append(ch.source)
            upward = binding.to_parent().get(pid)
            if upward is not None:
                neighbors.append(upward)
        if port.owner in model.nets:
            downward = model.nets[port.owner][1].to_subnet().get(pid)
            if downward is not None:
                neighbors.append(downward)
        for n in neighbors:
            if n not in seen:
                seen.add(n)
                work.append(n)
    return seen


__all__ = [
    "AtomicSort",
    "RecordSort",
    "CollectionSort",
    "Sort",
    "FiringRule",
    "Port",
    "Process",
    "Channel",
    "ProcessNet",
    "InterfaceBinding",
    "Model",
    "Violation",
    "INPUT",
    "OUTPUT",
    "WHOLE",
    "SEQUENCE",
    "SET",
    "VIOLATION_CODES",
    "SortNameRef",
    "RecordExpr",
    "CollectionExpr",
    "SortExpr",
    "resolve_sort_expr",
    "sorts_compatible",
    "sort_problems",
    "render_sort",
    "validate_net",
    "validate_model",
    "serialize_order",
    "abstract_net",
    "process_digraph",
    "find_cycle",
    "port_closure",
    "containing_net",
    "container_index",
    "display_path",
    "resolve_path",
    "port_by_name",
    "format_port",
    "fresh_id",
    "fresh_name",
]
