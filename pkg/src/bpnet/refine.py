"""Refinement rules as total-or-rejected transformations of whole models.

Every rule is a pure function: it either returns a new, well-formed model or
raises a ``RuleError`` leaving the input untouched.  ``apply_script`` replays
an ordered list of rule invocations and accumulates a trace that records how
each original port is realized in the refined model (the ``~>`` map).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from . import core
from .core import (
    INPUT,
    OUTPUT,
    WHOLE,
    Channel,
    FiringRule,
    InterfaceBinding,
    Model,
    Port,
    PortId,
    Process,
    ProcessId,
    ProcessNet,
    RecordSort,
    Sort,
    SortExpr,
    resolve_sort_expr,
)
from .errors import (
    AlreadyDecomposedError,
    BpnError,
    ChildNotDecomposedError,
    CrossNetEndpointsError,
    EmptyGroupError,
    FreshnessViolationError,
    GroupNotSubsetError,
    InterfaceMismatchError,
    NoSuchChildError,
    NotConvexError,
    PartitionMismatchError,
    SortConflictError,
    SortMismatchError,
    StepFailedError,
    TooFewPartsError,
    UnknownPortError,
    WouldBeIllFormedError,
    WouldCreateCycleError,
)


# --- refinement bookkeeping --------------------------------------------------


@dataclass(frozen=True)
class PortRefinementMap:
    """The ``~>`` relation: original port to the set of ports refining it."""

    mapping: Mapping[PortId, frozenset[PortId]]

    def __getitem__(self, port: PortId) -> frozenset[PortId]:
        return self.mapping[port]


@dataclass(frozen=True)
class _Repl:
    """One replacement of a port: where it went and which labels it carries.

    ``fields is None`` means the replacement carries every label unchanged
    (a binding push-down); otherwise the replacement is a split part that
    carries the listed record fields, as label ``whole`` when ``bare``.
    """

    port: PortId
    fields: frozenset[str] | None = None
    bare: bool = False


@dataclass(frozen=True)
class _Subst:
    ports: Mapping[PortId, tuple[_Repl, ...]] = field(default_factory=dict)
    procs: Mapping[ProcessId, frozenset[ProcessId]] = field(default_factory=dict)


def _map_fragment(repls: tuple[_Repl, ...], label: str) -> list[tuple[PortId, str]]:
    if len(repls) == 1 and repls[0].fields is None and not repls[0].bare:
        return [(repls[0].port, label)]
    if label == WHOLE:
        return [(r.port, WHOLE) for r in repls]
    out = []
    for r in repls:
        if r.fields is not None and label in r.fields:
            out.append((r.port, WHOLE if r.bare else label))
    if not out:
        out = [(r.port, label) for r in repls]
    return out


@dataclass(frozen=True)
class TraceStep:
    rule: str
    params: str
    port_map: Mapping[PortId, frozenset[PortId]]
    process_map: Mapping[ProcessId, frozenset[ProcessId]]


class Trace:
    """Accumulated witness of a script replay.

    ``port_map`` maps every port of the base model to the ports realizing it
    at the deepest refinement level of the current model; ``process_map``
    does the same for processes.  ``fragment_image`` additionally follows
    record-field labels through port splits.
    """

    def __init__(self, base: Model):
        self.base = base
        self.steps: list[TraceStep] = []
        self._substs: list[_Subst] = []
        self._port_map: dict[PortId, frozenset[PortId]] = {
            p: frozenset({p}) for p in base.ports
        }
        self._proc_map: dict[ProcessId, frozenset[ProcessId]] = {
            p: frozenset({p}) for p in base.processes
        }

    def record(self, rule: str, params: str, subst: _Subst) -> None:
        self._substs.append(subst)
        if subst.ports:
            for origin, image in self._port_map.items():
                if any(p in subst.ports for p in image):
                    new = set()
                    for p in image:
                        if p in subst.ports:
                            new.update(r.port for r in subst.ports[p])
                        else:
                            new.add(p)
                    self._port_map[origin] = frozenset(new)
        if subst.procs:
            for origin, image in self._proc_map.items():
                if any(p in subst.procs for p in image):
                    new = set()
                    for p in image:
                        new.update(subst.procs.get(p, {p}))
                    self._proc_map[origin] = frozenset(new)
        self.steps.append(
            TraceStep(rule, params, dict(self._port_map), dict(self._proc_map))
        )

    def port_map(self) -> PortRefinementMap:
        return PortRefinementMap(dict(self._port_map))

    def port_image(self, port: PortId) -> frozenset[PortId]:
        return self._port_map[port]

    def process_image(self, pid: ProcessId) -> frozenset[ProcessId]:
        return self._proc_map[pid]

    def fragment_image(self, port: PortId, label: str) -> frozenset[tuple[PortId, str]]:
        frontier = {(port, label)}
        for subst in self._substs:
            if not subst.ports:
                continue
            nxt: set[tuple[PortId, str]] = set()
            for p, lab in frontier:
                repls = subst.ports.get(p)
                if repls is None:
                    nxt.add((p, lab))
                else:
                    nxt.update(_map_fragment(repls, lab))
            frontier = nxt
        return frozenset(frontier)

    def __len__(self) -> int:
        return len(self.steps)


# --- shared helpers -----------------------------------------------------------


def _validated(
    model: Model,
    context: str,
    owners: Iterable[ProcessId] | None = None,
    processes: Iterable[ProcessId] = (),
) -> Model:
    """Reject the result unless it is well-formed.

    Rules confine their effects to a few nets and processes, so they pass
    that scope; ``owners=None`` forces a whole-model validation.
    """
    if owners is None:
        violations = core.validate_model(model)
    else:
        violations = core.validate_scope(model, owners, processes)
    if violations:
        raise WouldBeIllFormedError(f"{context} would leave the model ill-formed", violations)
    return model


def _container_of(model: Model, pid: ProcessId) -> ProcessId | None:
    located = core.containing_net(model, pid)
    return located[0] if located is not None else None


def _require_port(model: Model, port: PortId) -> Port:
    p = model.ports.get(port)
    if p is None:
        raise UnknownPortError(f"unknown port {port!r}")
    return p


def _net_without_owner_check(model: Model, owner: ProcessId) -> tuple[ProcessNet, InterfaceBinding]:
    return model.net_of(owner)


def _check_sort_value(sort: Sort, context: str) -> None:
    problems = core.sort_problems(sort)
    if problems:
        raise WouldBeIllFormedError(f"{context}: malformed sort ({problems[0]})")


# --- decomposition ------------------------------------------------------------


def decompose_process(
    model: Model,
    pid: ProcessId,
    new_processes: Sequence[Process],
    new_ports: Sequence[Port],
    subnet: ProcessNet,
    binding: InterfaceBinding,
) -> Model:
    """Attach a fresh subnet to an undecomposed process.

    The binding must be a direction-preserving bijection between the ports
    of ``pid`` and the subnet boundary.  Sorts propagate across the new
    binding where exactly one side specifies them.
    """
    return _decompose(model, pid, new_processes, new_ports, subnet, binding)[0]


def _decompose(
    model: Model,
    pid: ProcessId,
    new_processes: Sequence[Process],
    new_ports: Sequence[Port],
    subnet: ProcessNet,
    binding: InterfaceBinding,
) -> tuple[Model, _Subst]:
    proc = model.process(pid)
    if pid in model.nets:
        raise AlreadyDecomposedError(f"process {pid!r} is already decomposed")

    new_proc_ids = [p.id for p in new_processes]
    new_port_ids = [p.id for p in new_ports]
    if len(set(new_proc_ids)) != len(new_proc_ids) or len(set(new_port_ids)) != len(new_port_ids):
        raise FreshnessViolationError("subnet declares duplicate ids")
    clashes = (set(new_proc_ids) & set(model.processes)) | (set(new_port_ids) & set(model.ports))
    if clashes:
        raise FreshnessViolationError(
            f"subnet reuses ids already present in the model: {sorted(clashes)[:3]}"
        )
    if set(subnet.processes) != set(new_proc_ids):
        raise FreshnessViolationError("subnet membership must be exactly the fresh processes")

    to_subnet = binding.to_subnet()
    boundary = subnet.env_inputs | subnet.env_outputs
    parent_ports = set(proc.ports())
    if set(to_subnet) != parent_ports or len(binding.pairs) != len(parent_ports):
        raise InterfaceMismatchError(
            f"binding must be total and injective on the ports of {pid!r}"
        )
    if set(to_subnet.values()) != set(boundary) or len(set(to_subnet.values())) != len(
        to_subnet
    ):
        raise InterfaceMismatchError("binding must map onto the subnet boundary")

    port_table = dict(model.ports)
    for port in new_ports:
        port_table[port.id] = port
    for parent_port, inner_port in binding.pairs:
        pp = port_table[parent_port]
        ip = port_table.get(inner_port)
        if ip is None:
            raise InterfaceMismatchError(f"binding names undeclared port {inner_port!r}")
        inner_boundary = subnet.env_inputs if pp.direction == INPUT else subnet.env_outputs
        if inner_port not in inner_boundary:
            raise InterfaceMismatchError(
                f"binding does not preserve direction for {parent_port!r}"
            )
        if pp.sort is not None and ip.sort is not None and pp.sort != ip.sort:
            raise InterfaceMismatchError(
                f"bound ports {parent_port!r} and {inner_port!r} carry different sorts"
            )
        # one-sided sorts propagate across the fresh binding
        if pp.sort is not None and ip.sort is None:
            port_table[inner_port] = replace(ip, sort=pp.sort)
        elif ip.sort is not None and pp.sort is None:
            port_table[parent_port] = replace(pp, sort=ip.sort)

    processes = dict(model.processes)
    for p in new_processes:
        processes[p.id] = p
    nets = dict(model.nets)
    nets[pid] = (subnet, binding)
    result = replace(model, processes=processes, ports=port_table, nets=nets)
    container = _container_of(model, pid)
    _validated(
        result,
        f"decomposing {pid!r}",
        owners=[pid] + ([container] if container else []),
        processes=[pid] + new_proc_ids,
    )
    subst = _Subst(
        ports={p: (_Repl(to_subnet[p]),) for p in proc.ports()},
        procs={pid: frozenset(subnet.processes)},
    )
    return result, subst


# --- adding channels -----------------------------------------------------------


@dataclass(frozen=True)
class Endpoint:
    """Names a port on a process; the port is created if it does not exist."""

    process: ProcessId
    port_name: str


def add_channel(model: Model, source: Endpoint, dest: Endpoint) -> Model:
    """Add a dataflow channel, adjusting every affected layer.

    Fresh ports are created where the named ports do not exist; a fresh port
    on a decomposed process is realized downward through its subnet, and
    endpoints in different subtrees are lifted to their lowest common net.
    """
    return _add_channel(model, source, dest)[0]


def _add_channel(model: Model, source: Endpoint, dest: Endpoint) -> tuple[Model, _Subst]:
    model.process(source.process)
    model.process(dest.process)
    if source.process == dest.process:
        raise WouldCreateCycleError("a channel may not connect a process to itself")

    located = core.container_index(model)

    def ancestors(pid: ProcessId) -> list[ProcessId]:
        chain = [pid]
        while chain[-1] in located:
            chain.append(located[chain[-1]])
        return chain

    anc_s, anc_d = ancestors(source.process), ancestors(dest.process)
    if source.process in anc_d or dest.process in anc_s:
        raise CrossNetEndpointsError("one endpoint process contains the other")
    common = next((a for a in anc_s if a in set(anc_d)), None)
    if common is None or common not in model.nets:
        raise CrossNetEndpointsError("endpoints do not share an enclosing net")
    child_s = anc_s[anc_s.index(common) - 1]
    child_d = anc_d[anc_d.index(common) - 1]

    ports = dict(model.ports)
    processes = dict(model.processes)
    nets = {owner: entry for owner, entry in model.nets.items()}
    touched_owners: set[ProcessId] = {common}
    touched_procs: set[ProcessId] = {source.process, dest.process}

    def add_port(pid: ProcessId, name: str, direction: str) -> PortId:
        touched_procs.add(pid)
        proc = processes[pid]
        taken_names = {ports[p].name for p in proc.ports() if p in ports}
        final_name = core.fresh_name(name, taken_names)
        port_id = core.fresh_id(f"{pid}:{final_name}", ports)
        ports[port_id] = Port(port_id, final_name, direction, pid)
        if direction == INPUT:
            processes[pid] = replace(proc, inputs=proc.inputs + (port_id,))
        else:
            processes[pid] = replace(proc, outputs=proc.outputs + (port_id,))
        return port_id

    def realize_down(pid: ProcessId, name: str, direction: str) -> PortId:
        """Create the port on ``pid`` and mirror it through decomposed layers."""
        port_id = add_port(pid, name, direction)
        cur_pid, cur_port = pid, port_id
        while cur_pid in nets:
            net, binding = nets[cur_pid]
            members = sorted(
                net.processes, key=lambda m: (processes[m].name if m in processes else m, m)
            )
            if not members:
                raise WouldBeIllFormedError(
                    f"cannot realize a fresh port inside the empty net of {cur_pid!r}"
                )
            member = members[0]
            inner = add_port(member, name, direction)
            if direction == INPUT:
                net = replace(net, env_inputs=net.env_inputs | {inner})
            else:
                net = replace(net, env_outputs=net.env_outputs | {inner})
            binding = InterfaceBinding(tuple(sorted(binding.pairs + ((cur_port, inner),))))
            nets[cur_pid] = (net, binding)
            touched_owners.add(cur_pid)
            cur_pid, cur_port = member, inner
        return port_id

    def resolve_endpoint(spec: Endpoint, direction: str) -> PortId:
        existing = core.port_by_name(model, spec.process, spec.port_name)
        if existing is not None:
            if model.ports[existing].direction != direction:
                raise WouldBeIllFormedError(
                    f"{spec.port_name!r} on {spec.process!r} is not an "
                    f"{'input' if direction == INPUT else 'output'} port"
                )
            return existing
        return realize_down(spec.process, spec.port_name, direction)

    src_port = resolve_endpoint(source, OUTPUT)
    dst_port = resolve_endpoint(dest, INPUT)
    if ports[src_port].sort is not None and ports[dst_port].sort is not None:
        if ports[src_port].sort != ports[dst_port].sort:
            raise SortMismatchError(
                f"channel endpoints carry different sorts: "
                f"{core.render_sort(ports[src_port].sort)} vs "
                f"{core.render_sort(ports[dst_port].sort)}"
            )

    def lift(pid: ProcessId, port_id: PortId, stop: ProcessId, direction: str) -> PortId:
        cur_pid, cur_port = pid, port_id
        while cur_pid != stop:
            owner = located[cur_pid]
            net, binding = nets[owner]
            if direction == INPUT:
                net = replace(net, env_inputs=net.env_inputs | {cur_port})
            else:
                net = replace(net, env_outputs=net.env_outputs | {cur_port})
            parent_port = add_port(owner, ports[cur_port].name, direction)
            binding = InterfaceBinding(
                tuple(sorted(binding.pairs + ((parent_port, cur_port),)))
            )
            nets[owner] = (net, binding)
            touched_owners.add(owner)
            cur_pid, cur_port = owner, parent_port
        return cur_port

    top_src = lift(source.process, src_port, child_s, OUTPUT)
    top_dst = lift(dest.process, dst_port, child_d, INPUT)

    net, binding = nets[common]
    new_net = replace(net, channels=net.channels | {Channel(top_src, top_dst)})
    nets[common] = (new_net, binding)

    candidate = replace(model, processes=processes, ports=ports, nets=nets)
    cycle = core.find_cycle(core.process_digraph(candidate, new_net))
    if cycle is not None:
        raise WouldCreateCycleError(
            f"channel would close the cycle {' -> '.join(cycle)} in the net of {common!r}"
        )

    # keep constraint 3 an invariant: propagate a one-sided sort over the closure
    closure = core.port_closure(candidate, src_port)
    specified = {ports[p].sort for p in closure if p in ports and ports[p].sort is not None}
    if len(specified) > 1:
        raise SortMismatchError("channel would connect ports with conflicting sorts")
    if len(specified) == 1:
        the_sort = next(iter(specified))
        for p in closure:
            if ports[p].sort is None:
                ports[p] = replace(ports[p], sort=the_sort)
        candidate = replace(candidate, ports=ports)

    for p in closure:
        owner_pid = ports[p].owner if p in ports else None
        if owner_pid is None:
            continue
        touched_procs.add(owner_pid)
        parent = _container_of(candidate, owner_pid)
        if parent is not None:
            touched_owners.add(parent)
        if owner_pid in candidate.nets:
            touched_owners.add(owner_pid)
    _validated(
        candidate, "adding the channel", owners=touched_owners, processes=touched_procs
    )
    return candidate, _Subst()


# --- data refinement ------------------------------------------------------------


def assign_sort(model: Model, port: PortId, sort: Sort) -> Model:
    """Assign a sort to a port and its whole peer/binding closure.

    Idempotent when the closure already carries the sort; rejected with
    ``SortConflictError`` when any closure member carries a different one.
    """
    return _assign_sort(model, port, sort)[0]


def _assign_sort(model: Model, port: PortId, sort: Sort) -> tuple[Model, _Subst]:
    _require_port(model, port)
    _check_sort_value(sort, "assign_sort")
    closure = core.port_closure(model, port)
    for member in sorted(closure):
        existing = model.ports[member].sort
        if existing is not None and existing != sort:
            raise SortConflictError(
                f"port {member!r} already carries sort {core.render_sort(existing)}"
            )
    unsorted = [m for m in closure if model.ports[m].sort is None]
    if not unsorted:
        return model, _Subst()
    ports = dict(model.ports)
    for member in unsorted:
        ports[member] = replace(ports[member], sort=sort)
    result = replace(model, ports=ports)
    owners: set[ProcessId] = set()
    procs: set[ProcessId] = set()
    for member in closure:
        owner_pid = model.ports[member].owner
        procs.add(owner_pid)
        parent = _container_of(result, owner_pid)
        if parent is not None:
            owners.add(parent)
        if owner_pid in result.nets:
            owners.add(owner_pid)
    _validated(result, "assigning the sort", owners=owners, processes=procs)
    return result, _Subst()


# --- channel decomposition --------------------------------------------------------


def split_port(
    model: Model, port: PortId, parts: Sequence[tuple[str, Sort | None]]
) -> tuple[Model, PortRefinementMap]:
    """Split a port (and its whole closure) into parallel parts.

    For a record-sorted port the part sorts must partition its fields; an
    unspecified port splits freely.  Channels, boundary memberships,
    interface bindings, and firing-rule references are rewritten at every
    affected level, and the returned map records original to refined ports.
    """
    result, subst = _split_port(model, port, parts)
    mapping = {
        old: frozenset(r.port for r in repls) for old, repls in subst.ports.items()
    }
    return result, PortRefinementMap(mapping)


def _partition_fields(
    sort: RecordSort, parts: Sequence[tuple[str, Sort | None]]
) -> list[tuple[frozenset[str], bool]]:
    """Assign record fields to parts; returns (field set, bare) per part."""
    claimed: set[str] = set()
    assignment: list[tuple[frozenset[str], bool]] = []
    for name, psort in parts:
        if psort is None:
            raise PartitionMismatchError(
                f"part {name!r} needs a sort when splitting a record port"
            )
        if isinstance(psort, RecordSort):
            expected = tuple(
                (fname, fsort) for fname, fsort in sort.fields if fname in psort.field_names()
            )
            if expected != psort.fields:
                raise PartitionMismatchError(
                    f"part {name!r} is not a field sub-record in original field order"
                )
            names = set(psort.field_names())
            if names & claimed:
                raise PartitionMismatchError(
                    f"fields {sorted(names & claimed)} covered by more than one part"
                )
            if not names:
                raise PartitionMismatchError(f"part {name!r} claims no fields")
            claimed |= names
            assignment.append((frozenset(names), False))
        else:
            match = next(
                (
                    fname
                    for fname, fsort in sort.fields
                    if fname not in claimed and fsort == psort
                ),
                None,
            )
            if match is None:
                raise PartitionMismatchError(
                    f"part {name!r} does not match any unclaimed record field"
                )
            claimed.add(match)
            assignment.append((frozenset({match}), True))
    missing = set(sort.field_names()) - claimed
    if missing:
        raise PartitionMismatchError(f"fields {sorted(missing)} not covered by any part")
    return assignment


def _split_port(
    model: Model, port: PortId, parts: Sequence[tuple[str, Sort | None]]
) -> tuple[Model, _Subst]:
    origin = _require_port(model, port)
    if len(parts) < 2:
        raise TooFewPartsError("a split needs at least two parts")
    part_names = [name for name, _ in parts]
    if len(set(part_names)) != len(part_names):
        raise PartitionMismatchError("part names must be distinct")
    for _, psort in parts:
        if psort is not None:
            _check_sort_value(psort, "split_port")

    if isinstance(origin.sort, RecordSort):
        assignment = _partition_fields(origin.sort, parts)
    elif origin.sort is None:
        assignment = [(None, False)] * len(parts)
    else:
        raise PartitionMismatchError(
            f"only record-sorted or unspecified ports can be split, "
            f"not {core.render_sort(origin.sort)}"
        )

    closure = sorted(core.port_closure(model, port))
    for member in closure:
        msort = model.ports[member].sort
        if msort is not None and msort != origin.sort:
            raise SortConflictError(
                f"closure member {member!r} carries a different sort; cannot split"
            )

    ports = dict(model.ports)
    processes = dict(model.processes)
    part_ids: dict[PortId, tuple[PortId, ...]] = {}

    for member in closure:
        old = ports[member]
        owner = processes[old.owner]
        other_names = {
            ports[p].name for p in owner.ports() if p != member and p in ports
        }
        ids = []
        for (name, psort) in parts:
            if name in other_names:
                raise FreshnessViolationError(
                    f"part name {name!r} clashes with an existing port on {old.owner!r}"
                )
            new_id = core.fresh_id(f"{old.owner}:{name}", ports)
            ports[new_id] = Port(new_id, name, old.direction, old.owner, psort)
            ids.append(new_id)
        part_ids[member] = tuple(ids)

    def splice(seq: tuple[PortId, ...], member: PortId) -> tuple[PortId, ...]:
        out: list[PortId] = []
        for p in seq:
            if p == member:
                out.extend(part_ids[member])
            else:
                out.append(p)
        return tuple(out)

    label_of_part: dict[int, tuple[frozenset[str] | None, bool]] = dict(enumerate(assignment))

    def rewrite_refs(
        refs: tuple[tuple[PortId, str], ...]
    ) -> tuple[tuple[PortId, str], ...]:
        out: list[tuple[PortId, str]] = []
        for ref_port, label in refs:
            if ref_port not in part_ids:
                out.append((ref_port, label))
                continue
            repls = part_ids[ref_port]
            if label == WHOLE:
                out.extend((p, WHOLE) for p in repls)
            else:
                routed = False
                for i, p in enumerate(repls):
                    fields, bare = label_of_part[i]
                    if fields is not None and label in fields:
                        out.append((p, WHOLE if bare else label))
                        routed = True
                if not routed:
                    out.extend((p, label) for p in repls)
        return tuple(dict.fromkeys(out))

    for member in closure:
        owner_id = ports[part_ids[member][0]].owner
        proc = processes[owner_id]
        proc = replace(
            proc,
            inputs=splice(proc.inputs, member),
            outputs=splice(proc.outputs, member),
            firing_rules=tuple(
                replace(r, needs=rewrite_refs(r.needs), produces=rewrite_refs(r.produces))
                for r in proc.firing_rules
            ),
        )
        processes[owner_id] = proc
        del ports[member]

    split_set = set(part_ids)

    def split_boundary(boundary: frozenset[PortId]) -> frozenset[PortId]:
        out = set()
        for p in boundary:
            if p in split_set:
                out.update(part_ids[p])
            else:
                out.add(p)
        return frozenset(out)

    nets = {}
    for owner, (net, binding) in model.nets.items():
        channels: set[Channel] = set()
        for ch in net.channels:
            if ch.source in split_set or ch.dest in split_set:
                if not (ch.source in split_set and ch.dest in split_set):
                    raise WouldBeIllFormedError(
                        f"channel {ch.source!r} -> {ch.dest!r} has only one split endpoint"
                    )
                channels.update(
                    Channel(s, d) for s, d in zip(part_ids[ch.source], part_ids[ch.dest])
                )
            else:
                channels.add(ch)
        pairs: list[tuple[PortId, PortId]] = []
        for parent_port, inner_port in binding.pairs:
            if parent_port in split_set or inner_port in split_set:
                if not (parent_port in split_set and inner_port in split_set):
                    raise WouldBeIllFormedError(
                        f"binding pair {parent_port!r} ~ {inner_port!r} split on one side only"
                    )
                pairs.extend(zip(part_ids[parent_port], part_ids[inner_port]))
            else:
                pairs.append((parent_port, inner_port))
        nets[owner] = (
            replace(
                net,
                channels=frozenset(channels),
                env_inputs=split_boundary(net.env_inputs),
                env_outputs=split_boundary(net.env_outputs),
            ),
            InterfaceBinding(tuple(sorted(pairs))),
        )

    result = replace(model, processes=processes, ports=ports, nets=nets)
    owners: set[ProcessId] = set()
    procs: set[ProcessId] = set()
    for member in closure:
        owner_pid = model.ports[member].owner
        procs.add(owner_pid)
        parent = _container_of(result, owner_pid)
        if parent is not None:
            owners.add(parent)
        if owner_pid in result.nets:
            owners.add(owner_pid)
    _validated(result, f"splitting {port!r}", owners=owners, processes=procs)
    subst_ports = {
        member: tuple(
            _Repl(p, assignment[i][0], assignment[i][1])
            for i, p in enumerate(part_ids[member])
        )
        for member in closure
    }
    return result, _Subst(ports=subst_ports)


# --- folding and unfolding --------------------------------------------------------


def unfold(model: Model, parent: ProcessId, child: ProcessId) -> Model:
    """Replace a decomposed member by the contents of its subnet."""
    return _unfold(model, parent, child)[0]


def _unfold(model: Model, parent: ProcessId, child: ProcessId) -> tuple[Model, _Subst]:
    net, parent_binding = model.net_of(parent)
    if child not in net.processes:
        raise NoSuchChildError(f"{child!r} is not a member of the net of {parent!r}")
    if child not in model.nets:
        raise ChildNotDecomposedError(f"{child!r} has no net to unfold")
    subnet, child_binding = model.nets[child]
    down = child_binding.to_subnet()
    child_ports = set(model.processes[child].ports())

    def rewire(port_id: PortId) -> PortId:
        return down.get(port_id, port_id) if port_id in child_ports else port_id

    merged = ProcessNet(
        processes=(net.processes - {child}) | subnet.processes,
        channels=frozenset(
            Channel(rewire(ch.source), rewire(ch.dest)) for ch in net.channels
        )
        | subnet.channels,
        env_inputs=frozenset(rewire(p) for p in net.env_inputs),
        env_outputs=frozenset(rewire(p) for p in net.env_outputs),
    )
    new_parent_binding = InterfaceBinding(
        tuple(sorted((pp, rewire(ip)) for pp, ip in parent_binding.pairs))
    )

    processes = {p: proc for p, proc in model.processes.items() if p != child}
    ports = {p: port for p, port in model.ports.items() if p not in child_ports}
    nets = {o: e for o, e in model.nets.items() if o != child}
    nets[parent] = (merged, new_parent_binding)
    result = replace(model, processes=processes, ports=ports, nets=nets)
    _validated(result, f"unfolding {child!r}", owners=[parent])
    subst = _Subst(
        ports={p: (_Repl(down[p]),) for p in sorted(child_ports)},
        procs={child: frozenset(subnet.processes)},
    )
    return result, subst


def fold(model: Model, owner: ProcessId, group: Iterable[ProcessId], new_name: str) -> Model:
    """Extract a convex process group of a net into a fresh decomposed process."""
    return _fold(model, owner, group, new_name)[0]


def _fold(
    model: Model, owner: ProcessId, group: Iterable[ProcessId], new_name: str
) -> tuple[Model, _Subst]:
    net, _ = model.net_of(owner)
    group = frozenset(group)
    if not group:
        raise EmptyGroupError("the folded group must be non-empty")
    if not group <= net.processes or group == net.processes:
        raise GroupNotSubsetError(
            "the folded group must be a proper subset of the net's processes"
        )

    graph = core.process_digraph(model, net)
    outside = net.processes - group
    for start in sorted(group):
        for first in sorted(graph.get(start, ())):
            if first in group:
                continue
            # path leaving the group must not re-enter it
            prev = {first: start}
            work = [first]
            seen = {first}
            while work:
                node = work.pop(0)
                for succ in sorted(graph.get(node, ())):
                    if succ in group:
                        witness = [succ, node]
                        while witness[-1] in prev:
                            witness.append(prev[witness[-1]])
                        raise NotConvexError(
                            "folding would create a cycle at the parent level",
                            list(reversed(witness)),
                        )
                    if succ in outside and succ not in seen:
                        seen.add(succ)
                        prev[succ] = node
                        work.append(succ)

    member_names = {
        model.processes[m].name for m in net.processes - group if m in model.processes
    }
    if new_name in member_names:
        raise FreshnessViolationError(
            f"process name {new_name!r} already used in the net of {owner!r}"
        )
    qid = core.fresh_id(f"{owner}.{new_name}", model.processes)

    def port_owner(pid: PortId) -> ProcessId:
        return model.ports[pid].owner

    internal, outer_channels = [], []
    crossing_in: list[Channel] = []
    crossing_out: list[Channel] = []
    for ch in sorted(net.channels, key=lambda c: (c.source, c.dest)):
        s_in, d_in = port_owner(ch.source) in group, port_owner(ch.dest) in group
        if s_in and d_in:
            internal.append(ch)
        elif d_in:
            crossing_in.append(ch)
        elif s_in:
            crossing_out.append(ch)
        else:
            outer_channels.append(ch)

    ports = dict(model.ports)
    q_inputs: list[PortId] = []
    q_outputs: list[PortId] = []
    q_port_names: set[str] = set()
    pairs: list[tuple[PortId, PortId]] = []
    replacement: dict[PortId, PortId] = {}

    def make_q_port(inner: PortId, direction: str) -> PortId:
        inner_port = ports[inner]
        name = core.fresh_name(inner_port.name, q_port_names)
        q_port_names.add(name)
        port_id = core.fresh_id(f"{qid}:{name}", ports)
        ports[port_id] = Port(port_id, name, direction, qid, inner_port.sort)
        (q_inputs if direction == INPUT else q_outputs).append(port_id)
        pairs.append((port_id, inner))
        replacement[inner] = port_id
        return port_id

    boundary_in = sorted(
        {ch.dest for ch in crossing_in} | {p for p in net.env_inputs if port_owner(p) in group}
    )
    for inner in boundary_in:
        make_q_port(inner, INPUT)
    boundary_out = sorted(
        {ch.source for ch in crossing_out}
        | {p for p in net.env_outputs if port_owner(p) in group}
    )
    for inner in boundary_out:
        make_q_port(inner, OUTPUT)

    new_channels = set(outer_channels)
    new_channels.update(Channel(ch.source, replacement[ch.dest]) for ch in crossing_in)
    new_channels.update(Channel(replacement[ch.source], ch.dest) for ch in crossing_out)

    parent_net = ProcessNet(
        processes=(net.processes - group) | {qid},
        channels=frozenset(new_channels),
        env_inputs=frozenset(replacement.get(p, p) for p in net.env_inputs),
        env_outputs=frozenset(replacement.get(p, p) for p in net.env_outputs),
    )
    extracted = ProcessNet(
        processes=group,
        channels=frozenset(internal),
        env_inputs=frozenset(boundary_in),
        env_outputs=frozenset(boundary_out),
    )

    processes = dict(model.processes)
    processes[qid] = Process(
        qid, new_name, inputs=tuple(q_inputs), outputs=tuple(q_outputs)
    )
    nets = dict(model.nets)
    _, owner_binding = nets[owner]
    owner_binding = InterfaceBinding(
        tuple(sorted((pp, replacement.get(ip, ip)) for pp, ip in owner_binding.pairs))
    )
    nets[owner] = (parent_net, owner_binding)
    nets[qid] = (extracted, InterfaceBinding(tuple(sorted(pairs))))
    result = replace(model, processes=processes, ports=ports, nets=nets)
    _validated(result, f"folding into {new_name!r}", owners=[owner, qid], processes=[qid])
    return result, _Subst()


# --- scripts -------------------------------------------------------------------


@dataclass(frozen=True)
class PortRef:
    """A port named by process path and port display name."""

    path: tuple[str, ...]
    port: str

    def __str__(self) -> str:
        return ".".join(self.path + (self.port,))


@dataclass(frozen=True)
class RuleSpec:
    process: str
    needs: tuple[tuple[str, str], ...]
    produces: tuple[tuple[str, str], ...]
    compute: str = "tag"


@dataclass(frozen=True)
class ProcessSpec:
    name: str
    inputs: tuple[tuple[str, SortExpr | None], ...] = ()
    outputs: tuple[tuple[str, SortExpr | None], ...] = ()
    note: str = ""


@dataclass(frozen=True)
class NetSpec:
    """Textual form of a subnet: members, wiring, and boundary binds."""

    members: tuple[ProcessSpec, ...] = ()
    channels: tuple[tuple[str, str, str, str], ...] = ()
    input_binds: tuple[tuple[str, str, str], ...] = ()  # member, member-port, parent-port
    output_binds: tuple[tuple[str, str, str], ...] = ()
    rules: tuple[RuleSpec, ...] = ()


def build_subnet(
    model: Model, pid: ProcessId, spec: NetSpec
) -> tuple[list[Process], list[Port], ProcessNet, InterfaceBinding]:
    """Materialize a NetSpec as fresh processes and ports under ``pid``."""
    table = model.sort_table
    taken_procs = set(model.processes)
    taken_ports = set(model.ports)
    member_ids: dict[str, ProcessId] = {}
    port_ids: dict[tuple[str, str], PortId] = {}
    new_ports: list[Port] = []
    members: dict[str, Process] = {}

    for mspec in spec.members:
        if mspec.name in member_ids:
            raise FreshnessViolationError(f"member {mspec.name!r} declared twice")
        mid = core.fresh_id(f"{pid}.{mspec.name}", taken_procs)
        taken_procs.add(mid)
        member_ids[mspec.name] = mid
        ins, outs = [], []
        for direction, decls, target in ((INPUT, mspec.inputs, ins), (OUTPUT, mspec.outputs, outs)):
            for pname, sexpr in decls:
                port_id = core.fresh_id(f"{mid}:{pname}", taken_ports)
                taken_ports.add(port_id)
                sort = resolve_sort_expr(sexpr, table) if sexpr is not None else None
                new_ports.append(Port(port_id, pname, direction, mid, sort))
                port_ids[(mspec.name, pname)] = port_id
                target.append(port_id)
        members[mspec.name] = Process(
            mid, mspec.name, inputs=tuple(ins), outputs=tuple(outs), behavior_note=mspec.note
        )

    def member_port(member: str, port: str) -> PortId:
        key = (member, port)
        if key not in port_ids:
            raise UnknownPortError(f"no port {port!r} on subnet member {member!r}")
        return port_ids[key]

    for rspec in spec.rules:
        proc = members.get(rspec.process)
        if proc is None:
            raise UnknownPortError(f"rule names unknown subnet member {rspec.process!r}")
        rule = FiringRule(
            needs=tuple((member_port(rspec.process, p), lab) for p, lab in rspec.needs),
            produces=tuple(
                (member_port(rspec.process, p), lab) for p, lab in rspec.produces
            ),
            compute=rspec.compute,
        )
        members[rspec.process] = replace(proc, firing_rules=proc.firing_rules + (rule,))

    channels = frozenset(
        Channel(member_port(sa, pa), member_port(sb, pb))
        for sa, pa, sb, pb in spec.channels
    )

    pairs: list[tuple[PortId, PortId]] = []
    env_in: set[PortId] = set()
    env_out: set[PortId] = set()
    for member, mport, parent_port in spec.input_binds:
        parent_id = core.port_by_name(model, pid, parent_port)
        if parent_id is None:
            raise InterfaceMismatchError(
                f"decomposed process has no port named {parent_port!r}"
            )
        inner = member_port(member, mport)
        env_in.add(inner)
        pairs.append((parent_id, inner))
    for member, mport, parent_port in spec.output_binds:
        parent_id = core.port_by_name(model, pid, parent_port)
        if parent_id is None:
            raise InterfaceMismatchError(
                f"decomposed process has no port named {parent_port!r}"
            )
        inner = member_port(member, mport)
        env_out.add(inner)
        pairs.append((parent_id, inner))

    net = ProcessNet(
        processes=frozenset(p.id for p in members.values()),
        channels=channels,
        env_inputs=frozenset(env_in),
        env_outputs=frozenset(env_out),
    )
    return list(members.values()), new_ports, net, InterfaceBinding(tuple(sorted(pairs)))


@dataclass(frozen=True)
class DecomposeStep:
    path: tuple[str, ...]
    subnet: NetSpec

    def describe(self) -> str:
        return f"decompose {'.'.join(self.path)}"

    def apply(self, model: Model) -> tuple[Model, _Subst]:
        pid = core.resolve_path(model, self.path)
        if pid in model.nets:
            raise AlreadyDecomposedError(f"process {pid!r} is already decomposed")
        procs, ports, net, binding = build_subnet(model, pid, self.subnet)
        return _decompose(model, pid, procs, ports, net, binding)


@dataclass(frozen=True)
class AddChannelStep:
    source: PortRef
    dest: PortRef

    def describe(self) -> str:
        return f"add-channel {self.source} -> {self.dest}"

    def apply(self, model: Model) -> tuple[Model, _Subst]:
        src = Endpoint(core.resolve_path(model, self.source.path), self.source.port)
        dst = Endpoint(core.resolve_path(model, self.dest.path), self.dest.port)
        return _add_channel(model, src, dst)


@dataclass(frozen=True)
class AssignSortStep:
    port: PortRef
    sort: SortExpr

    def describe(self) -> str:
        return f"assign-sort {self.port}"

    def apply(self, model: Model) -> tuple[Model, _Subst]:
        pid = core.resolve_path(model, self.port.path)
        port_id = core.port_by_name(model, pid, self.port.port)
        if port_id is None:
            raise UnknownPortError(f"no port named {self.port.port!r} on {pid!r}")
        return _assign_sort(model, port_id, resolve_sort_expr(self.sort, model.sort_table))


@dataclass(frozen=True)
class PartSpec:
    """One split part: a name plus a field reference, field set, or sort name."""

    name: str
    ref: str | None = None
    fields: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SplitPortStep:
    port: PortRef
    parts: tuple[PartSpec, ...]

    def describe(self) -> str:
        return f"split-port {self.port}"

    def apply(self, model: Model) -> tuple[Model, _Subst]:
        pid = core.resolve_path(model, self.port.path)
        port_id = core.port_by_name(model, pid, self.port.port)
        if port_id is None:
            raise UnknownPortError(f"no port named {self.port.port!r} on {pid!r}")
        sort = model.ports[port_id].sort
        resolved: list[tuple[str, Sort | None]] = []
        for part in self.parts:
            if isinstance(sort, RecordSort):
                if part.fields is not None:
                    sub = tuple(
                        (f, s) for f, s in sort.fields if f in set(part.fields)
                    )
                    if len(sub) != len(part.fields):
                        raise PartitionMismatchError(
                            f"part {part.name!r} names fields missing from the record"
                        )
                    resolved.append((part.name, RecordSort(sub)))
                elif part.ref is not None:
                    fsort = sort.field_sort(part.ref)
                    if fsort is None:
                        raise PartitionMismatchError(
                            f"record has no field named {part.ref!r}"
                        )
                    resolved.append((part.name, fsort))
                else:
                    raise PartitionMismatchError(
                        f"part {part.name!r} needs a field reference on a record port"
                    )
            else:
                if part.fields is not None:
                    raise PartitionMismatchError(
                        "field lists are only meaningful for record-sorted ports"
                    )
                if part.ref is not None:
                    resolved.append(
                        (part.name, resolve_sort_expr(core.SortNameRef(part.ref), model.sort_table))
                    )
                else:
                    resolved.append((part.name, None))
        return _split_port(model, port_id, resolved)


@dataclass(frozen=True)
class FoldStep:
    path: tuple[str, ...]
    group: tuple[str, ...]
    new_name: str

    def describe(self) -> str:
        return f"fold {'.'.join(self.path)} {{{', '.join(self.group)}}} as {self.new_name}"

    def apply(self, model: Model) -> tuple[Model, _Subst]:
        owner = core.resolve_path(model, self.path)
        net, _ = model.net_of(owner)
        by_name = {
            model.processes[m].name: m for m in net.processes if m in model.processes
        }
        members = []
        for name in self.group:
            if name not in by_name:
                raise GroupNotSubsetError(
                    f"no member named {name!r} in the net of {owner!r}"
                )
            members.append(by_name[name])
        return _fold(model, owner, members, self.new_name)


@dataclass(frozen=True)
class UnfoldStep:
    path: tuple[str, ...]

    def describe(self) -> str:
        return f"unfold {'.'.join(self.path)}"

    def apply(self, model: Model) -> tuple[Model, _Subst]:
        if len(self.path) < 2:
            raise NoSuchChildError("the root process cannot be unfolded")
        child = core.resolve_path(model, self.path)
        parent = core.resolve_path(model, self.path[:-1])
        return _unfold(model, parent, child)


Step = DecomposeStep | AddChannelStep | AssignSortStep | SplitPortStep | FoldStep | UnfoldStep


@dataclass(frozen=True)
class RefinementScript:
    """Ordered rule invocations; replaying them is the refinement witness."""

    steps: tuple[Step, ...] = ()
    provenance: str | None = None


def apply_script(model: Model, script: RefinementScript) -> tuple[Model, Trace]:
    """Apply script steps in order, all-or-nothing.

    The first failing step raises ``StepFailedError`` with its 1-based index;
    models are immutable, so the caller's model is unchanged on failure.
    """
    trace = Trace(model)
    current = model
    for index, step in enumerate(script.steps, start=1):
        try:
            current, subst = step.apply(current)
        except BpnError as exc:
            raise StepFailedError(index, exc) from exc
        trace.record(type(step).__name__, step.describe(), subst)
    return current, trace


__all__ = [
    "PortRefinementMap",
    "Trace",
    "TraceStep",
    "Endpoint",
    "decompose_process",
    "add_channel",
    "assign_sort",
    "split_port",
    "unfold",
    "fold",
    "PortRef",
    "RuleSpec",
    "ProcessSpec",
    "NetSpec",
    "PartSpec",
    "build_subnet",
    "DecomposeStep",
    "AddChannelStep",
    "AssignSortStep",
    "SplitPortStep",
    "FoldStep",
    "UnfoldStep",
    "Step",
    "RefinementScript",
    "apply_script",
]
