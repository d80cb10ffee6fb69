"""Greedy, piecewise dataflow execution of a model's leaf-level net.

Each channel carries one (possibly complex) document which may arrive
piecewise as labeled fragments: record-sorted ports use the record's field
names as labels, everything else uses the single label ``whole``.  Processes
are greedy: a firing rule runs as soon as every fragment it needs is
present, without waiting for complete inputs.  Produced fragments broadcast
along all outgoing channels of the producing port.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

from . import refine
from .core import (
    WHOLE,
    FiringRule,
    Model,
    Port,
    PortId,
    ProcessId,
    ProcessNet,
    RecordSort,
    port_by_name,
)
from .errors import InvalidEnvFragmentError, NonDeterministicRulesError

# --- values and fragments -----------------------------------------------------


@dataclass(frozen=True)
class AtomicValue:
    text: str


@dataclass(frozen=True)
class RecordValue:
    fields: tuple[tuple[str, "Value"], ...]


@dataclass(frozen=True)
class CollectionValue:
    items: tuple["Value", ...]


Value = Union[AtomicValue, RecordValue, CollectionValue]


def render_value(value: Value) -> str:
    if isinstance(value, AtomicValue):
        return value.text
    if isinstance(value, RecordValue):
        inner = ", ".join(f"{n}={render_value(v)}" for n, v in value.fields)
        return f"{{{inner}}}"
    return "[" + ", ".join(render_value(v) for v in value.items) + "]"


@dataclass(frozen=True)
class Fragment:
    port: PortId
    label: str
    payload: Value


@dataclass
class SimState:
    """Mutable run state: fragments present per port, plus the firing log."""

    delivered: dict[PortId, dict[str, Value]] = field(default_factory=dict)
    fired: set[tuple[ProcessId, int]] = field(default_factory=set)
    trace: list[tuple[ProcessId, int]] = field(default_factory=list)


# A compute function maps the consumed fragments to the payload for one
# produced (port, label) pair.  It must be pure and deterministic.
ComputeFn = Callable[[str, Sequence[Fragment], str, str], Value]


def _tag_compute(process_name: str, consumed: Sequence[Fragment], port_name: str, label: str) -> Value:
    # tags carry the multiset of consumed labels, so tests observe dataflow
    labels = "+".join(sorted(f.label for f in consumed))
    return AtomicValue(f"({labels})")


COMPUTE_REGISTRY: dict[str, ComputeFn] = {"tag": _tag_compute}


# --- flattening -----------------------------------------------------------------


def flatten(model: Model) -> ProcessNet:
    """Unfold every decomposed process under the root into one leaf-level net."""
    return flatten_with_boundary(model)[0]


def flatten_with_boundary(model: Model) -> tuple[ProcessNet, dict[PortId, PortId]]:
    """The flat net plus the composed binding from root ports to its boundary."""
    if model.root not in model.nets:
        root = model.processes[model.root]
        net = ProcessNet(
            processes=frozenset({model.root}),
            env_inputs=frozenset(root.inputs),
            env_outputs=frozenset(root.outputs),
        )
        return net, {p: p for p in root.ports()}
    current = model
    while True:
        net, _ = current.nets[current.root]
        child = next((m for m in sorted(net.processes) if m in current.nets), None)
        if child is None:
            break
        current = refine.unfold(current, current.root, child)
    net, binding = current.nets[current.root]
    return net, binding.to_subnet()


# --- greedy execution --------------------------------------------------------------


def _valid_labels(port: Port) -> set[str]:
    """Labels deliverable on a port: ``whole``, plus record field names."""
    if isinstance(port.sort, RecordSort):
        return {WHOLE} | set(port.sort.field_names())
    return {WHOLE}


def _check_rule_determinism(model: Model, members: Iterable[ProcessId]) -> None:
    for pid in sorted(members):
        seen: dict[tuple[PortId, str], int] = {}
        for index, rule in enumerate(model.processes[pid].firing_rules):
            for pair in rule.produces:
                if pair in seen and seen[pair] != index:
                    raise NonDeterministicRulesError(
                        f"process {pid!r}: rules {seen[pair]} and {index} both "
                        f"produce {pair!r}"
                    )
                seen.setdefault(pair, index)


def simulate_greedy(
    model: Model,
    env: Iterable[Fragment],
    rng: random.Random | None = None,
) -> tuple[frozenset[Fragment], list[tuple[ProcessId, int]]]:
    """Run firing rules to fixpoint and return the environment-visible outputs.

    ``rng`` randomizes which ready rule fires next (used by the confluence
    check); with the default the ready rule that is least by (process name,
    rule index) fires first.  Terminates because each rule fires at most
    once on an acyclic net.
    """
    flat, _ = flatten_with_boundary(model)
    members = sorted(flat.processes)
    _check_rule_determinism(model, members)

    env = list(env)
    seen_pairs: set[tuple[PortId, str]] = set()
    for frag in env:
        port = model.ports.get(frag.port)
        if port is None or frag.port not in flat.env_inputs:
            raise InvalidEnvFragmentError(
                f"{frag.port!r} is not an environment input of the flattened net"
            )
        if frag.label not in _valid_labels(port):
            raise InvalidEnvFragmentError(
                f"label {frag.label!r} is not valid for port {frag.port!r}"
            )
        if (frag.port, frag.label) in seen_pairs:
            raise InvalidEnvFragmentError(
                f"duplicate fragment {frag.label!r} on port {frag.port!r}"
            )
        seen_pairs.add((frag.port, frag.label))
    for port_id in {f.port for f in env}:
        labels = {f.label for f in env if f.port == port_id}
        if WHOLE in labels and len(labels) > 1:
            raise InvalidEnvFragmentError(
                f"port {port_id!r} receives 'whole' alongside other fragments"
            )

    outgoing: dict[PortId, list[PortId]] = {}
    for ch in flat.channels:
        outgoing.setdefault(ch.source, []).append(ch.dest)
    for dests in outgoing.values():
        dests.sort()

    state = SimState()

    def deliver(port_id: PortId, label: str, payload: Value) -> None:
        slot = state.delivered.setdefault(port_id, {})
        # acyclic net + per-process output determinism: one fragment per label
        assert label not in slot, f"second fragment {label!r} on {port_id!r}"
        slot[label] = payload

    outputs: set[Fragment] = set()

    def emit(port_id: PortId, label: str, payload: Value) -> None:
        if port_id in flat.env_outputs:
            outputs.add(Fragment(port_id, label, payload))
        for dest in outgoing.get(port_id, ()):
            deliver(dest, label, payload)

    for frag in env:
        deliver(frag.port, frag.label, frag.payload)

    rule_entries = []
    for pid in members:
        proc = model.processes[pid]
        for index, rule in enumerate(proc.firing_rules):
            rule_entries.append((proc.name, pid, index, rule))
    rule_entries.sort(key=lambda e: (e[0], e[1], e[2]))

    def ready(rule: FiringRule) -> bool:
        return all(
            label in state.delivered.get(port_id, ())
            for port_id, label in rule.needs
        )

    while True:
        candidates = [
            entry
            for entry in rule_entries
            if (entry[1], entry[2]) not in state.fired and ready(entry[3])
        ]
        if not candidates:
            break
        if rng is None:
            name, pid, index, rule = candidates[0]
        else:
            name, pid, index, rule = candidates[rng.randrange(len(candidates))]
        state.fired.add((pid, index))
        state.trace.append((pid, index))
        consumed = [
            Fragment(port_id, label, state.delivered[port_id][label])
            for port_id, label in sorted(rule.needs)
        ]
        compute = COMPUTE_REGISTRY.get(rule.compute, _tag_compute)
        for port_id, label in sorted(rule.produces):
            port = model.ports[port_id]
            emit(port_id, label, compute(name, consumed, port.name, label))

    return frozenset(outputs), state.trace


def check_confluence(
    model: Model, env: Iterable[Fragment], trials: int, seed: int
) -> bool:
    """True iff randomized firing orders all produce the same final outputs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    env = list(env)
    baseline, _ = simulate_greedy(model, env)
    for trial in range(trials):
        rng = random.Random(f"{seed}:{trial}")
        outputs, _ = simulate_greedy(model, env, rng=rng)
        if outputs != baseline:
            return False
    return True


# --- environment file format -----------------------------------------------------


def parse_env_text(text: str) -> list[tuple[str, str, str]]:
    """Lines of ``port-name label = payload-text`` into (port, label, payload)."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, payload = line.partition("=")
        words = head.split()
        if not sep or len(words) != 2:
            raise InvalidEnvFragmentError(
                f"line {lineno}: expected 'port-name label = payload-text'"
            )
        entries.append((words[0], words[1], payload.strip()))
    return entries


def prepare_env(model: Model, entries: Iterable[tuple[str, str, str]]) -> list[Fragment]:
    """Resolve root-interface port names to flat boundary fragments."""
    _, boundary = flatten_with_boundary(model)
    fragments = []
    for name, label, payload in entries:
        root_port = port_by_name(model, model.root, name)
        if root_port is None or root_port not in boundary:
            raise InvalidEnvFragmentError(
                f"{name!r} is not an interface port of the root process"
            )
        fragments.append(Fragment(boundary[root_port], label, AtomicValue(payload)))
    return fragments


def format_outputs(model: Model, outputs: Iterable[Fragment]) -> str:
    """Output fragments as env-format lines, named by the root interface."""
    _, boundary = flatten_with_boundary(model)
    back = {flat: root for root, flat in boundary.items()}
    lines = []
    for frag in outputs:
        root_port = back.get(frag.port, frag.port)
        port = model.ports.get(root_port)
        name = port.name if port is not None else root_port
        lines.append((name, frag.label, render_value(frag.payload)))
    return "\n".join(f"{n} {lab} = {text}" for n, lab, text in sorted(lines))


__all__ = [
    "AtomicValue",
    "RecordValue",
    "CollectionValue",
    "Value",
    "Fragment",
    "FiringRule",
    "SimState",
    "COMPUTE_REGISTRY",
    "flatten",
    "flatten_with_boundary",
    "simulate_greedy",
    "check_confluence",
    "parse_env_text",
    "prepare_env",
    "format_outputs",
    "render_value",
]
