"""Text format for models and refinement scripts, plus DOT export.

The grammar is line-oriented: one statement per line (``;`` also separates
statements), ``#`` starts a comment, files are UTF-8.  Model files (``.bpn``)
declare sorts, a root process, and one ``net for <path>`` block per
decomposed process; member processes are declared inside the block of the
net containing them.  Script files (``.bps``) hold one rule invocation per
statement.  Parsing tolerates ill-formed nets: the validator owns all
constraint checking.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import core
from .core import (
    INPUT,
    OUTPUT,
    WHOLE,
    AtomicSort,
    Channel,
    CollectionExpr,
    CollectionSort,
    FiringRule,
    InterfaceBinding,
    Model,
    Port,
    Process,
    ProcessNet,
    RecordExpr,
    RecordSort,
    Sort,
    SortExpr,
    SortNameRef,
)
from .errors import (
    DuplicateDefinitionError,
    ParseError,
    SourceSpan,
    UnknownRuleNameError,
    UnknownSortNameError,
)
from .refine import (
    AddChannelStep,
    AssignSortStep,
    DecomposeStep,
    FoldStep,
    NetSpec,
    PartSpec,
    PortRef,
    ProcessSpec,
    RefinementScript,
    RuleSpec,
    SplitPortStep,
    UnfoldStep,
)

RESERVED = frozenset(
    """sort process net for in out note rule needs produces using channel
       input output binds record seq set as""".split()
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_PUNCTS = ("->", "{", "}", ":", ";", ",", ".", "=", "-")


@dataclass(frozen=True)
class Token:
    kind: str  # ident | string | punct | eol
    text: str
    line: int
    column: int


def _tokenize(text: str, filename: str) -> list[Token]:
    tokens: list[Token] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        col = 0
        while col < len(line):
            ch = line[col]
            if ch in " \t":
                col += 1
                continue
            if ch == "#":
                break
            m = _IDENT.match(line, col)
            if m:
                tokens.append(Token("ident", m.group(), lineno, col + 1))
                col = m.end()
                continue
            if ch == '"':
                end = line.find('"', col + 1)
                if end < 0:
                    raise ParseError(
                        "unterminated string", SourceSpan(filename, lineno, col + 1)
                    )
                tokens.append(Token("string", line[col + 1 : end], lineno, col + 1))
                col = end + 1
                continue
            for punct in _PUNCTS:
                if line.startswith(punct, col):
                    tokens.append(Token("punct", punct, lineno, col + 1))
                    col += len(punct)
                    break
            else:
                raise ParseError(
                    f"unexpected character {ch!r}", SourceSpan(filename, lineno, col + 1)
                )
        tokens.append(Token("eol", "\n", lineno, len(line) + 1))
    return tokens


class _Cursor:
    def __init__(self, tokens: list[Token], filename: str):
        self.tokens = tokens
        self.pos = 0
        self.filename = filename

    def span(self, token: Token | None = None) -> SourceSpan:
        if token is None:
            token = self.peek()
        if token is None:
            last = self.tokens[-1] if self.tokens else Token("eol", "", 1, 1)
            return SourceSpan(self.filename, last.line, last.column)
        return SourceSpan(self.filename, token.line, token.column)

    def peek(self) -> Token | None:
        i = self.pos
        while i < len(self.tokens) and self.tokens[i].kind == "eol":
            i += 1
        return self.tokens[i] if i < len(self.tokens) else None

    def take(self) -> Token | None:
        while self.pos < len(self.tokens) and self.tokens[self.pos].kind == "eol":
            self.pos += 1
        if self.pos >= len(self.tokens):
            return None
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "punct" and tok.text == text

    def take_punct(self, text: str) -> Token:
        tok = self.take()
        if tok is None or tok.kind != "punct" or tok.text != text:
            raise ParseError(
                f"expected {text!r}" + (f", got {tok.text!r}" if tok else ""),
                self.span(tok),
            )
        return tok

    def take_ident(self, what: str = "identifier", allow_reserved: bool = False) -> Token:
        tok = self.take()
        if tok is None or tok.kind != "ident":
            raise ParseError(
                f"expected {what}" + (f", got {tok.text!r}" if tok else ""),
                self.span(tok),
            )
        if not allow_reserved and tok.text in RESERVED:
            raise ParseError(
                f"{tok.text!r} is a reserved word and cannot name a {what}",
                self.span(tok),
            )
        return tok

    def skip_separators(self) -> None:
        while self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
            if tok.kind == "eol" or (tok.kind == "punct" and tok.text == ";"):
                self.pos += 1
            else:
                break

    def at_end(self) -> bool:
        return self.peek() is None


# --- shared statement parsers ---------------------------------------------------


def _parse_sort_expr(cur: _Cursor) -> SortExpr:
    tok = cur.take()
    if tok is None or tok.kind != "ident":
        raise ParseError("expected a sort expression", cur.span(tok))
    if tok.text == "record":
        cur.take_punct("{")
        fields: list[tuple[str, SortExpr]] = []
        while not cur.at_punct("}"):
            fname = cur.take_ident("field name", allow_reserved=True)
            cur.take_punct(":")
            fields.append((fname.text, _parse_sort_expr(cur)))
            if cur.at_punct(","):
                cur.take()
        cur.take_punct("}")
        if not fields:
            raise ParseError("a record sort needs at least one field", cur.span(tok))
        return RecordExpr(tuple(fields))
    if tok.text in (core.SEQUENCE, core.SET):
        return CollectionExpr(tok.text, _parse_sort_expr(cur))
    if tok.text in RESERVED:
        raise ParseError(f"{tok.text!r} cannot name a sort", cur.span(tok))
    return SortNameRef(tok.text)


def _parse_port_decls(cur: _Cursor) -> list[tuple[str, SortExpr | None, Token]]:
    decls = []
    while True:
        tok = cur.peek()
        if tok is None or tok.kind != "ident" or tok.text in RESERVED:
            break
        name = cur.take_ident("port name")
        sexpr = None
        if cur.at_punct(":"):
            cur.take()
            sexpr = _parse_sort_expr(cur)
        decls.append((name.text, sexpr, name))
    return decls


def _parse_process_block(cur: _Cursor) -> tuple[ProcessSpec, Token]:
    name = cur.take_ident("process name")
    cur.take_punct("{")
    inputs: list[tuple[str, SortExpr | None]] = []
    outputs: list[tuple[str, SortExpr | None]] = []
    note = ""
    seen: set[str] = set()
    while True:
        cur.skip_separators()
        if cur.at_punct("}"):
            cur.take()
            break
        tok = cur.take()
        if tok is None:
            raise ParseError(f"unterminated process block {name.text!r}", cur.span())
        if tok.kind == "ident" and tok.text in (INPUT, OUTPUT):
            for pname, sexpr, ptok in _parse_port_decls(cur):
                if pname in seen:
                    raise DuplicateDefinitionError(
                        f"port {pname!r} declared twice on process {name.text!r}",
                        cur.span(ptok),
                    )
                seen.add(pname)
                (inputs if tok.text == INPUT else outputs).append((pname, sexpr))
        elif tok.kind == "ident" and tok.text == "note":
            stok = cur.take()
            if stok is None or stok.kind != "string":
                raise ParseError("note expects a quoted string", cur.span(stok))
            note = stok.text
        else:
            raise ParseError(
                f"unexpected {tok.text!r} in process block", cur.span(tok)
            )
    return ProcessSpec(name.text, tuple(inputs), tuple(outputs), note), name


def _parse_labeled_ports(cur: _Cursor) -> tuple[tuple[str, str], ...]:
    cur.take_punct("{")
    refs: list[tuple[str, str]] = []
    while not cur.at_punct("}"):
        pname = cur.take_ident("port name")
        label = WHOLE
        if cur.at_punct("."):
            cur.take()
            label = cur.take_ident("fragment label", allow_reserved=True).text
        refs.append((pname.text, label))
        if cur.at_punct(","):
            cur.take()
    cur.take_punct("}")
    return tuple(refs)


def _parse_rule_stmt(cur: _Cursor) -> RuleSpec:
    proc = cur.take_ident("process name")
    cur.take_punct(":")
    kw = cur.take_ident("'needs'", allow_reserved=True)
    if kw.text != "needs":
        raise ParseError("firing rule must start with 'needs'", cur.span(kw))
    needs = _parse_labeled_ports(cur)
    kw = cur.take_ident("'produces'", allow_reserved=True)
    if kw.text != "produces":
        raise ParseError("firing rule needs a 'produces' list", cur.span(kw))
    produces = _parse_labeled_ports(cur)
    compute = "tag"
    tok = cur.peek()
    if tok is not None and tok.kind == "ident" and tok.text == "using":
        cur.take()
        compute = cur.take_ident("compute name").text
    return RuleSpec(proc.text, needs, produces, compute)


def _parse_qualified(cur: _Cursor) -> tuple[str, str, Token]:
    proc = cur.take_ident("process name")
    cur.take_punct(".")
    port = cur.take_ident("port name")
    return proc.text, port.text, proc


def _parse_net_statements(
    cur: _Cursor, owner_name: str, context: str
) -> NetSpec:
    members: list[ProcessSpec] = []
    member_names: set[str] = set()
    channels: list[tuple[str, str, str, str]] = []
    input_binds: list[tuple[str, str, str]] = []
    output_binds: list[tuple[str, str, str]] = []
    rules: list[RuleSpec] = []
    while True:
        cur.skip_separators()
        if cur.at_punct("}"):
            cur.take()
            break
        tok = cur.take()
        if tok is None:
            raise ParseError(f"unterminated block for {context}", cur.span())
        if tok.kind != "ident":
            raise ParseError(f"unexpected {tok.text!r} in net block", cur.span(tok))
        if tok.text == "process":
            spec, name_tok = _parse_process_block(cur)
            if spec.name in member_names:
                raise DuplicateDefinitionError(
                    f"process {spec.name!r} declared twice in {context}",
                    cur.span(name_tok),
                )
            member_names.add(spec.name)
            members.append(spec)
        elif tok.text == "channel":
            sa, pa, _ = _parse_qualified(cur)
            cur.take_punct("->")
            sb, pb, _ = _parse_qualified(cur)
            entry = (sa, pa, sb, pb)
            if entry in channels:
                raise DuplicateDefinitionError(
                    f"channel {sa}.{pa} -> {sb}.{pb} declared twice", cur.span(tok)
                )
            channels.append(entry)
        elif tok.text in ("input", "output"):
            member, mport, _ = _parse_qualified(cur)
            kw = cur.take_ident("'binds'", allow_reserved=True)
            if kw.text != "binds":
                raise ParseError("boundary statement needs 'binds'", cur.span(kw))
            pproc, pport, ptok = _parse_qualified(cur)
            if pproc != owner_name:
                raise ParseError(
                    f"boundary binds must name the owner {owner_name!r}, got {pproc!r}",
                    cur.span(ptok),
                )
            entry = (member, mport, pport)
            target = input_binds if tok.text == "input" else output_binds
            if entry in target:
                raise DuplicateDefinitionError(
                    f"{tok.text} bind for {member}.{mport} declared twice",
                    cur.span(tok),
                )
            target.append(entry)
        elif tok.text == "rule":
            rules.append(_parse_rule_stmt(cur))
        else:
            raise ParseError(
                f"unexpected {tok.text!r} in net block", cur.span(tok)
            )
    return NetSpec(
        tuple(members),
        tuple(channels),
        tuple(input_binds),
        tuple(output_binds),
        tuple(rules),
    )


# --- model parsing ---------------------------------------------------------------


def _parse_path(cur: _Cursor) -> tuple[str, ...]:
    parts = [cur.take_ident("process name").text]
    while cur.at_punct("."):
        cur.take()
        parts.append(cur.take_ident("process name").text)
    return tuple(parts)


def parse_model(text: str, filename: str = "<model>") -> Model:
    """Parse model text; structure mirrors the text, well-formedness aside."""
    cur = _Cursor(_tokenize(text, filename), filename)
    sort_decls: dict[str, tuple[SortExpr | None, Token]] = {}
    top_procs: list[ProcessSpec] = []
    top_rules: list[RuleSpec] = []
    net_blocks: dict[tuple[str, ...], NetSpec] = {}

    while True:
        cur.skip_separators()
        if cur.at_end():
            break
        tok = cur.take()
        if tok.kind != "ident":
            raise ParseError(f"unexpected {tok.text!r} at top level", cur.span(tok))
        if tok.text == "sort":
            name = cur.take_ident("sort name")
            if name.text in sort_decls:
                raise DuplicateDefinitionError(
                    f"sort {name.text!r} declared twice", cur.span(name)
                )
            expr: SortExpr | None = None
            if cur.at_punct("="):
                cur.take()
                expr = _parse_sort_expr(cur)
            sort_decls[name.text] = (expr, name)
        elif tok.text == "process":
            spec, name_tok = _parse_process_block(cur)
            if any(p.name == spec.name for p in top_procs):
                raise DuplicateDefinitionError(
                    f"process {spec.name!r} declared twice at top level",
                    cur.span(name_tok),
                )
            top_procs.append(spec)
        elif tok.text == "net":
            kw = cur.take_ident("'for'", allow_reserved=True)
            if kw.text != "for":
                raise ParseError("expected 'net for <path>'", cur.span(kw))
            path = _parse_path(cur)
            if path in net_blocks:
                raise DuplicateDefinitionError(
                    f"net for {'.'.join(path)} declared twice", cur.span(tok)
                )
            cur.take_punct("{")
            net_blocks[path] = _parse_net_statements(
                cur, path[-1], f"net for {'.'.join(path)}"
            )
        elif tok.text == "rule":
            top_rules.append(_parse_rule_stmt(cur))
        else:
            raise ParseError(f"unknown declaration {tok.text!r}", cur.span(tok))

    if not top_procs:
        raise ParseError("a model must declare a root process", cur.span())

    return _build_model(sort_decls, top_procs, top_rules, net_blocks, filename)


def _build_model(
    sort_decls: dict[str, tuple[SortExpr | None, Token]],
    top_procs: list[ProcessSpec],
    top_rules: list[RuleSpec],
    net_blocks: dict[tuple[str, ...], NetSpec],
    filename: str,
) -> Model:
    table: dict[str, Sort] = {}
    resolving: list[str] = []

    def resolve_name(name: str, span: SourceSpan | None) -> Sort:
        if name in table:
            return table[name]
        if name not in sort_decls:
            raise UnknownSortNameError(f"unknown sort name {name!r}", span)
        if name in resolving:
            raise ParseError(
                f"recursive sort definition through {name!r}", span
            )
        resolving.append(name)
        expr, tok = sort_decls[name]
        span = SourceSpan(filename, tok.line, tok.column)
        sort = AtomicSort(name) if expr is None else resolve_expr(expr, span)
        resolving.pop()
        table[name] = sort
        return sort

    def resolve_expr(expr: SortExpr, span: SourceSpan | None) -> Sort:
        if isinstance(expr, SortNameRef):
            return resolve_name(expr.name, span)
        if isinstance(expr, CollectionExpr):
            return CollectionSort(expr.kind, resolve_expr(expr.element, span))
        fields = tuple((f, resolve_expr(s, span)) for f, s in expr.fields)
        names = [f for f, _ in fields]
        if len(set(names)) != len(names):
            raise DuplicateDefinitionError("record field declared twice", span)
        return RecordSort(fields)

    for name in sort_decls:
        resolve_name(name, None)

    processes: dict[str, Process] = {}
    ports: dict[str, Port] = {}
    rules_by_pid: dict[str, list[FiringRule]] = {}

    def declare_process(spec: ProcessSpec, pid: str) -> None:
        ins, outs = [], []
        for direction, decls, target in (
            (INPUT, spec.inputs, ins),
            (OUTPUT, spec.outputs, outs),
        ):
            for pname, sexpr in decls:
                port_id = f"{pid}:{pname}"
                sort = resolve_expr(sexpr, None) if sexpr is not None else None
                ports[port_id] = Port(port_id, pname, direction, pid, sort)
                target.append(port_id)
        processes[pid] = Process(
            pid, spec.name, tuple(ins), tuple(outs), behavior_note=spec.note
        )

    for spec in top_procs:
        declare_process(spec, spec.name)
    for path, block in net_blocks.items():
        owner_id = ".".join(path)
        for spec in block.members:
            declare_process(spec, f"{owner_id}.{spec.name}")

    def attach_rules(scope: str, specs: tuple[RuleSpec, ...] | list[RuleSpec], pid_of) -> None:
        for rspec in specs:
            pid = pid_of(rspec.process)
            if pid is None or pid not in processes:
                raise ParseError(
                    f"rule names unknown process {rspec.process!r} in {scope}"
                )

            def port_ref(pname: str) -> str:
                port_id = f"{pid}:{pname}"
                if port_id not in ports:
                    raise ParseError(
                        f"rule for {rspec.process!r} names unknown port {pname!r}"
                    )
                return port_id

            rules_by_pid.setdefault(pid, []).append(
                FiringRule(
                    needs=tuple((port_ref(p), lab) for p, lab in rspec.needs),
                    produces=tuple((port_ref(p), lab) for p, lab in rspec.produces),
                    compute=rspec.compute,
                )
            )

    attach_rules(
        "top level",
        top_rules,
        lambda name: name if name in processes else None,
    )

    nets: dict[str, tuple[ProcessNet, InterfaceBinding]] = {}
    for path, block in net_blocks.items():
        owner_id = ".".join(path)
        if owner_id not in processes:
            raise ParseError(
                f"net for {'.'.join(path)}: no such process is declared"
            )
        member_ids = {spec.name: f"{owner_id}.{spec.name}" for spec in block.members}

        def member_port(member: str, pname: str, what: str) -> str:
            if member not in member_ids:
                raise ParseError(
                    f"{what} in net for {'.'.join(path)} names unknown member {member!r}"
                )
            port_id = f"{member_ids[member]}:{pname}"
            if port_id not in ports:
                raise ParseError(
                    f"{what} names unknown port {pname!r} on member {member!r}"
                )
            return port_id

        channels = frozenset(
            Channel(member_port(sa, pa, "channel"), member_port(sb, pb, "channel"))
            for sa, pa, sb, pb in block.channels
        )
        pairs: list[tuple[str, str]] = []
        env_in: set[str] = set()
        env_out: set[str] = set()
        for member, mport, pport in block.input_binds:
            parent_port = f"{owner_id}:{pport}"
            if parent_port not in ports:
                raise ParseError(
                    f"input bind names unknown port {pport!r} on {'.'.join(path)}"
                )
            inner = member_port(member, mport, "input bind")
            env_in.add(inner)
            pairs.append((parent_port, inner))
        for member, mport, pport in block.output_binds:
            parent_port = f"{owner_id}:{pport}"
            if parent_port not in ports:
                raise ParseError(
                    f"output bind names unknown port {pport!r} on {'.'.join(path)}"
                )
            inner = member_port(member, mport, "output bind")
            env_out.add(inner)
            pairs.append((parent_port, inner))
        nets[owner_id] = (
            ProcessNet(
                processes=frozenset(member_ids.values()),
                channels=channels,
                env_inputs=frozenset(env_in),
                env_outputs=frozenset(env_out),
            ),
            InterfaceBinding(tuple(sorted(pairs))),
        )
        attach_rules(
            f"net for {'.'.join(path)}",
            block.rules,
            lambda name: member_ids.get(name),
        )

    for pid, rule_list in rules_by_pid.items():
        proc = processes[pid]
        processes[pid] = Process(
            proc.id,
            proc.name,
            proc.inputs,
            proc.outputs,
            proc.behavior_note,
            tuple(rule_list),
        )

    contained = {m for _, (net, _) in nets.items() for m in net.processes}
    root = next((p.name for p in top_procs if p.name not in contained), None)
    if root is None:
        raise ParseError("every declared process is contained in a net; no root")
    return Model(
        sort_table=table, processes=processes, ports=ports, root=root, nets=nets
    )


# --- script parsing ----------------------------------------------------------------


def _parse_port_path(cur: _Cursor) -> PortRef:
    segments = _parse_path(cur)
    if len(segments) < 2:
        raise ParseError(
            "expected <process-path>.<port>", cur.span()
        )
    return PortRef(segments[:-1], segments[-1])


def _take_head(cur: _Cursor) -> Token:
    tok = cur.take_ident("rule name", allow_reserved=True)
    text = tok.text
    while cur.at_punct("-"):
        cur.take()
        text += "-" + cur.take_ident("rule name", allow_reserved=True).text
    return Token(tok.kind, text, tok.line, tok.column)


def parse_script(text: str, filename: str = "<script>") -> RefinementScript:
    """Parse a refinement script into an ordered list of rule invocations."""
    cur = _Cursor(_tokenize(text, filename), filename)
    steps = []
    while True:
        cur.skip_separators()
        if cur.at_end():
            break
        head = _take_head(cur)
        if head.text == "decompose":
            path = _parse_path(cur)
            cur.take_punct("{")
            subnet = _parse_net_statements(cur, path[-1], f"decompose {'.'.join(path)}")
            steps.append(DecomposeStep(path, subnet))
        elif head.text == "add-channel":
            src = _parse_port_path(cur)
            cur.take_punct("->")
            dst = _parse_port_path(cur)
            steps.append(AddChannelStep(src, dst))
        elif head.text == "assign-sort":
            ref = _parse_port_path(cur)
            cur.take_punct(":")
            steps.append(AssignSortStep(ref, _parse_sort_expr(cur)))
        elif head.text == "split-port":
            ref = _parse_port_path(cur)
            cur.take_punct("->")
            parts = []
            while True:
                pname = cur.take_ident("part name")
                spec = PartSpec(pname.text)
                if cur.at_punct(":"):
                    cur.take()
                    if cur.at_punct("{"):
                        cur.take()
                        fields = [cur.take_ident("field name", allow_reserved=True).text]
                        while cur.at_punct(","):
                            cur.take()
                            fields.append(cur.take_ident("field name", allow_reserved=True).text)
                        cur.take_punct("}")
                        spec = PartSpec(pname.text, fields=tuple(fields))
                    else:
                        spec = PartSpec(pname.text, ref=cur.take_ident("field or sort").text)
                parts.append(spec)
                if cur.at_punct(","):
                    cur.take()
                else:
                    break
            steps.append(SplitPortStep(ref, tuple(parts)))
        elif head.text == "fold":
            path = _parse_path(cur)
            cur.take_punct("{")
            group = [cur.take_ident("member name").text]
            while cur.at_punct(","):
                cur.take()
                group.append(cur.take_ident("member name").text)
            cur.take_punct("}")
            kw = cur.take_ident("'as'", allow_reserved=True)
            if kw.text != "as":
                raise ParseError("fold needs 'as <name>'", cur.span(kw))
            new_name = cur.take_ident("process name").text
            steps.append(FoldStep(path, tuple(group), new_name))
        elif head.text == "unfold":
            steps.append(UnfoldStep(_parse_path(cur)))
        else:
            raise UnknownRuleNameError(
                f"unknown rule {head.text!r}", cur.span(head)
            )
    return RefinementScript(tuple(steps), provenance=filename)


# --- canonical printing ---------------------------------------------------------------


def _sort_text(model: Model, sort: Sort) -> str:
    """Reference form of a sort: the least declared name, else inline."""
    names = sorted(n for n, s in model.sort_table.items() if s == sort)
    if names:
        return names[0]
    return _sort_structure(model, sort)


def _sort_structure(model: Model, sort: Sort) -> str:
    if isinstance(sort, AtomicSort):
        return sort.name
    if isinstance(sort, CollectionSort):
        return f"{sort.kind} {_sort_text(model, sort.element)}"
    inner = ", ".join(f"{f}: {_sort_text(model, s)}" for f, s in sort.fields)
    return f"record {{ {inner} }}"


def _sort_owner(model: Model, sort: Sort) -> str:
    # a self-named atomic anchors its alias group; otherwise the least name
    if isinstance(sort, AtomicSort) and model.sort_table.get(sort.name) == sort:
        return sort.name
    return min(n for n, s in model.sort_table.items() if s == sort)


def _port_decl_text(model: Model, port_id: str) -> str:
    port = model.ports[port_id]
    if port.sort is None:
        return port.name
    return f"{port.name} : {_sort_text(model, port.sort)}"


def _process_decl_text(model: Model, proc: Process) -> str:
    sections = []
    for keyword, port_ids in ((INPUT, proc.inputs), (OUTPUT, proc.outputs)):
        if port_ids:
            decls = " ".join(
                _port_decl_text(model, p)
                for p in sorted(port_ids, key=lambda p: model.ports[p].name)
            )
            sections.append(f"{keyword} {decls}")
    # black-box notes of decomposed processes are residue; the net is printed
    if proc.behavior_note and proc.id not in model.nets:
        sections.append(f'note "{proc.behavior_note}"')
    body = "; ".join(sections)
    return f"process {proc.name} {{ {body} }}" if body else f"process {proc.name} {{ }}"


def _rule_text(model: Model, proc: Process, rule: FiringRule) -> str:
    def refs(pairs: tuple[tuple[str, str], ...]) -> str:
        rendered = sorted(
            (model.ports[p].name, lab) for p, lab in pairs if p in model.ports
        )
        return ", ".join(n if lab == WHOLE else f"{n}.{lab}" for n, lab in rendered)

    text = (
        f"rule {proc.name} : needs {{ {refs(rule.needs)} }}"
        f" produces {{ {refs(rule.produces)} }}"
    ).replace("{  }", "{ }")
    if rule.compute != "tag":
        text += f" using {rule.compute}"
    return text


def print_model(model: Model) -> str:
    """Canonical text for a model: sorted declarations, stable ordering.

    Isomorphic models print byte-identically; parsing the output yields a
    model isomorphic to the input.
    """
    lines: list[str] = []
    for name in sorted(model.sort_table):
        sort = model.sort_table[name]
        owner = _sort_owner(model, sort)
        if name != owner:
            lines.append(f"sort {name} = {owner}")
        elif sort == AtomicSort(name):
            lines.append(f"sort {name}")
        else:
            lines.append(f"sort {name} = {_sort_structure(model, sort)}")
    if lines:
        lines.append("")

    contained = {
        m for _, (net, _) in model.nets.items() for m in net.processes
    }
    top_level = [
        pid
        for pid in model.processes
        if pid not in contained
    ]
    ordered_top = [model.root] + sorted(
        (p for p in top_level if p != model.root),
        key=lambda p: (model.processes[p].name, p),
    )
    for pid in ordered_top:
        if pid not in model.processes:
            continue
        proc = model.processes[pid]
        lines.append(_process_decl_text(model, proc))
        if pid not in model.nets:
            for rule in proc.firing_rules:
                lines.append(_rule_text(model, proc, rule))
    for owner in sorted(model.nets, key=lambda o: core.display_path(model, o)):
        net, binding = model.nets[owner]
        owner_proc = model.processes.get(owner)
        owner_name = owner_proc.name if owner_proc else owner
        lines.append("")
        lines.append(f"net for {'.'.join(core.display_path(model, owner))} {{")
        members = sorted(
            (m for m in net.processes if m in model.processes),
            key=lambda m: (model.processes[m].name, m),
        )
        for member in members:
            proc = model.processes[member]
            lines.append(f"  {_process_decl_text(model, proc)}")
            if member not in model.nets:
                for rule in proc.firing_rules:
                    lines.append(f"  {_rule_text(model, proc, rule)}")

        def port_ref(port_id: str) -> tuple[str, str]:
            port = model.ports[port_id]
            proc = model.processes.get(port.owner)
            return (proc.name if proc else port.owner, port.name)

        for ch in sorted(
            net.channels,
            key=lambda c: port_ref(c.source) + port_ref(c.dest)
            if c.source in model.ports and c.dest in model.ports
            else ((c.source, ""), (c.dest, "")),
        ):
            if ch.source not in model.ports or ch.dest not in model.ports:
                continue
            (sp, spn), (dp, dpn) = port_ref(ch.source), port_ref(ch.dest)
            lines.append(f"  channel {sp}.{spn} -> {dp}.{dpn}")
        to_parent = binding.to_parent()
        for keyword, boundary in (("input", net.env_inputs), ("output", net.env_outputs)):
            entries = []
            for port_id in boundary:
                if port_id not in model.ports or port_id not in to_parent:
                    continue
                parent_port = to_parent[port_id]
                if parent_port not in model.ports:
                    continue
                mname, pname = port_ref(port_id)
                entries.append(
                    f"  {keyword} {mname}.{pname} binds "
                    f"{owner_name}.{model.ports[parent_port].name}"
                )
            lines.extend(sorted(entries))
        lines.append("}")
    return "\n".join(lines).rstrip("\n") + "\n"


# --- DOT export --------------------------------------------------------------------


def _dot_quote(text: str) -> str:
    return '"' + text.replace('"', r"\"") + '"'


def export_dot(model: Model, owner: str, depth: int = 1) -> str:
    """Render a net as a DOT digraph, subnets as clusters when depth > 1.

    Channels run left to right; environment boundary ports appear as
    half-connected point nodes; edges carry the channel sort when specified.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    net, _ = model.net_of(owner)
    node_name: dict[str, str] = {}
    expanded: set[str] = set()
    lines = [
        "digraph bpn {",
        "  rankdir=LR;",
        "  compound=true;",
        "  node [shape=box];",
    ]

    def node_of(pid: str) -> str:
        if pid not in node_name:
            node_name[pid] = f"p{len(node_name)}"
        return node_name[pid]

    counters = {"cluster": 0, "env": 0}

    def render(owner_id: str, level_net: ProcessNet, remaining: int, indent: str) -> None:
        for member in sorted(
            level_net.processes,
            key=lambda m: (model.processes[m].name if m in model.processes else m, m),
        ):
            name = (
                model.processes[member].name if member in model.processes else member
            )
            if remaining > 1 and member in model.nets:
                expanded.add(member)
                cluster = f"cluster{counters['cluster']}"
                counters["cluster"] += 1
                lines.append(f"{indent}subgraph {cluster} {{")
                lines.append(f"{indent}  label={_dot_quote(name)};")
                render(member, model.nets[member][0], remaining - 1, indent + "  ")
                lines.append(f"{indent}}}")
            else:
                lines.append(f"{indent}{node_of(member)} [label={_dot_quote(name)}];")

    render(owner, net, depth, "  ")

    def resolve(port_id: str) -> str:
        # descend through bindings while the owning process is expanded
        while port_id in model.ports and model.ports[port_id].owner in expanded:
            pid = model.ports[port_id].owner
            port_id = model.nets[pid][1].to_subnet().get(port_id, port_id)
        return port_id

    def edge(src_port: str, dst_port: str) -> None:
        sort = None
        for p in (src_port, dst_port):
            port = model.ports.get(p)
            if port is not None and port.sort is not None:
                sort = port.sort
                break
        src = model.ports.get(resolve(src_port))
        dst = model.ports.get(resolve(dst_port))
        if src is None or dst is None:
            return
        label = (
            f" [label={_dot_quote(_sort_text(model, sort))}]" if sort is not None else ""
        )
        lines.append(f"  {node_of(src.owner)} -> {node_of(dst.owner)}{label};")

    for ch in sorted(net.channels, key=lambda c: (c.source, c.dest)):
        edge(ch.source, ch.dest)

    for port_id in sorted(net.env_inputs):
        real = resolve(port_id)
        port = model.ports.get(real)
        if port is None:
            continue
        env = f"e{counters['env']}"
        counters["env"] += 1
        lines.append(f"  {env} [shape=point, label=\"\"];")
        attrs = (
            f" [label={_dot_quote(_sort_text(model, port.sort))}]"
            if port.sort is not None
            else ""
        )
        lines.append(f"  {env} -> {node_of(port.owner)}{attrs};")
    for port_id in sorted(net.env_outputs):
        real = resolve(port_id)
        port = model.ports.get(real)
        if port is None:
            continue
        env = f"e{counters['env']}"
        counters["env"] += 1
        lines.append(f"  {env} [shape=point, label=\"\"];")
        attrs = (
            f" [label={_dot_quote(_sort_text(model, port.sort))}]"
            if port.sort is not None
            else ""
        )
        lines.append(f"  {node_of(port.owner)} -> {env}{attrs};")

    lines.append("}")
    return "\n".join(lines) + "\n"


__all__ = [
    "parse_model",
    "print_model",
    "parse_script",
    "export_dot",
    "SourceSpan",
    "Token",
]
