"""Parsing, canonical printing, script parsing, and DOT export."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpnet import check, core, textio
from bpnet.errors import (
    DuplicateDefinitionError,
    NoNetError,
    ParseError,
    UnknownRuleNameError,
    UnknownSortNameError,
)
from bpnet.refine import (
    AddChannelStep,
    AssignSortStep,
    DecomposeStep,
    FoldStep,
    SplitPortStep,
    UnfoldStep,
)

from dotcheck import check_dot
from genmodels import gen_model, rename_ids


class TestParseModel:
    def test_bare_process(self):
        m = textio.parse_model("process bp { in in_1 in_2; out out_1 }")
        proc = m.processes[m.root]
        assert proc.name == "bp"
        assert [m.ports[p].name for p in proc.inputs] == ["in_1", "in_2"]
        assert [m.ports[p].name for p in proc.outputs] == ["out_1"]
        assert all(m.ports[p].sort is None for p in proc.ports())

    def test_empty_text_is_rejected(self):
        with pytest.raises(ParseError):
            textio.parse_model("")

    def test_duplicate_port_name(self):
        with pytest.raises(DuplicateDefinitionError):
            textio.parse_model("process bp { in in_1 in_1 }")

    def test_duplicate_process(self):
        with pytest.raises(DuplicateDefinitionError):
            textio.parse_model("process bp { }\nprocess bp { }")

    def test_unknown_sort_name(self):
        with pytest.raises(UnknownSortNameError):
            textio.parse_model("process bp { in a : Mystery }")

    def test_recursive_sort_rejected(self):
        with pytest.raises(ParseError):
            textio.parse_model(
                "sort A = record { x: B }\nsort B = record { y: A }\nprocess p { }"
            )

    def test_sort_declarations(self):
        m = textio.parse_model(
            """
            sort BookId
            sort Batch = seq BookId
            sort Reservation = record { book: BookId, batch: Batch }
            process p { in a : Reservation }
            """
        )
        reservation = m.sort_table["Reservation"]
        assert isinstance(reservation, core.RecordSort)
        assert reservation.field_names() == ("book", "batch")
        assert m.sort_table["Batch"] == core.CollectionSort("seq", core.AtomicSort("BookId"))
        port = next(iter(m.ports.values()))
        assert port.sort == reservation

    def test_parse_error_carries_span(self):
        with pytest.raises(ParseError) as exc:
            textio.parse_model("process bp {\n  in a : @bad\n}")
        assert exc.value.span is not None
        assert exc.value.span.line == 2

    def test_parsing_tolerates_ill_formed_nets(self):
        # a 2-cycle parses fine; the validator owns constraint checking
        m = textio.parse_model(
            """
            process system { }
            net for system {
              process a { in i; out o }
              process b { in i; out o }
              channel a.o -> b.i
              channel b.o -> a.i
            }
            """
        )
        assert core.CYCLE_DETECTED in {v.code for v in core.validate_model(m)}

    def test_comment_and_blank_lines(self):
        m = textio.parse_model("# heading\n\nprocess bp { }  # trailing\n")
        assert m.root == "bp"

    def test_nested_net_paths(self, library_refined):
        assert "system.reserve_book" in library_refined.nets
        assert (
            library_refined.processes["system.reserve_book.check_availability"].name
            == "check_availability"
        )


class TestPrintModel:
    def test_round_trip_is_isomorphic(self, library_refined):
        text = textio.print_model(library_refined)
        again = textio.parse_model(text)
        assert check.model_isomorphic(again, library_refined) is not None

    def test_root_only_prints_one_declaration(self):
        m = textio.parse_model("process bp { }")
        text = textio.print_model(m)
        assert text.count("process ") == 1

    def test_isomorphic_models_print_identically(self, bp_refined):
        renamed = rename_ids(bp_refined)
        assert renamed is not bp_refined
        assert textio.print_model(renamed) == textio.print_model(bp_refined)

    def test_canonical_print_is_a_fixpoint(self, bp_refined):
        once = textio.print_model(bp_refined)
        assert textio.print_model(textio.parse_model(once)) == once

    @pytest.mark.parametrize("seed", range(6))
    def test_generated_round_trip(self, seed):
        m = gen_model(seed)
        again = textio.parse_model(textio.print_model(m))
        assert check.model_isomorphic(again, m) is not None

    def test_notes_and_rules_survive(self, library_model):
        text = textio.print_model(library_model)
        assert 'note "library service fetches the requested title"' in text
        assert "rule retrieve_book : needs { in_1 } produces { out_1 }" in text


class TestParseScript:
    def test_assign_sort_statement(self):
        script = textio.parse_script("assign-sort bp.out_1 : Reservation")
        assert len(script.steps) == 1
        step = script.steps[0]
        assert isinstance(step, AssignSortStep)
        assert step.port.path == ("bp",)
        assert step.port.port == "out_1"

    def test_empty_script(self):
        script = textio.parse_script("")
        assert script.steps == ()

    def test_split_port_statement(self):
        script = textio.parse_script(
            "split-port bp.out_1 -> out_1a : descr, out_1b : { avail, note }"
        )
        (step,) = script.steps
        assert isinstance(step, SplitPortStep)
        assert step.parts[0].ref == "descr"
        assert step.parts[1].fields == ("avail", "note")

    def test_every_rule_kind_parses(self):
        script = textio.parse_script(
            """
            decompose bp {
              process a { in i; out o }
              input a.i binds bp.x
              output a.o binds bp.y
            }
            add-channel bp.a.o2 -> bp.b.i2
            assign-sort bp.y : record { f: T }
            split-port bp.y -> p, q
            fold bp { a, b } as grp
            unfold bp.grp
            """
        )
        kinds = [type(s) for s in script.steps]
        assert kinds == [
            DecomposeStep,
            AddChannelStep,
            AssignSortStep,
            SplitPortStep,
            FoldStep,
            UnfoldStep,
        ]

    def test_unknown_rule_name(self):
        with pytest.raises(UnknownRuleNameError):
            textio.parse_script("refactor bp.out_1")

    def test_comments_are_ignored(self):
        script = textio.parse_script("# nothing to see\n\n# here either\n")
        assert script.steps == ()


class TestExportDot:
    def test_empty_net_has_zero_nodes(self):
        m = textio.parse_model("process root { }\nnet for root { }")
        dot = textio.export_dot(m, "root")
        assert check_dot(dot) == 0

    def test_library_net_shape(self, library_model):
        dot = textio.export_dot(library_model, "system")
        # 3 process boxes plus 3 env endpoints (req in, ack + rec out)
        assert check_dot(dot) == 6
        assert dot.count("->") == 2 + 3
        assert "rankdir=LR" in dot

    def test_depth_two_renders_cluster(self, library_refined):
        dot = textio.export_dot(library_refined, "system", depth=2)
        assert "subgraph cluster" in dot
        assert '"reserve_book"' in dot
        assert '"check_availability"' in dot
        check_dot(dot)

    def test_no_net(self, bp_model):
        with pytest.raises(NoNetError):
            textio.export_dot(bp_model, "bp")

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_generated_models_export_valid_dot(self, depth):
        m = gen_model(3)
        check_dot(textio.export_dot(m, m.root, depth=depth))

    def test_edges_carry_sort_labels(self, library_model):
        dot = textio.export_dot(library_model, "system")
        assert 'label="Book"' in dot


@given(st.integers(0, 200))
@settings(deadline=None, max_examples=25)
def test_round_trip_isomorphism_property(seed):
    m = gen_model(seed, max_depth=2, max_members=4)
    again = textio.parse_model(textio.print_model(m))
    assert check.model_isomorphic(again, m) is not None
