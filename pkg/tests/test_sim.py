"""Flattening and the greedy piecewise dataflow semantics."""

from __future__ import annotations

import pytest

from bpnet import core, sim, textio
from bpnet.core import FiringRule, Process
from bpnet.errors import InvalidEnvFragmentError, NonDeterministicRulesError
from bpnet.sim import AtomicValue, Fragment

from conftest import fixture_text


def env_for(model, *entries):
    return sim.prepare_env(model, [(n, lab, text) for n, lab, text in entries])


class TestFlatten:
    def test_flat_model_is_unchanged(self, library_model):
        flat = sim.flatten(library_model)
        net, _ = library_model.nets["system"]
        assert flat == net

    def test_library_refined_expands_to_four_processes(self, library_refined):
        flat = sim.flatten(library_refined)
        assert len(flat.processes) == 4
        names = {
            library_refined.processes[p].name
            for p in flat.processes
        }
        assert names == {
            "retrieve_book",
            "check_availability",
            "issue_notification",
            "notify_user",
        }
        # boundary corresponds to the root interface through composed bindings
        _, boundary = sim.flatten_with_boundary(library_refined)
        assert set(boundary) == set(library_refined.processes["system"].ports())

    def test_flatten_is_idempotent(self, library_refined):
        # a model whose root net is already leaf-level flattens to itself
        flat_once = sim.flatten(library_refined)
        unfolded = textio.parse_model(fixture_text("library_refined.bpn"))
        from bpnet.refine import unfold

        pre_flattened = unfold(unfolded, "system", "system.reserve_book")
        assert sim.flatten(pre_flattened) == sim.flatten(pre_flattened)
        assert len(sim.flatten(pre_flattened).processes) == len(flat_once.processes)

    def test_undecomposed_root_becomes_singleton_net(self, bp_model):
        flat = sim.flatten(bp_model)
        assert flat.processes == frozenset({"bp"})
        assert flat.env_inputs == frozenset(bp_model.processes["bp"].inputs)


class TestSimulateGreedy:
    def test_library_chain_fires_in_order(self, library_model):
        outputs, trace = sim.simulate_greedy(
            library_model, env_for(library_model, ("req", "whole", "b42"))
        )
        fired = [library_model.processes[p].name for p, _ in trace]
        assert fired == ["retrieve_book", "reserve_book", "notify_user"]
        by_name = {
            (library_model.ports[f.port].name, f.label) for f in outputs
        }
        assert by_name == {("out_1", "whole"), ("out_2", "whole")}

    def test_partial_input_fires_only_ready_rules(self, bp_fig6):
        outputs, trace = sim.simulate_greedy(
            bp_fig6, env_for(bp_fig6, ("in_1", "whole", "x"))
        )
        assert [p for p, _ in trace] == ["bp.bp1"]
        assert outputs == frozenset()

    def test_empty_env_is_quiescent(self, library_model):
        outputs, trace = sim.simulate_greedy(library_model, [])
        assert outputs == frozenset()
        assert trace == []

    def test_broadcast_duplicates_fragments(self, bp_refined):
        outputs, trace = sim.simulate_greedy(
            bp_refined, env_for(bp_refined, ("in_1", "whole", "x"), ("in_2", "whole", "y"))
        )
        fired = {bp_refined.processes[p].name for p, _ in trace}
        # bp1's single output feeds both bp21 and bp22
        assert fired == {"bp1", "bp21", "bp22"}
        assert len(outputs) == 2

    def test_invalid_env_port(self, library_model):
        with pytest.raises(InvalidEnvFragmentError):
            sim.prepare_env(library_model, [("nonsuch", "whole", "x")])

    def test_invalid_label(self, library_model):
        frag = Fragment(
            core.port_by_name(library_model, "system.retrieve_book", "in_1"),
            "bogus_field",
            AtomicValue("x"),
        )
        with pytest.raises(InvalidEnvFragmentError):
            sim.simulate_greedy(library_model, [frag])

    def test_record_fields_arrive_piecewise(self):
        m = textio.parse_model(
            """
            sort A
            sort B
            sort R = record { a: A, b: B }
            process root { in x : R; out y }
            rule root : needs { x.a, x.b } produces { y }
            """
        )
        env = env_for(m, ("x", "a", "1"))
        outputs, trace = sim.simulate_greedy(m, env)
        assert trace == []
        env = env_for(m, ("x", "a", "1"), ("x", "b", "2"))
        outputs, trace = sim.simulate_greedy(m, env)
        assert len(trace) == 1
        assert len(outputs) == 1

    def test_whole_excludes_other_labels(self):
        m = textio.parse_model(
            "sort A\nsort R = record { a: A, b: A }\nprocess root { in x : R }"
        )
        with pytest.raises(InvalidEnvFragmentError):
            sim.simulate_greedy(m, env_for(m, ("x", "whole", "1"), ("x", "a", "2")))

    def test_termination_bound(self, library_refined):
        outputs, trace = sim.simulate_greedy(
            library_refined, env_for(library_refined, ("req", "whole", "b42"))
        )
        total_rules = sum(
            len(p.firing_rules) for p in library_refined.processes.values()
        )
        assert len(trace) <= total_rules

    def test_monotone_in_env(self, bp_fig6):
        smaller, _ = sim.simulate_greedy(bp_fig6, env_for(bp_fig6, ("in_1", "whole", "x")))
        larger, _ = sim.simulate_greedy(
            bp_fig6, env_for(bp_fig6, ("in_1", "whole", "x"), ("in_2", "whole", "y"))
        )
        assert {(f.port, f.label) for f in smaller} <= {(f.port, f.label) for f in larger}


class TestConfluence:
    def test_library_fixture_is_confluent(self, library_model):
        env = env_for(library_model, ("req", "whole", "b42"))
        assert sim.check_confluence(library_model, env, trials=100, seed=11)

    def test_single_rule_is_confluent(self, bp_model):
        env = env_for(bp_model, ("in_1", "whole", "x"), ("in_2", "whole", "y"))
        assert sim.check_confluence(bp_model, env, trials=5, seed=0)

    def test_nondeterministic_rules_rejected_at_load(self, bp_model):
        proc = bp_model.processes["bp"]
        out_port = proc.outputs[0]
        in_port = proc.inputs[0]
        corrupted = Process(
            proc.id,
            proc.name,
            proc.inputs,
            proc.outputs,
            firing_rules=(
                FiringRule(((in_port, "whole"),), ((out_port, "whole"),)),
                FiringRule(((proc.inputs[1], "whole"),), ((out_port, "whole"),)),
            ),
        )
        bad = core.Model(
            bp_model.sort_table,
            {**bp_model.processes, proc.id: corrupted},
            bp_model.ports,
            bp_model.root,
            bp_model.nets,
        )
        with pytest.raises(NonDeterministicRulesError):
            sim.check_confluence(bad, [], trials=3, seed=0)

    def test_trials_must_be_positive(self, bp_model):
        with pytest.raises(ValueError):
            sim.check_confluence(bp_model, [], trials=0, seed=0)


class TestEnvFormat:
    def test_parse_lines(self):
        entries = sim.parse_env_text("# c\nreq whole = b42\n\nx f = hello world\n")
        assert entries == [("req", "whole", "b42"), ("x", "f", "hello world")]

    def test_bad_line(self):
        with pytest.raises(InvalidEnvFragmentError):
            sim.parse_env_text("just some words\n")

    def test_format_outputs_sorted(self, library_model):
        outputs, _ = sim.simulate_greedy(
            library_model, env_for(library_model, ("req", "whole", "b42"))
        )
        text = sim.format_outputs(library_model, outputs)
        lines = text.splitlines()
        assert lines == sorted(lines)
        assert all("=" in line for line in lines)
