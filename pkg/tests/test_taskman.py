from __future__ import annotations

import copy

import pytest

from taskfleet import entish
from taskfleet.frp import messages
from taskfleet.frp.machine import COORDINATOR, PARTICIPANT, Session, State
from taskfleet.registry import ServiceAttributes, ServiceRecord
from taskfleet.runner import build_runtime, load_config
from taskfleet.taskman import (
    AlreadyTerminal,
    SelectionPolicy,
    UnknownTransaction,
    select_winner,
    situation_to_delta,
)

import os

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "taskfleet", "scenarios")


def scenario_config(name: str) -> dict:
    return load_config(os.path.join(SCENARIO_DIR, f"{name}.yaml"))


def run_scenario_runtime(config):
    runtime = build_runtime(config)
    task = config["scenario"]["task"]
    txn = runtime.run_task(task.get("precondition"), task["effect"])
    return runtime, txn


def trace_types(runtime) -> list[tuple[str, str, str]]:
    return [
        (e.direction, e.message_type, e.peer)
        for _, e in runtime.trace.entries
    ]


class TestSelection:
    R1 = ServiceRecord("svc-1", "T", "physical", entish.TRUE, entish.TRUE,
                       ServiceAttributes(), "sm:1")
    R2 = ServiceRecord("svc-2", "T", "physical", entish.TRUE, entish.TRUE,
                       ServiceAttributes(), "sm:2")

    def quotes(self, p1, t1, p2, t2):
        return [
            (self.R1, messages.Terms(entish.TRUE, p1, t1)),
            (self.R2, messages.Terms(entish.TRUE, p2, t2)),
        ]

    def test_default_policy_prefers_price(self):
        winner = select_winner(self.quotes(10, 60, 40, 30), SelectionPolicy(1.0, 0.0))
        assert winner.service_id == "svc-1"

    def test_time_policy_prefers_short_time(self):
        winner = select_winner(self.quotes(10, 60, 40, 30), SelectionPolicy(0.0, 1.0))
        assert winner.service_id == "svc-2"

    def test_price_scaling_invariance(self):
        for scale in (0.01, 0.5, 3.0, 1000.0):
            winner = select_winner(self.quotes(10 * scale, 60, 40 * scale, 30), SelectionPolicy(1.0, 0.0))
            assert winner.service_id == "svc-1"

    def test_tie_breaks_to_lower_service_id(self):
        winner = select_winner(self.quotes(10, 60, 10, 60), SelectionPolicy(1.0, 0.0))
        assert winner.service_id == "svc-1"


class TestScenario1:
    def test_golden_sequence_and_final_map(self):
        runtime, txn = run_scenario_runtime(scenario_config("scenario1"))
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Completed"
        expected = [
            ("sent", "Arrange", "sm:Robot01:svc-transfer-1"),
            ("sent", "Arrange", "sm:Robot02:svc-transfer-2"),
            ("received", "Terms", "sm:Robot01:svc-transfer-1"),
            ("received", "Terms", "sm:Robot02:svc-transfer-2"),
            ("sent", "Accept", "sm:Robot01:svc-transfer-1"),
            ("sent", "Cancel", "sm:Robot02:svc-transfer-2"),
            ("sent", "Execute", "sm:Robot01:svc-transfer-1"),
            ("received", "Completed", "sm:Robot01:svc-transfer-1"),
            ("sent", "End", "sm:Robot01:svc-transfer-1"),
            ("sent", "End", "sm:Robot02:svc-transfer-2"),
        ]
        assert trace_types(runtime) == expected
        ontology, world, _ = runtime.repository.get_snapshot()
        assert entish.find_bindings(entish.parse("Jar002 isOn Platform001"), world, ontology)
        assert runtime.tm.all_sessions_ended(txn)

    def test_effect_already_true_completes_without_messages(self):
        config = scenario_config("scenario1")
        runtime = build_runtime(config)
        txn = runtime.run_task(None, "Jar002 isOn Shelf03")
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Completed"
        assert view["plan"]["nodes"] == []
        assert runtime.trace.entries == []

    def test_unknown_object_aborts_malformed(self):
        config = scenario_config("scenario1")
        runtime = build_runtime(config)
        txn = runtime.run_task(None, "Ghost999 isOn Platform001")
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Aborted"
        assert "MalformedFormula" in view["reason"]

    def test_syntax_error_raises(self):
        config = scenario_config("scenario1")
        runtime = build_runtime(config)
        with pytest.raises(entish.FormulaSyntaxError):
            runtime.tm.submit_task(None, "Jar002 isOn")


class TestScenario1b:
    def test_failure_rearrangement_goes_only_to_second_service(self):
        runtime, txn = run_scenario_runtime(scenario_config("scenario1b"))
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Completed"
        seq = trace_types(runtime)
        failed_at = seq.index(("received", "Failed", "sm:Robot01:svc-transfer-1"))
        after = seq[failed_at + 1 :]
        arranges_after = [x for x in after if x[1] == "Arrange"]
        assert arranges_after == [("sent", "Arrange", "sm:Robot02:svc-transfer-2")]
        end_peers = {peer for d, t, peer in seq if t == "End"}
        assert end_peers == {"sm:Robot01:svc-transfer-1", "sm:Robot02:svc-transfer-2"}
        assert runtime.tm.all_sessions_ended(txn)

    def test_failed_message_carries_position_formula(self):
        runtime, txn = run_scenario_runtime(scenario_config("scenario1b"))
        failed = [
            e.envelope
            for e in runtime.tm.history_of(txn)
            if e.message_type == "Failed" and e.envelope is not None
        ]
        assert len(failed) == 1
        text = entish.to_text(failed[0].body.failure_description)
        assert text == "Jar002.PositionX = 12.5 AND Jar002.PositionY = 1.3 AND Jar002.PositionZ = 7"

    def test_second_arrange_precondition_is_failure_situation(self):
        runtime, txn = run_scenario_runtime(scenario_config("scenario1b"))
        arranges = [
            e.envelope
            for e in runtime.tm.history_of(txn)
            if e.message_type == "Arrange" and e.envelope is not None
        ]
        last = arranges[-1]
        assert "Jar002.PositionZ = 7" in entish.to_text(last.body.precondition)


def two_jar_config(tmp_path) -> dict:
    """Scenario-1 world plus a second jar on the shelf; plan bound 2."""
    import yaml

    with open(os.path.join(SCENARIO_DIR, "world_jar.yaml"), "r", encoding="utf-8") as f:
        world_doc = yaml.safe_load(f)
    jar3 = {
        "id": "Jar003",
        "type": "Jar",
        "attributes": {
            "PositionX": 13.5,
            "PositionY": 1.3,
            "PositionZ": 3.0,
            "Weight": 0.5,
            "Dimensions": {"Width": 0.1, "Height": 0.2, "Depth": 0.1},
        },
        "relations": [{"name": "isOn", "args": ["Jar003", "Shelf03"]}],
    }
    world_doc["world"]["subobjects"].append(jar3)
    world_path = tmp_path / "world_two_jars.yaml"
    with open(world_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(world_doc, f, sort_keys=False)
    config = copy.deepcopy(scenario_config("scenario1"))
    config["world"] = str(world_path)
    config["_base_dir"] = str(tmp_path)
    config["taskman"]["plan_bound"] = 2
    return config


def fault_matrix_config(script: str) -> dict:
    config = copy.deepcopy(scenario_config("scenario1"))
    config["faults"] = []
    if script == "driveFailure@carry":
        config["faults"] = [{"kind": "driveFailure", "target": "Robot01", "at_time": 7.0}]
    elif script == "commLoss@carry":
        config["faults"] = [{"kind": "commLoss", "target": "Robot01", "at_time": 7.0}]
    elif script == "both-services-fail":
        config["faults"] = [
            {"kind": "driveFailure", "target": "Robot01", "at_time": 7.0},
            {"kind": "driveFailure", "target": "Robot02", "at_time": 9.0},
        ]
    elif script == "refuse-all":
        for robot in ("Robot01", "Robot02"):
            config["robots"][robot]["refuse_arrange"] = True
    return config


def transfer_capable_service_remains(config: dict) -> bool:
    """Brute-force reachability on the fixture: some transfer service can
    still finish (not drive-failed by the script, not refusing); a comm-lost
    carrier additionally needs the cognitive service to recover the state."""
    faulted = {f["target"]: f["kind"] for f in config.get("faults", [])}
    has_cognitive = any(
        s.get("kind") == "cognitive"
        for r in config["robots"].values()
        for s in r.get("services", [])
    )
    survivors = []
    comm_lost_carrier = False
    for robot_id, robot in config["robots"].items():
        services = [s for s in robot.get("services", []) if s.get("kind", "physical") == "physical"]
        if not services:
            continue
        if robot.get("refuse_arrange"):
            continue
        kind = faulted.get(robot_id)
        if kind == "driveFailure":
            continue
        if kind == "commLoss":
            comm_lost_carrier = True
            continue
        survivors.append(robot_id)
    if not survivors:
        return False
    if comm_lost_carrier and not has_cognitive:
        return False
    return True


FAULT_SCRIPTS = ["none", "driveFailure@carry", "commLoss@carry", "both-services-fail", "refuse-all"]


class TestFaultMatrix:
    @pytest.mark.parametrize("script", FAULT_SCRIPTS)
    def test_trichotomy_and_sessions_ended(self, script):
        config = fault_matrix_config(script)
        runtime, txn = run_scenario_runtime(config)
        view = runtime.tm.get_view(txn)
        assert view["status"] in ("Completed", "Aborted", "Cancelled")
        expected_complete = transfer_capable_service_remains(config)
        assert (view["status"] == "Completed") == expected_complete, (script, view)
        assert runtime.tm.all_sessions_ended(txn)
        for manager in runtime.managers.values():
            for sid, state in manager.session_states.items():
                assert state == State.ENDED, (script, sid, state)
        assert runtime.world.check_conservation() == []

    def test_comm_loss_invokes_cognitive_service(self):
        runtime, txn = run_scenario_runtime(fault_matrix_config("commLoss@carry"))
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Completed"
        peers = {e.peer for _, e in runtime.trace.entries if e.message_type == "Arrange"}
        assert "sm:Robot03:svc-recognize-1" in peers

    def test_history_replays_without_violations(self):
        for script in FAULT_SCRIPTS:
            runtime, txn = run_scenario_runtime(fault_matrix_config(script))
            replay_history(runtime.tm.history_of(txn))


def replay_history(history) -> None:
    """Re-run both state machines over a logged history; duplicates are no-ops."""
    coordinators: dict[str, Session] = {}
    participants: dict[str, Session] = {}
    for entry in history:
        if entry.envelope is None:
            continue
        sid = entry.session_id
        coordinator = coordinators.setdefault(sid, Session(COORDINATOR, sid))
        participant = participants.setdefault(sid, Session(PARTICIPANT, sid))
        if entry.direction == "sent":
            coordinator.on_send(entry.envelope)
            participant.on_receive(entry.envelope)
            state = participant.state
            participant.on_receive(entry.envelope)  # duplicate delivery
            assert participant.state == state
        elif entry.direction == "received":
            participant.on_send(entry.envelope)
            coordinator.on_receive(entry.envelope)
            state = coordinator.state
            coordinator.on_receive(entry.envelope)
            assert coordinator.state == state


class TestCancel:
    def test_cancel_while_arranging_sends_cancels(self):
        config = copy.deepcopy(scenario_config("scenario1"))
        # Stretch the quote phase: no SM ever answers because both refuse...
        # instead, cancel right after submission, before the loop runs.
        runtime = build_runtime(config)
        txn = runtime.tm.submit_task("Jar002 isOn ?Shelf", "Jar002 isOn Platform001")
        runtime.tm.cancel(txn)
        runtime.loop.run_until_idle()
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Cancelled"
        assert runtime.tm.all_sessions_ended(txn)

    def test_cancel_mid_execution_stops_and_compensates(self):
        config = copy.deepcopy(scenario_config("scenario1"))
        runtime = build_runtime(config)
        txn = runtime.tm.submit_task("Jar002 isOn ?Shelf", "Jar002 isOn Platform001")
        # Run the arrangement and the first part of the carry, then cancel.
        runtime.loop.run_until_idle(max_time=5.0)
        assert runtime.tm.get_view(txn)["status"] == "Executing"
        runtime.tm.cancel(txn)
        runtime.loop.run_until_idle()
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Cancelled"
        types = [t for _, t, _ in trace_types(runtime)]
        assert "Stop" in types
        assert runtime.tm.all_sessions_ended(txn)
        assert runtime.world.check_conservation() == []

    def test_cancel_after_completion_is_already_terminal(self):
        runtime, txn = run_scenario_runtime(scenario_config("scenario1"))
        with pytest.raises(AlreadyTerminal):
            runtime.tm.cancel(txn)

    def test_cancel_unknown_transaction(self):
        runtime = build_runtime(scenario_config("scenario1"))
        with pytest.raises(UnknownTransaction):
            runtime.tm.cancel("t999")

    def test_precondition_free_task_plans_from_live_map(self):
        # After the jar lands on the platform, a task with no precondition
        # still plans: the initial situation comes from the repository map.
        runtime, txn = run_scenario_runtime(scenario_config("scenario1"))
        txn2 = runtime.tm.submit_task(None, "Jar002 isOn Shelf03")
        runtime.loop.run_until_idle()
        view = runtime.tm.get_view(txn2)
        assert view["status"] == "Completed"
        ontology, world, _ = runtime.repository.get_snapshot()
        assert entish.find_bindings(entish.parse("Jar002 isOn Shelf03"), world, ontology)

    def test_cancel_after_node_completed_compensates(self, tmp_path):
        # Two independent transfers; cancel after the first completes: the
        # done node is compensated (jar back on the shelf), the running one
        # is stopped.
        config = two_jar_config(tmp_path)
        runtime = build_runtime(config)
        txn = runtime.tm.submit_task(
            "Jar002 isOn Shelf03 AND Jar003 isOn Shelf03",
            "Jar002 isOn Platform001 AND Jar003 isOn Platform001",
        )
        runtime.loop.run_until_idle(max_time=12.0)
        participants = runtime.tm.get_view(txn)["participants"]
        statuses = sorted(p["status"] for p in participants.values())
        assert "done" in statuses and "executing" in statuses
        runtime.tm.cancel(txn)
        runtime.loop.run_until_idle()
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Cancelled"
        types = [t for _, t, _ in trace_types(runtime)]
        assert "Stop" in types
        assert "Compensate" in types and "Compensated" in types
        ontology, world, _ = runtime.repository.get_snapshot()
        assert entish.find_bindings(entish.parse("Jar002 isOn Shelf03"), world, ontology)
        assert runtime.tm.all_sessions_ended(txn)
        assert runtime.world.check_conservation() == []


class TestRecoveryEdges:
    def test_single_service_failure_with_no_replans_aborts(self):
        config = copy.deepcopy(scenario_config("scenario1b"))
        del config["robots"]["Robot02"]
        del config["robots"]["Robot03"]
        config["taskman"]["recovery"]["max_replans"] = 0
        runtime, txn = run_scenario_runtime(config)
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Aborted"
        assert "RecoveryExhausted" in view["reason"]
        statuses = [
            e.body_summary for e in runtime.tm.history_of(txn) if e.message_type == "StatusChanged"
        ]
        assert any(s.startswith("Recovering") for s in statuses)
        assert runtime.tm.all_sessions_ended(txn)

    def test_total_quote_silence_times_out_then_aborts(self):
        # Both transfer robots lose comms before anything starts: Arranges go
        # unanswered, the quote deadline fires, and recovery runs dry.
        config = copy.deepcopy(scenario_config("scenario1"))
        config["faults"] = [
            {"kind": "commLoss", "target": "Robot01", "at_time": 0.0},
            {"kind": "commLoss", "target": "Robot02", "at_time": 0.0},
        ]
        runtime, txn = run_scenario_runtime(config)
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Aborted"
        assert runtime.loop.now() >= 5.0  # the quote timeout actually elapsed
        assert runtime.tm.all_sessions_ended(txn)

    def test_silence_without_cognitive_service_still_substitutes(self):
        config = fault_matrix_config("commLoss@carry")
        config["robots"]["Robot03"]["services"] = []
        runtime, txn = run_scenario_runtime(config)
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Completed"
        peers = {e.peer for _, e in runtime.trace.entries if e.message_type == "Arrange"}
        assert all("recognize" not in p for p in peers)
        assert runtime.tm.all_sessions_ended(txn)


class TestCompensationAcrossReplans:
    def test_completed_work_from_an_abandoned_plan_is_compensated(self, tmp_path):
        # One robot carries out node 1, breaks during node 2, and the replan
        # finds nobody able to help: the transaction aborts, but node 1's
        # completed transfer still receives a Compensate.
        config = two_jar_config(tmp_path)
        del config["robots"]["Robot02"]
        del config["robots"]["Robot03"]
        config["faults"] = [{"kind": "driveFailure", "target": "Robot01", "at_time": 25.0}]
        runtime = build_runtime(config)
        txn = runtime.tm.submit_task(
            "Jar002 isOn Shelf03 AND Jar003 isOn Shelf03",
            "Jar002 isOn Platform001 AND Jar003 isOn Platform001",
        )
        runtime.loop.run_until_idle()
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Aborted"
        types = [t for _, t, _ in trace_types(runtime)]
        assert "Compensate" in types and "Compensated" in types
        assert runtime.tm.all_sessions_ended(txn)
        assert runtime.world.check_conservation() == []


class TestLazyArrangement:
    def test_scenario1_outcome_matches_eager_mode(self):
        config = copy.deepcopy(scenario_config("scenario1"))
        config["taskman"]["eager_arrangement"] = False
        runtime, txn = run_scenario_runtime(config)
        view = runtime.tm.get_view(txn)
        assert view["status"] == "Completed"
        types = [t for _, t, _ in trace_types(runtime)]
        assert types.count("Arrange") == 2 and types.count("Execute") == 1
        assert runtime.tm.all_sessions_ended(txn)


class TestSituationToDelta:
    def test_attribute_and_relation_supersede(self, ontology, world):
        situation = entish.parse(
            "Jar002 isOn Platform001 AND Jar002.PositionZ = 12"
        )
        delta, prior = situation_to_delta(situation, world)
        from taskfleet.ontology import apply_delta

        updated = apply_delta(world, delta, ontology)
        assert entish.find_bindings(situation, updated, ontology)
        prior_text = entish.to_text(prior)
        assert "Jar002 isOn Shelf03" in prior_text
        assert "Jar002.PositionZ = 3" in prior_text
        # Applying the prior as a new situation undoes the move.
        delta2, _ = situation_to_delta(prior, updated)
        restored = apply_delta(updated, delta2, ontology)
        assert entish.find_bindings(entish.parse("Jar002 isOn Shelf03"), restored, ontology)
