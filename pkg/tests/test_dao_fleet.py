import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzz import PRINCIPALS, random_script
from oracles import assignment_oracle, random_locations
from uavnft.dao_fleet import (
    AssignmentResult,
    Failure,
    Success,
    assign_task,
    complete_task,
    register_uav,
    select_uav,
    status_counts,
    transfer_uav,
)
from uavnft.ledger import Ledger, Revert, history, replay
from uavnft.records import Task, UavStatus
from uavnft.registry import owner_of

A, B, C = PRINCIPALS[:3]
ORIGIN = (0.0, 0.0, 0.0)


def fleet_dicts(state):
    return [{"id": u.uav_id, "loc": u.location, "cap": u.payload_capacity,
             "status": u.status.name.lower()} for u in state.uavs.values()]


def test_empty_fleet_selects_nothing():
    ledger = Ledger()
    res = assign_task(ledger, Task(1, ORIGIN, 1.0))
    assert res == AssignmentResult(1)
    assert ledger.log == ()


def test_registration_mints_companion_token():
    ledger = Ledger()
    u1 = register_uav(ledger, A, (1.0, 2.0, 3.0), 5.0, at=1)
    u2 = register_uav(ledger, B, ORIGIN, 2.0, at=2)
    assert (u1, u2) == (1, 2)
    t1, t2 = ledger.state.uavs[1].token_id, ledger.state.uavs[2].token_id
    assert t1 != t2
    assert owner_of(ledger.state, t1) == A and owner_of(ledger.state, t2) == B
    assert ledger.state.tokens[t1].metadata.mission_id == "uav-registration"


@pytest.mark.parametrize("cap", [0.0, -1.0, math.inf, math.nan])
def test_invalid_registration_reverts(cap):
    with pytest.raises(Revert, match="invalid uav"):
        register_uav(Ledger(), A, ORIGIN, cap)


def test_feasibility_dominates_proximity():
    ledger = Ledger()
    register_uav(ledger, A, (10.0, 0.0, 0.0), 5.0)
    register_uav(ledger, A, (5.0, 0.0, 0.0), 1.0)
    res = assign_task(ledger, Task(1, ORIGIN, 2.0))
    assert (res.selected, res.distance) == (1, 10.0)


def test_tie_goes_to_lowest_id():
    ledger = Ledger()
    for loc in [(3.0, 0.0, 0.0), (0.0, 3.0, 0.0), (0.0, 0.0, -3.0)]:
        register_uav(ledger, A, loc, 1.0)
    assert assign_task(ledger, Task(1, ORIGIN, 1.0)).selected == 1
    assert assign_task(ledger, Task(2, ORIGIN, 1.0)).selected == 2


def test_radius_filter_and_maintenance_excluded():
    ledger = Ledger()
    register_uav(ledger, A, (1.0, 0.0, 0.0), 1.0, status=UavStatus.MAINTENANCE)
    register_uav(ledger, A, (20.0, 0.0, 0.0), 1.0)
    assert assign_task(ledger, Task(1, ORIGIN, 1.0, max_radius=19.9)).selected is None
    assert assign_task(ledger, Task(1, ORIGIN, 1.0, max_radius=20.0)).selected == 2


def test_invalid_and_duplicate_tasks_revert():
    ledger = Ledger()
    register_uav(ledger, A, ORIGIN, 1.0)
    register_uav(ledger, A, ORIGIN, 1.0)
    with pytest.raises(Revert, match="invalid task"):
        assign_task(ledger, Task(1, ORIGIN, 0.0))
    assign_task(ledger, Task(1, ORIGIN, 1.0))
    with pytest.raises(Revert, match="duplicate task"):
        assign_task(ledger, Task(1, ORIGIN, 1.0))


def test_lifecycle_complete_releases_uav():
    ledger = Ledger()
    register_uav(ledger, A, ORIGIN, 1.0)
    assert assign_task(ledger, Task(1, ORIGIN, 1.0)).selected == 1
    assert assign_task(ledger, Task(2, ORIGIN, 1.0)).selected is None
    with pytest.raises(Revert, match="not the operator"):
        complete_task(ledger, B, 1)
    complete_task(ledger, A, 1)
    with pytest.raises(Revert, match="task not active"):
        complete_task(ledger, A, 1)
    with pytest.raises(Revert, match="task not active"):
        complete_task(ledger, A, 77)
    assert assign_task(ledger, Task(2, ORIGIN, 1.0)).selected == 1


def test_transfer_rules():
    ledger = Ledger()
    register_uav(ledger, A, ORIGIN, 1.0)
    tid = ledger.state.uavs[1].token_id
    before = ledger.state
    assert transfer_uav(ledger, B, 1, C) == Failure("not current owner")
    assert ledger.state is before
    assert transfer_uav(ledger, A, 9, C) == Failure("unknown uav")
    assign_task(ledger, Task(1, ORIGIN, 1.0))
    assert transfer_uav(ledger, A, 1, B) == Failure("UAV in mission")
    complete_task(ledger, A, 1)
    assert transfer_uav(ledger, A, 1, B) == Success()
    assert ledger.state.uavs[1].owner == B == owner_of(ledger.state, tid)
    assert [type(tx.action).__name__ for tx in history(ledger.state, tid)] == [
        "RegisterUav", "TransferUav"]


def test_new_owner_completes_missions():
    ledger = Ledger()
    register_uav(ledger, A, ORIGIN, 1.0)
    transfer_uav(ledger, A, 1, B)
    assign_task(ledger, Task(1, ORIGIN, 1.0))
    with pytest.raises(Revert, match="not the operator"):
        complete_task(ledger, A, 1)
    complete_task(ledger, B, 1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32))
def test_selection_matches_oracle(seed):
    rng = random.Random(seed)
    ledger = Ledger()
    for loc in random_locations(rng, rng.randint(0, 50)):
        status = rng.choice([UavStatus.AVAILABLE] * 4 + [UavStatus.MAINTENANCE])
        register_uav(ledger, rng.choice(PRINCIPALS), loc, rng.uniform(0.5, 10), status)
    for task_id in range(1, 21):
        loc = random_locations(rng, 1)[0]
        payload = rng.uniform(0.5, 10)
        radius = rng.choice([math.inf, rng.uniform(20, 150)])
        expected = assignment_oracle(fleet_dicts(ledger.state),
                                     {"loc": loc, "payload": payload, "radius": radius})
        res = assign_task(ledger, Task(task_id, loc, payload, 0, radius))
        if expected is None:
            assert res.selected is None
        else:
            assert res.selected == expected[0]
            assert res.distance == expected[1]


def test_select_uav_on_lattice_ties():
    # integer lattice positions produce many exact distance ties
    rng = random.Random(5)
    for _ in range(200):
        ledger = Ledger()
        for _ in range(rng.randint(1, 30)):
            loc = tuple(float(rng.randint(-2, 2)) for _ in range(3))
            register_uav(ledger, A, loc, float(rng.randint(1, 3)))
        task = Task(1, (0.0, 0.0, 0.0), float(rng.randint(1, 3)))
        got = select_uav(ledger.state.uavs, task)
        exp = assignment_oracle(fleet_dicts(ledger.state),
                                {"loc": task.location, "payload": task.required_payload,
                                 "radius": math.inf})
        assert (got and got[0]) == (exp and exp[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_fleet_invariants_hold_at_every_step(seed):
    ledger = Ledger()
    for step in random_script(random.Random(seed), 200):
        ledger.execute(step.sender, step.action, at=step.time)
        s = ledger.state
        for u in s.uavs.values():
            assert s.owners[u.token_id] == u.owner
        assert sum(status_counts(s).values()) == len(s.uavs)
        active = [t.uav_id for t in s.tasks.values() if t.active]
        assert len(active) == len(set(active))
        assert set(active) == {u.uav_id for u in s.uavs.values()
                               if u.status == UavStatus.IN_MISSION}


def test_assignment_trace_deterministic():
    def trace(seed):
        ledger = Ledger()
        for step in random_script(random.Random(seed), 150):
            ledger.execute(step.sender, step.action, at=step.time)
        return [(t, r.uav_id, r.distance) for t, r in sorted(ledger.state.tasks.items())]
    assert trace(42) == trace(42)
    ledger = Ledger()
    for step in random_script(random.Random(42), 150):
        ledger.execute(step.sender, step.action, at=step.time)
    assert replay(ledger.log).tasks == ledger.state.tasks
