"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py`` to see the summary lines (they are
written to the terminal even without ``-s``).
"""

import hashlib
import itertools
import math
import random
import struct
import time

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from adversary import byte_mutations, merkle_false_accept_rate, random_dataset
from fuzz import PRINCIPALS, random_script
from golden_pipeline import ARTIFACTS, GOLDEN, run_pipeline
from oracles import access_oracle, assignment_oracle, audit_log, sha256_ref
from uavnft.crypto_core import (
    AuthenticationError,
    Ciphertext,
    CipherSession,
    Digest,
    SymmetricKey,
    decrypt,
    encrypt,
    hash_bytes,
    hash_value,
)
from uavnft.dao_fleet import assign_task, register_uav
from uavnft.ledger import Ledger, TransferUav, dump_log, load_log, replay, verify_chain
from uavnft.merkle import (
    DataBlock,
    MerkleProof,
    build_tree,
    inclusion_proof,
    verify_inclusion,
)
from uavnft.possession_proof import (
    Backend,
    ProofStatement,
    SecurityConfig,
    SigmaTranscript,
    prove,
    setup,
    simulate_sigma,
    verify,
)
from uavnft.privacy import NumericSeries, PrivacyBudget, add_noise, calibrate_sigma
from uavnft.records import LicenseConditions, NftMetadata, Task, UavStatus
from uavnft.registry import check_access, grant_access, mint, revoke_access


@pytest.fixture
def report(request):
    """Prints ``[PASS]``/``[FAIL]`` for the criterion, then asserts it."""
    term = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(name: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        if term is not None:
            term.write_line("")
            term.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


# -- Merkle -------------------------------------------------------------------


def _forgeries(blocks, tree, i):
    """Bit flips, index swaps and truncations of the honest proof for leaf i.
    Yields (block presented, proof) pairs that differ from the honest claim."""
    n = len(blocks)
    honest = inclusion_proof(tree, i)
    raw = honest.to_bytes()
    for bit in range(len(raw) * 8):
        m = bytearray(raw)
        m[bit // 8] ^= 1 << (bit % 8)
        try:
            yield blocks[i], MerkleProof.from_bytes(bytes(m))
        except ValueError:
            yield None, None  # unparsable: rejected at the door
    for j in range(n):
        if j != i:
            yield blocks[i], MerkleProof(j, n, honest.siblings)
            yield blocks[j], honest
    for cut in range(len(honest.siblings)):
        yield blocks[i], MerkleProof(i, n, honest.siblings[:cut])


def test_merkle_correctness(report):
    start = time.perf_counter()
    rng = random.Random(1)
    honest_ok = honest_total = forged = accepted = 0
    for n in range(1, 65):
        blocks = [DataBlock(k, 10 * k, rng.randbytes(rng.randint(0, 24))) for k in range(n)]
        tree = build_tree(blocks)
        for i in range(n):
            honest_total += 1
            honest_ok += verify_inclusion(tree.root, blocks[i], inclusion_proof(tree, i),
                                          leaf_count=n)
        for i in sorted(rng.sample(range(n), min(n, 3))):
            for block, proof in _forgeries(blocks, tree, i):
                forged += 1
                if block is not None and verify_inclusion(tree.root, block, proof,
                                                          leaf_count=n):
                    accepted += 1
    elapsed = time.perf_counter() - start
    ok = honest_ok == honest_total and forged >= 10_000 and accepted == 0 and elapsed < 30
    report("Merkle correctness", ok,
           f"{honest_ok}/{honest_total} honest proofs verify (n=1..64, all indices); "
           f"{accepted} accepts of {forged} forgeries; {elapsed:.1f}s (limit 30s)")


# -- hashing ------------------------------------------------------------------


def test_hash_oracle(report):
    rng = random.Random(7)
    lengths = [0, 1, 55, 56, 63, 64, 65, 119, 120, 128] + [rng.randint(0, 600) for _ in range(140)]
    inputs = [rng.randbytes(k) for k in lengths]
    mismatches = sum(bytes(hash_bytes(x)) != sha256_ref(x) for x in inputs)
    abc_vector = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    raw_ok = hash_bytes(b"abc").hex() == abc_vector == sha256_ref(b"abc").hex()
    canonical = struct.pack(">Q", 3) + b"abc"
    enc_ok = bytes(hash_value("abc")) == sha256_ref(canonical)
    ok = mismatches == 0 and raw_ok and enc_ok
    report("Hash oracle", ok,
           f"{len(inputs) - mismatches}/{len(inputs)} inputs match the reference; "
           f"'abc' vector {'ok' if raw_ok else 'MISMATCH'}; "
           f"canonical 'abc' bytes {'ok' if enc_ok else 'MISMATCH'}")


# -- registry -----------------------------------------------------------------


def test_contract_authorization(report):
    scripts = 20
    violations = outcome_mismatch = 0
    refusals = {"Only the owner can transfer": 0, "Only the owner can grant access": 0}
    for seed in range(scripts):
        ledger = Ledger()
        for step in random_script(random.Random(1000 + seed), 500):
            r = ledger.execute(step.sender, step.action, at=step.time)
            outcome_mismatch += (None if r.ok else r.reason) != step.expected
            if r.reason in refusals:
                refusals[r.reason] += 1
        violations += len(audit_log(ledger.log))
    ok = violations == 0 and outcome_mismatch == 0 and all(refusals.values())
    report("Contract authorization", ok,
           f"{scripts} scripts x 500 tx over {len(PRINCIPALS)} principals; "
           f"{violations} non-owner transfers/grants in history; "
           f"{outcome_mismatch} outcome mismatches; verbatim refusals seen {refusals}")


def test_access_truth_table(report):
    A, B = PRINCIPALS[:2]
    md = NftMetadata("m", "", 0, 5, 2, "z")
    expiration = 100
    mismatches = []
    for exists, revoked, before, cond_ok in itertools.product([False, True], repeat=4):
        ledger = Ledger()
        tid = mint(ledger, A, Digest(b"\x01" * 32), md, at=1)
        if exists:
            grant_access(ledger, A, B, tid, expiration,
                         LicenseConditions(cond_ok, True), at=2)
            if revoked:
                revoke_access(ledger, A, B, tid, at=3)
        for t_now in ((99, 3) if before else (100, 250)):
            if check_access(ledger.state, B, tid, t_now) != access_oracle(
                    exists, revoked, before, cond_ok):
                mismatches.append((exists, revoked, before, cond_ok, t_now))
    report("Access truth table", not mismatches,
           f"16 cases x 2 times, {len(mismatches)} mismatches "
           f"(includes t_now == expiration -> denied)")


# -- ledger -------------------------------------------------------------------


def test_ledger_determinism(report):
    rng = random.Random(99)
    diverged = mutations = survived = 0
    for seed in range(100):
        ledger = Ledger()
        for step in random_script(random.Random(seed), 150):
            ledger.execute(step.sender, step.action, at=step.time)
        text = dump_log(ledger.log)
        if replay(load_log(text)).encode() != ledger.state.encode():
            diverged += 1
        raw = text.encode()
        for pos in rng.sample(range(len(raw)), 20):
            mutated = raw[:pos] + bytes([rng.choice([v for v in range(256) if v != raw[pos]])]) \
                + raw[pos + 1:]
            mutations += 1
            try:
                survived += verify_chain(mutated.decode()).ok
            except UnicodeDecodeError:
                pass  # not even a readable log
    ok = diverged == 0 and survived == 0
    report("Ledger determinism", ok,
           f"100 scripts, {diverged} replay divergences; "
           f"{survived} of {mutations} single-byte log mutations passed verification")


# -- fleet --------------------------------------------------------------------


def _fleet_dicts(state):
    return [{"id": u.uav_id, "loc": u.location, "cap": u.payload_capacity,
             "status": u.status.name.lower()} for u in state.uavs.values()]


def test_task_assignment(report):
    rng = random.Random(2024)
    mismatches = 0
    for inst in range(1000):
        ledger = Ledger()
        lattice = inst % 3 == 0  # integer grids force exact distance ties
        for _ in range(rng.randint(0, 50)):
            loc = tuple(float(rng.randint(-3, 3)) if lattice else rng.uniform(-100, 100)
                        for _ in range(3))
            cap = float(rng.randint(1, 4)) if lattice else rng.uniform(0.5, 10)
            status = rng.choice([UavStatus.AVAILABLE] * 4 + [UavStatus.MAINTENANCE])
            register_uav(ledger, rng.choice(PRINCIPALS), loc, cap, status)
        loc = tuple(float(rng.randint(-3, 3)) if lattice else rng.uniform(-100, 100)
                    for _ in range(3))
        payload = float(rng.randint(1, 4)) if lattice else rng.uniform(0.5, 10)
        radius = rng.choice([math.inf, rng.uniform(2, 150)])
        expected = assignment_oracle(_fleet_dicts(ledger.state),
                                     {"loc": loc, "payload": payload, "radius": radius})
        res = assign_task(ledger, Task(1, loc, payload, 0, radius))
        got = None if res.selected is None else (res.selected, res.distance)
        mismatches += got != expected

    double_booked = 0
    for seed in range(50):
        ledger = Ledger()
        for step in random_script(random.Random(seed), 300):
            ledger.execute(step.sender, step.action, at=step.time)
            active = [t.uav_id for t in ledger.state.tasks.values() if t.active]
            double_booked += len(active) != len(set(active))
    ok = mismatches == 0 and double_booked == 0
    report("Task assignment", ok,
           f"{mismatches} of 1000 instances differ from the exhaustive oracle; "
           f"{double_booked} double-bookings over 50 assign/complete interleavings")


def test_uav_ownership_coherence(report):
    incoherent = rule_mismatch = transfers = 0
    for seed in range(60):
        ledger = Ledger()
        for step in random_script(random.Random(5000 + seed), 250):
            if isinstance(step.action, TransferUav):
                u = ledger.state.uavs.get(step.action.uav_id)
                valid = (u is not None and u.owner == step.sender
                         and u.status != UavStatus.IN_MISSION)
                r = ledger.execute(step.sender, step.action, at=step.time)
                transfers += 1
                rule_mismatch += r.ok != valid
            else:
                ledger.execute(step.sender, step.action, at=step.time)
            s = ledger.state
            incoherent += any(s.owners[u.token_id] != u.owner for u in s.uavs.values())
    ok = incoherent == 0 and rule_mismatch == 0 and transfers > 0
    report("UAV ownership coherence", ok,
           f"{incoherent} incoherent states; {rule_mismatch} of {transfers} UAV transfers "
           f"disagree with the validity rule")


# -- possession proofs --------------------------------------------------------


def _components(t: SigmaTranscript):
    return [int.from_bytes(x, "big") for x in
            (t.commitment, t.announcement, t.challenge, t.response_m, t.response_r)]


def test_possession_proofs(report):
    sigma = setup(Backend.SIGMA_COMMIT)
    toy = setup(Backend.SIGMA_COMMIT, SecurityConfig(group="toy64"))
    merkle = setup(Backend.MERKLE_CHALLENGE, SecurityConfig(challenge_count=4))
    rng = random.Random(3)
    complete = {"sigma": 0, "merkle": 0}
    for k in range(100):
        blocks = random_dataset(rng, rng.randint(1, 20))
        stmt = ProofStatement(build_tree(blocks).root, len(blocks))
        complete["sigma"] += verify(prove(blocks, stmt, sigma, randomness_seed=k), stmt, sigma)
        complete["merkle"] += verify(prove(blocks, stmt, merkle), stmt, merkle)

    blocks = random_dataset(random.Random(6), 5)
    stmt = ProofStatement(build_tree(blocks).root, 5)
    raw = prove(blocks, stmt, toy, randomness_seed=3).to_bytes()
    mutants = mutant_accepts = 0
    for m in byte_mutations(raw, exhaustive=True):
        mutants += 1
        mutant_accepts += verify(m, stmt, toy)

    target = (12 / 16) ** 4
    rate = merkle_false_accept_rate(10_000, 16, 4, 4)

    blocks = random_dataset(random.Random(13), 3)
    stmt = ProofStatement(build_tree(blocks).root, 3)
    grp = toy.group
    srng = random.Random(2)
    real = [_components(prove(blocks, stmt, toy, randomness_seed=i).transcript)
            for i in range(10_000)]
    sim = [_components(simulate_sigma(toy, srng)) for _ in range(10_000)]
    pvalues = []
    for k, bound in enumerate([grp.p, grp.p, grp.q, grp.q, grp.q]):
        table = [[0] * 16 for _ in range(2)]
        for row, sample in ((0, real), (1, sim)):
            for comp in sample:
                table[row][comp[k] * 16 // bound] += 1
        pvalues.append(chi2_contingency(table).pvalue)

    ok = (complete == {"sigma": 100, "merkle": 100} and mutant_accepts == 0
          and abs(rate - target) <= 0.03 and min(pvalues) > 0.01)
    report("Possession proofs", ok,
           f"completeness {complete}; {mutant_accepts} of {mutants} transcript byte "
           f"mutations accepted; MerkleChallenge false accept {rate:.4f} vs {target:.4f} "
           f"(tol 0.03); simulator chi-squared min p={min(pvalues):.3f} (alpha 0.01)")


# -- privacy ------------------------------------------------------------------


def test_privacy_mechanism(report):
    s = NumericSeries((-5.0, 0.0, 0.5, 1.0, 7.0), 0.0, 1.0)
    identity = add_noise(s, 0.0, 11).values == (0.0, 0.0, 0.5, 1.0, 1.0)

    n = 100_000
    noise = np.array(add_noise(NumericSeries((0.0,) * n, -1.0, 1.0), 3.0, 2024).values)
    mean, var = float(noise.mean()), float(noise.var())
    moments = abs(mean) <= 0.03 and abs(var - 9.0) <= 0.15

    worst = 0.0
    for eps, delta, sens in itertools.product([0.1, 0.5, 1.0, 3.0], [1e-9, 1e-5, 0.01, 0.5],
                                              [0.5, 1.0, 200.0]):
        closed = sens * math.sqrt(2.0 * math.log(1.25 / delta)) / eps
        got = calibrate_sigma(PrivacyBudget(eps, delta, sens))
        worst = max(worst, abs(got - closed) / closed)
    ok = identity and moments and worst <= 1e-12
    report("Privacy mechanism", ok,
           f"sigma=0 identity {'exact' if identity else 'BROKEN'}; at sigma=3, n=1e5: "
           f"mean {mean:+.4f} (tol 0.03), var {var:.4f} (9 +/- 0.15); "
           f"calibration max rel err {worst:.1e} (tol 1e-12)")


# -- encryption ---------------------------------------------------------------


def test_encryption(report):
    rng = random.Random(17)
    session = CipherSession()
    failures = 0
    for k in range(1000):
        key = SymmetricKey(rng.randbytes(32))
        pt = rng.randbytes(rng.randint(0, 256))
        ct = encrypt(key, pt, struct.pack(">4xQ", k), session=session)
        failures += decrypt(key, Ciphertext.from_bytes(ct.to_bytes())) != pt

    key = SymmetricKey(hashlib.sha256(b"flip").digest())
    wire = encrypt(key, rng.randbytes(16), bytes(12), session=CipherSession()).to_bytes()
    opened = 0
    for bit in range(len(wire) * 8):
        m = bytearray(wire)
        m[bit // 8] ^= 1 << (bit % 8)
        try:
            decrypt(key, Ciphertext.from_bytes(bytes(m)))
            opened += 1
        except AuthenticationError:
            pass
    ok = failures == 0 and opened == 0
    report("Encryption", ok,
           f"{1000 - failures}/1000 roundtrips; {opened} of {len(wire) * 8} "
           f"single-bit flips decrypted")


# -- end to end ---------------------------------------------------------------


def test_golden_scenario(report, tmp_path):
    start = time.perf_counter()
    produced = run_pipeline(tmp_path)
    elapsed = time.perf_counter() - start
    differing = [name for name in ARTIFACTS if (GOLDEN / name).read_bytes() != produced[name]]
    replay_same = produced["report.txt"] == produced["replay_report.txt"]
    ok = not differing and replay_same and elapsed < 60
    report("Golden scenario", ok,
           f"{len(ARTIFACTS) - len(differing)}/{len(ARTIFACTS)} artifacts byte-identical"
           f"{' (differ: ' + ', '.join(differing) + ')' if differing else ''}; "
           f"replayed report {'matches' if replay_same else 'DIFFERS'}; "
           f"{elapsed:.1f}s (limit 60s)")
