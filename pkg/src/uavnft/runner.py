"""Scripted end-to-end runs: run configuration, script execution, fleet
scenarios and the plain-text ledger report.

The report is a pure function of ledger state (plus an optional label map), so
replaying a run's log reproduces it byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from . import dao_fleet, possession_proof, privacy, registry
from .dataset import RecordParseError, ingest, load_records
from .ledger import Ledger, LedgerState, Revert, dump_log
from .records import (
    DEFAULT_PRINCIPAL_SEED,
    LicenseConditions,
    Principal,
    Task,
    UavStatus,
    UsageClass,
)

log = logging.getLogger(__name__)

CONFIG_ENV = "UAVNFT_CONFIG"

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_PARSE = 2
EXIT_UNEXPECTED_REVERT = 3
EXIT_MISSING_REVERT = 4

BACKENDS = {"sigma": possession_proof.Backend.SIGMA_COMMIT,
            "merkle": possession_proof.Backend.MERKLE_CHALLENGE}


@dataclass(frozen=True)
class RunConfig:
    ledger_path: str = "uavnft.log"
    genesis_seed: str = DEFAULT_PRINCIPAL_SEED
    clock_mode: str = "scripted"
    chunk_size: int = 1
    proof_backend: str = "sigma"
    proof_seed: str = "uavnft/proof/v1"
    proof_group: str = "modp2048"
    challenge_count: int = 8
    epsilon: float = 1.0
    delta: float = 1e-5

    def __post_init__(self):
        if self.clock_mode not in ("scripted", "stepped"):
            raise ValueError(f"clock_mode must be 'scripted' or 'stepped', not {self.clock_mode!r}")
        if not self.genesis_seed or not self.proof_seed:
            raise ValueError("seeds must be non-empty")
        if self.proof_backend not in BACKENDS:
            raise ValueError(f"unknown proof backend {self.proof_backend!r}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    def principal(self, label: str) -> Principal:
        return Principal.from_label(label, self.genesis_seed)

    def proof_params(self, backend: str | None = None) -> possession_proof.ProofParams:
        cfg = possession_proof.SecurityConfig(self.proof_seed, self.proof_group,
                                              self.challenge_count)
        return possession_proof.setup(BACKENDS[backend or self.proof_backend], cfg)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read a JSON config from ``path`` or ``$UAVNFT_CONFIG``; defaults otherwise."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw)


# ---------------------------------------------------------------------------
# report


def _who(p: Principal, labels: dict[Principal, str]) -> str:
    return f"{labels[p]} ({p})" if p in labels else str(p)


def render_report(state: LedgerState, labels: dict[Principal, str] | None = None) -> str:
    labels = labels or {}
    now = state.last_time
    out = [
        "uavnft ledger report",
        f"head_digest: {state.head_digest.hex()}",
        f"transactions: {state.last_seq}",
        f"logical_time: {now}",
        "",
        f"[tokens] count={len(state.tokens)}",
    ]
    for tid in sorted(state.tokens):
        tok = state.tokens[tid]
        md = tok.metadata
        refs = ", ".join(
            f"{seq}:{type(state.log[seq - 1].action).__name__}" for seq in state.token_refs[tid])
        out += [
            f"token {tid}",
            f"  owner: {_who(state.owners[tid], labels)}",
            f"  data_root: {tok.data_root.hex()}",
            f"  mission_id: {md.mission_id}",
            f"  uav_id: {md.uav_id}",
            f"  time_span: {md.start_time}..{md.end_time}",
            f"  block_count: {md.block_count}",
            f"  declared_region: {md.declared_region}",
            f"  history: {refs}",
        ]
    out += ["", f"[access] count={len(state.grants)} evaluated_at={now}"]
    for key in sorted(state.grants):
        g = state.grants[key]
        c = g.conditions
        verdict = "granted" if registry.grant_allows(g, now) else "denied"
        out.append(
            f"token {g.token_id} grantee {_who(g.grantee, labels)}: expiration={g.expiration}"
            f" fee_paid={c.fee_paid} region_ok={c.region_ok} usage={c.usage_class.name.lower()}"
            f" revoked={g.revoked} access={verdict}")
    out += ["", f"[uavs] count={len(state.uavs)}"]
    for uid in sorted(state.uavs):
        u = state.uavs[uid]
        loc = ", ".join(repr(c) for c in u.location)
        out.append(f"uav {uid}: owner={_who(u.owner, labels)} token={u.token_id}"
                   f" status={u.status.name.lower()} location=({loc})"
                   f" payload_capacity={u.payload_capacity!r}")
    out += ["", f"[tasks] count={len(state.tasks)}"]
    for task_id in sorted(state.tasks):
        rec = state.tasks[task_id]
        out.append(f"task {task_id}: uav={rec.uav_id} distance={rec.distance!r}"
                   f" urgency={rec.task.urgency} active={rec.active}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# script execution


class ScriptParseError(ValueError):
    pass


class StepError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_OTHER):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass
class RunResult:
    exit_code: int
    message: str
    state: LedgerState
    trace: list[dict] = field(default_factory=list)
    labels: dict[Principal, str] = field(default_factory=dict)


def _req(cmd: dict, key: str, kind: type | tuple = object):
    if key not in cmd:
        raise ScriptParseError(f"step {cmd.get('seq')}: missing field {key!r}")
    value = cmd[key]
    if kind is not object and (not isinstance(value, kind) or isinstance(value, bool)
                               and kind is not bool):
        raise ScriptParseError(f"step {cmd.get('seq')}: field {key!r} has wrong type")
    return value


def _vec3(cmd: dict, key: str):
    v = _req(cmd, key, list)
    if len(v) != 3 or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v):
        raise ScriptParseError(f"step {cmd.get('seq')}: {key!r} must be 3 numbers")
    return tuple(float(c) for c in v)


def parse_script(text: str, require_seq: bool = True) -> list[dict]:
    steps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            cmd = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScriptParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(cmd, dict) or not isinstance(cmd.get("op"), str):
            raise ScriptParseError(f"line {lineno}: each step needs an 'op'")
        expected = len(steps) + 1
        if require_seq and cmd.get("seq") != expected:
            raise ScriptParseError(f"line {lineno}: expected seq {expected}, got {cmd.get('seq')}")
        cmd.setdefault("seq", expected)
        if cmd["op"] not in _OPS:
            raise ScriptParseError(f"line {lineno}: unknown op {cmd['op']!r}")
        steps.append(cmd)
    return steps


class ScriptRunner:
    """Executes script steps against one ledger, collecting a trace."""

    def __init__(self, config: RunConfig, base_dir: Path, out_dir: Path,
                 ledger: Ledger | None = None):
        self.config = config
        self.base_dir = base_dir
        self.out_dir = out_dir
        self.ledger = ledger or Ledger()
        self.labels: dict[Principal, str] = {}
        self.trace: list[dict] = []
        self._datasets: dict[tuple[str, int], Any] = {}

    # helpers ---------------------------------------------------------------

    def who(self, label: str) -> Principal:
        if not isinstance(label, str) or not label:
            raise ScriptParseError(f"invalid principal label {label!r}")
        p = self.config.principal(label)
        self.labels[p] = label
        return p

    def time_of(self, cmd: dict) -> int:
        if self.config.clock_mode == "stepped":
            return max(cmd["seq"], self.ledger.now)
        t = cmd.get("time", self.ledger.now)
        if isinstance(t, bool) or not isinstance(t, int) or t < 0:
            raise ScriptParseError(f"step {cmd['seq']}: time must be a non-negative integer")
        return t

    def dataset(self, cmd: dict):
        rel = _req(cmd, "dataset", str)
        size = cmd.get("chunk_size", self.config.chunk_size)
        key = (rel, size)
        if key not in self._datasets:
            self._datasets[key] = ingest(self.base_dir / rel, size)
        return self._datasets[key]

    def out_path(self, name: str) -> Path:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    # driver ----------------------------------------------------------------

    def run(self, steps: list[dict]) -> RunResult:
        for cmd in steps:
            seq = cmd["seq"]
            expect = cmd.get("expect_revert")
            entry = {"seq": seq, "op": cmd["op"]}
            try:
                entry["result"] = _OPS[cmd["op"]](self, cmd)
            except Revert as exc:
                entry.update(status="reverted", reason=exc.reason)
                if expect is None:
                    self.trace.append(entry)
                    return self._finish(EXIT_UNEXPECTED_REVERT,
                                        f"step {seq} reverted unexpectedly: {exc.reason}")
                if expect is not True and expect != exc.reason:
                    self.trace.append(entry)
                    return self._finish(EXIT_UNEXPECTED_REVERT,
                                        f"step {seq} reverted with {exc.reason!r}, "
                                        f"expected {expect!r}")
                entry["status"] = "expected-revert"
                self.trace.append(entry)
                continue
            except ScriptParseError as exc:
                return self._finish(EXIT_PARSE, str(exc))
            except RecordParseError as exc:
                return self._finish(EXIT_PARSE, f"step {seq}: dataset {exc}")
            except StepError as exc:
                entry.update(status="error", reason=str(exc))
                self.trace.append(entry)
                return self._finish(exc.exit_code, f"step {seq}: {exc}")
            entry["status"] = "ok"
            self.trace.append(entry)
            if expect is not None:
                return self._finish(EXIT_MISSING_REVERT,
                                    f"step {seq} was expected to revert but succeeded")
        return self._finish(EXIT_OK, "ok")

    def _finish(self, code: int, message: str) -> RunResult:
        return RunResult(code, message, self.ledger.state, self.trace, dict(self.labels))


def _op_mint(r: ScriptRunner, cmd: dict):
    data = r.dataset(cmd)
    meta = data.metadata(_req(cmd, "mission", str), cmd.get("uav", ""), cmd.get("region", ""))
    token = registry.mint(r.ledger, r.who(_req(cmd, "sender")), data.root, meta, r.time_of(cmd))
    return {"token": token, "data_root": data.root.hex(), "blocks": len(data.blocks)}


def _op_transfer(r: ScriptRunner, cmd: dict):
    sender = r.who(_req(cmd, "sender"))
    src = r.who(cmd["from"]) if "from" in cmd else sender
    registry.transfer_token(r.ledger, sender, src, r.who(_req(cmd, "to")),
                            _req(cmd, "token", int), r.time_of(cmd))
    return None


def _conditions(cmd: dict) -> LicenseConditions:
    usage = cmd.get("usage", "view")
    try:
        usage_class = UsageClass[usage.upper()]
    except (KeyError, AttributeError):
        raise ScriptParseError(f"step {cmd['seq']}: unknown usage {usage!r}") from None
    return LicenseConditions(bool(cmd.get("fee_paid", False)), bool(cmd.get("region_ok", True)),
                             usage_class)


def _op_grant(r: ScriptRunner, cmd: dict):
    registry.grant_access(r.ledger, r.who(_req(cmd, "sender")), r.who(_req(cmd, "grantee")),
                          _req(cmd, "token", int), _req(cmd, "expires", int), _conditions(cmd),
                          r.time_of(cmd))
    return None


def _op_revoke(r: ScriptRunner, cmd: dict):
    registry.revoke_access(r.ledger, r.who(_req(cmd, "sender")), r.who(_req(cmd, "grantee")),
                           _req(cmd, "token", int), r.time_of(cmd))
    return None


def _op_check(r: ScriptRunner, cmd: dict):
    now = cmd.get("now", r.ledger.now)
    verdict = registry.check_access(r.ledger.state, r.who(_req(cmd, "grantee")),
                                    _req(cmd, "token", int), now)
    if "expect" in cmd and cmd["expect"] != verdict:
        raise StepError(f"check returned {verdict}, expected {cmd['expect']}")
    return {"access": verdict, "now": now}


def _op_history(r: ScriptRunner, cmd: dict):
    txs = registry.history(r.ledger.state, _req(cmd, "token", int))
    return [{"seq": tx.seq, "action": type(tx.action).__name__} for tx in txs]


def _statement(r: ScriptRunner, token: int) -> possession_proof.ProofStatement:
    try:
        return possession_proof.statement_for_token(r.ledger.state, token)
    except KeyError as exc:
        raise StepError(str(exc)) from None


def _op_prove(r: ScriptRunner, cmd: dict):
    token = _req(cmd, "token", int)
    backend = cmd.get("backend", r.config.proof_backend)
    if backend not in BACKENDS:
        raise ScriptParseError(f"step {cmd['seq']}: unknown backend {backend!r}")
    params = r.config.proof_params(backend)
    statement = _statement(r, token)
    try:
        proof = possession_proof.prove(r.dataset(cmd).blocks, statement, params,
                                       cmd.get("seed", 0))
    except ValueError as exc:
        raise StepError(f"prove failed: {exc}") from None
    ok = possession_proof.verify(proof.to_bytes(), statement, params)
    digest = possession_proof.proof_digest(proof)
    result = {"backend": backend, "verified": ok, "proof_digest": digest.hex(),
              "revealed_blocks": len(proof.revealed_blocks)}
    if "out" in cmd:
        r.out_path(cmd["out"]).write_bytes(proof.to_bytes())
    if not ok:
        raise StepError("proof did not verify")
    if cmd.get("anchor"):
        possession_proof.anchor_proof(r.ledger, r.who(_req(cmd, "sender")), token, digest,
                                      r.time_of(cmd))
        result["anchored"] = True
    return result


def _op_export(r: ScriptRunner, cmd: dict):
    src = r.base_dir / _req(cmd, "dataset", str)
    out = r.out_path(_req(cmd, "out", str))
    sigma = export_field(src, out, _req(cmd, "field", str),
                         cmd.get("epsilon", r.config.epsilon), cmd.get("delta", r.config.delta),
                         cmd.get("seed", 0), cmd.get("clamp_lo"), cmd.get("clamp_hi"))
    return {"sigma": sigma, "out": cmd["out"]}


def _op_register_uav(r: ScriptRunner, cmd: dict):
    status = cmd.get("status", "available")
    try:
        st = UavStatus[status.upper()]
    except (KeyError, AttributeError):
        raise ScriptParseError(f"step {cmd['seq']}: unknown status {status!r}") from None
    capacity = _req(cmd, "payload_capacity", (int, float))
    uav = dao_fleet.register_uav(r.ledger, r.who(_req(cmd, "sender")), _vec3(cmd, "location"),
                                 capacity, st, r.time_of(cmd))
    return {"uav": uav, "token": r.ledger.state.uavs[uav].token_id}


def _op_assign(r: ScriptRunner, cmd: dict):
    radius = cmd.get("max_radius")
    task = Task(_req(cmd, "task_id", int), _vec3(cmd, "location"),
                float(_req(cmd, "required_payload", (int, float))), int(cmd.get("urgency", 0)),
                float("inf") if radius is None else float(radius))
    sender = r.who(cmd["sender"]) if "sender" in cmd else dao_fleet.DISPATCHER
    res = dao_fleet.assign_task(r.ledger, task, sender, r.time_of(cmd))
    return {"task": res.task_id, "selected": res.selected, "distance": res.distance,
            "urgency": task.urgency}


def _op_complete(r: ScriptRunner, cmd: dict):
    dao_fleet.complete_task(r.ledger, r.who(_req(cmd, "sender")), _req(cmd, "task_id", int),
                            r.time_of(cmd))
    return None


def _op_transfer_uav(r: ScriptRunner, cmd: dict):
    res = dao_fleet.transfer_uav(r.ledger, r.who(_req(cmd, "sender")), _req(cmd, "uav", int),
                                 r.who(_req(cmd, "to")), r.time_of(cmd))
    if not res.ok:
        raise Revert(res.reason)
    return {"status": "Success"}


_OPS: dict[str, Callable[[ScriptRunner, dict], Any]] = {
    "mint": _op_mint,
    "transfer": _op_transfer,
    "grant": _op_grant,
    "revoke": _op_revoke,
    "check": _op_check,
    "history": _op_history,
    "prove": _op_prove,
    "export": _op_export,
    "register_uav": _op_register_uav,
    "assign_task": _op_assign,
    "submit_task": _op_assign,
    "complete_task": _op_complete,
    "transfer_uav": _op_transfer_uav,
}

FLEET_OPS = {"register_uav", "submit_task", "assign_task", "complete_task", "transfer_uav"}


def _trace_text(trace: list[dict]) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in trace)


def run_script(script_path: str | Path, out_dir: str | Path,
               config: RunConfig | None = None) -> RunResult:
    """Run a script file and write ``ledger.log``, ``trace.jsonl``, ``report.txt``
    and ``labels.json`` (the principal labels the report names)."""
    config = config or RunConfig()
    script_path, out_dir = Path(script_path), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        steps = parse_script(script_path.read_text(encoding="utf-8"))
    except ScriptParseError as exc:
        return RunResult(EXIT_PARSE, str(exc), Ledger().state)
    runner = ScriptRunner(config, script_path.parent, out_dir)
    result = runner.run(steps)
    (out_dir / "ledger.log").write_text(dump_log(result.state.log), encoding="utf-8")
    (out_dir / "trace.jsonl").write_text(_trace_text(result.trace), encoding="utf-8")
    (out_dir / "report.txt").write_text(render_report(result.state, result.labels),
                                        encoding="utf-8")
    (out_dir / "labels.json").write_text(json.dumps(sorted(result.labels.values())) + "\n",
                                         encoding="utf-8")
    return result


def run_fleet(scenario_path: str | Path, out_path: str | Path,
              config: RunConfig | None = None) -> RunResult:
    """Run a fleet scenario; the trace ends with a ``summary`` record."""
    config = config or RunConfig()
    scenario_path, out_path = Path(scenario_path), Path(out_path)
    try:
        steps = parse_script(scenario_path.read_text(encoding="utf-8"), require_seq=False)
        bad = [s["op"] for s in steps if s["op"] not in FLEET_OPS]
        if bad:
            raise ScriptParseError(f"not a fleet op: {bad[0]!r}")
    except ScriptParseError as exc:
        return RunResult(EXIT_PARSE, str(exc), Ledger().state)
    runner = ScriptRunner(config, scenario_path.parent, out_path.parent)
    result = runner.run(steps)
    state = result.state
    counts = dao_fleet.status_counts(state)
    summary = {
        "summary": {
            "exit_code": result.exit_code,
            "head_digest": state.head_digest.hex(),
            "uavs": {str(u.uav_id): {"owner": result.labels.get(u.owner, str(u.owner)),
                                     "status": u.status.name.lower(), "token": u.token_id}
                     for u in state.uavs.values()},
            "status_counts": {s.name.lower(): n for s, n in counts.items()},
            "tasks": {str(t): {"uav": rec.uav_id, "active": rec.active}
                      for t, rec in state.tasks.items()},
        }
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(_trace_text(result.trace + [summary]), encoding="utf-8")
    return result


# ---------------------------------------------------------------------------
# privacy export over flight record files


def export_field(src: str | Path, out: str | Path, field_name: str, epsilon: float,
                 delta: float, seed: int, clamp_lo: float | None = None,
                 clamp_hi: float | None = None) -> float:
    """Write a copy of ``src`` with ``field_name`` replaced by its noised value.

    Returns the calibrated sigma. Without explicit clamp bounds the observed
    range is used, which is convenient but leaks the data range.
    """
    records = load_records(src)
    try:
        values = [rec.field(field_name) for rec in records]
    except KeyError:
        raise StepError(f"field {field_name!r} missing from some record") from None
    if clamp_lo is None or clamp_hi is None:
        log.warning("no clamp bounds given for %r; using the observed range", field_name)
        lo, hi = min(values), max(values)
        clamp_lo = lo if clamp_lo is None else clamp_lo
        clamp_hi = (hi if hi > clamp_lo else clamp_lo + 1.0) if clamp_hi is None else clamp_hi
    series = privacy.NumericSeries(tuple(values), float(clamp_lo), float(clamp_hi), field_name)
    noisy, sigma = privacy.gaussian_mechanism(series, epsilon, delta, seed)

    lines = Path(src).read_text(encoding="utf-8").splitlines()
    rows = [json.loads(line) for line in lines if line.strip()]
    with open(out, "w", encoding="utf-8") as fh:
        for row, value in zip(rows, noisy.values):
            if field_name in ("x", "y", "z"):
                row["position"]["xyz".index(field_name)] = value
            else:
                row["sensors"][field_name] = value
            fh.write(json.dumps(row) + "\n")
    return sigma
