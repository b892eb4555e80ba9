"""Command-line entry point (``uavnft``).

Exit codes: 0 success, 1 other failure, 2 parse error, 3 unexpected revert,
4 expected revert that did not happen.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import dao_fleet, possession_proof, registry
from .crypto_core import EncodingError, hash_bytes
from .dataset import RecordParseError, ingest
from .ledger import Ledger, LedgerError, Revert, dump_log, load_log, replay, verify_chain
from .records import LicenseConditions, UsageClass
from .runner import (
    BACKENDS,
    EXIT_OK,
    EXIT_OTHER,
    EXIT_PARSE,
    EXIT_UNEXPECTED_REVERT,
    RunConfig,
    StepError,
    export_field,
    load_config,
    render_report,
    run_fleet,
    run_script,
)


def _load_ledger(path: Path) -> Ledger:
    if not path.exists():
        return Ledger()
    return Ledger(replay(load_log(path.read_text(encoding="utf-8"))))


def _save_ledger(path: Path, ledger: Ledger) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(dump_log(ledger.log))
    os.replace(tmp, path)


def _ledger_path(args, config: RunConfig) -> Path:
    return Path(args.ledger or config.ledger_path)


# ---------------------------------------------------------------------------
# handlers; each returns an exit code


def cmd_ingest(args, config):
    data = ingest(args.file, args.chunk_size or config.chunk_size)
    print(f"root: {data.root.hex()}")
    print(f"blocks: {len(data.blocks)}")
    print(f"records: {len(data.records)}")
    return EXIT_OK


def cmd_ledger_replay(args, config):
    state = replay(load_log(Path(args.file).read_text(encoding="utf-8")))
    names = list(args.principal or ())
    if args.labels:
        names += json.loads(Path(args.labels).read_text(encoding="utf-8"))
    labels = {config.principal(lbl): lbl for lbl in names}
    text = render_report(state, labels)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ledger_verify(args, config):
    check = verify_chain(Path(args.file).read_text(encoding="utf-8"))
    if check.ok:
        print(f"ok: {check.length} transactions, head {check.head.hex()}")
        return EXIT_OK
    print(f"chain broken (seq {check.bad_seq}): {check.message}")
    return EXIT_OTHER


def _with_ledger(args, config, fn):
    path = _ledger_path(args, config)
    ledger = _load_ledger(path)
    out = fn(ledger)
    _save_ledger(path, ledger)
    return out


def cmd_registry_mint(args, config):
    data = ingest(args.dataset, args.chunk_size or config.chunk_size)
    meta = data.metadata(args.mission, args.uav, args.region)
    owner = config.principal(args.owner)
    token = _with_ledger(args, config,
                         lambda lg: registry.mint(lg, owner, data.root, meta, args.at))
    print(f"token: {token}")
    print(f"data_root: {data.root.hex()}")
    return EXIT_OK


def cmd_registry_transfer(args, config):
    src = config.principal(args.from_)
    sender = config.principal(args.sender) if args.sender else src
    _with_ledger(args, config, lambda lg: registry.transfer_token(
        lg, sender, src, config.principal(args.to), args.token, args.at))
    print(f"token {args.token} transferred to {args.to}")
    return EXIT_OK


def cmd_registry_grant(args, config):
    cond = LicenseConditions(args.fee_paid, not args.region_denied, UsageClass[args.usage.upper()])
    _with_ledger(args, config, lambda lg: registry.grant_access(
        lg, config.principal(args.owner), config.principal(args.grantee), args.token,
        args.expires, cond, args.at))
    print(f"granted {args.grantee} access to token {args.token} until {args.expires}")
    return EXIT_OK


def cmd_registry_revoke(args, config):
    _with_ledger(args, config, lambda lg: registry.revoke_access(
        lg, config.principal(args.owner), config.principal(args.grantee), args.token, args.at))
    print(f"revoked {args.grantee} on token {args.token}")
    return EXIT_OK


def cmd_registry_check(args, config):
    ledger = _load_ledger(_ledger_path(args, config))
    now = ledger.now if args.now is None else args.now
    ok = registry.check_access(ledger.state, config.principal(args.grantee), args.token, now)
    print("granted" if ok else "denied")
    return EXIT_OK


def cmd_registry_history(args, config):
    ledger = _load_ledger(_ledger_path(args, config))
    for tx in registry.history(ledger.state, args.token):
        print(f"{tx.seq}\t{tx.logical_time}\t{type(tx.action).__name__}\t{tx.sender}")
    return EXIT_OK


def _params(args, config, backend: str | None = None):
    if getattr(args, "params", None):
        return possession_proof.ProofParams.from_bytes(Path(args.params).read_bytes())
    return config.proof_params(backend)


def cmd_proof_setup(args, config):
    params = config.proof_params(args.backend)
    raw = params.to_bytes()
    if args.out:
        Path(args.out).write_bytes(raw)
    print(f"params_digest: {hash_bytes(raw).hex()}")
    return EXIT_OK


def cmd_proof_prove(args, config):
    ledger = _load_ledger(_ledger_path(args, config))
    data = ingest(args.dataset, args.chunk_size or config.chunk_size)
    params = _params(args, config, args.backend)
    statement = possession_proof.statement_for_token(ledger.state, args.token)
    proof = possession_proof.prove(data.blocks, statement, params, args.seed)
    out = Path(args.out or f"token{args.token}.{args.backend or config.proof_backend}.proof")
    out.write_bytes(proof.to_bytes())
    print(f"proof: {out}")
    print(f"proof_digest: {possession_proof.proof_digest(proof).hex()}")
    return EXIT_OK


def cmd_proof_verify(args, config):
    raw = Path(args.proof).read_bytes()
    ledger = _load_ledger(_ledger_path(args, config))
    backend = {v: k for k, v in BACKENDS.items()}.get(raw[0] if raw else None)
    if backend is None:
        print("invalid")
        return EXIT_OTHER
    params = _params(args, config, backend)
    statement = possession_proof.statement_for_token(ledger.state, args.token)
    ok = possession_proof.verify(raw, statement, params)
    print("valid" if ok else "invalid")
    return EXIT_OK if ok else EXIT_OTHER


def cmd_proof_anchor(args, config):
    digest = hash_bytes(Path(args.proof).read_bytes())
    _with_ledger(args, config, lambda lg: possession_proof.anchor_proof(
        lg, config.principal(args.sender), args.token, digest, args.at))
    print(f"anchored {digest.hex()} on token {args.token}")
    return EXIT_OK


def cmd_privacy_export(args, config):
    out = args.out or str(Path(args.dataset).with_suffix(f".{args.field}.dp.jsonl"))
    sigma = export_field(args.dataset, out, args.field,
                         args.epsilon if args.epsilon is not None else config.epsilon,
                         args.delta if args.delta is not None else config.delta,
                         args.seed, args.clamp_lo, args.clamp_hi)
    print(f"sigma: {sigma!r}")
    print(f"out: {out}")
    return EXIT_OK


def cmd_fleet_run(args, config):
    result = run_fleet(args.scenario, args.out, config)
    if result.exit_code:
        print(result.message, file=sys.stderr)
    else:
        counts = dao_fleet.status_counts(result.state)
        print(f"uavs: {len(result.state.uavs)} tasks: {len(result.state.tasks)} "
              + " ".join(f"{s.name.lower()}={n}" for s, n in counts.items()))
    return result.exit_code


def cmd_script_run(args, config):
    result = run_script(args.script, args.out_dir, config)
    print(result.message, file=sys.stderr if result.exit_code else sys.stdout)
    return result.exit_code


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavnft", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON run config (default: $UAVNFT_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def ledger_opt(sp):
        sp.add_argument("--ledger", help="ledger log path (default from config)")
        sp.add_argument("--at", type=int, help="logical time of the transaction")

    sp = sub.add_parser("ingest", help="chunk a flight record file and print its Merkle root")
    sp.add_argument("file")
    sp.add_argument("--chunk-size", type=int)
    sp.set_defaults(func=cmd_ingest)

    lg = sub.add_parser("ledger").add_subparsers(dest="action", required=True)
    sp = lg.add_parser("replay", help="replay a log and print the state report")
    sp.add_argument("file")
    sp.add_argument("--report")
    sp.add_argument("--principal", action="append", help="label to show in the report")
    sp.add_argument("--labels", help="JSON list of labels, as written by 'script run'")
    sp.set_defaults(func=cmd_ledger_replay)
    sp = lg.add_parser("verify-chain", help="recompute the hash chain of a log")
    sp.add_argument("file")
    sp.set_defaults(func=cmd_ledger_verify)

    rg = sub.add_parser("registry").add_subparsers(dest="action", required=True)
    sp = rg.add_parser("mint")
    sp.add_argument("--owner", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--mission", required=True)
    sp.add_argument("--uav", default="")
    sp.add_argument("--region", default="")
    sp.add_argument("--chunk-size", type=int)
    ledger_opt(sp)
    sp.set_defaults(func=cmd_registry_mint)
    sp = rg.add_parser("transfer")
    sp.add_argument("--from", dest="from_", required=True)
    sp.add_argument("--to", required=True)
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--sender", help="transaction sender (default: --from)")
    ledger_opt(sp)
    sp.set_defaults(func=cmd_registry_transfer)
    sp = rg.add_parser("grant")
    sp.add_argument("--owner", required=True)
    sp.add_argument("--grantee", required=True)
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--expires", type=int, required=True)
    sp.add_argument("--fee-paid", action="store_true")
    sp.add_argument("--region-denied", action="store_true")
    sp.add_argument("--usage", choices=[u.name.lower() for u in UsageClass], default="view")
    ledger_opt(sp)
    sp.set_defaults(func=cmd_registry_grant)
    sp = rg.add_parser("revoke")
    sp.add_argument("--owner", required=True)
    sp.add_argument("--grantee", required=True)
    sp.add_argument("--token", type=int, required=True)
    ledger_opt(sp)
    sp.set_defaults(func=cmd_registry_revoke)
    sp = rg.add_parser("check")
    sp.add_argument("--grantee", required=True)
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--now", type=int)
    sp.add_argument("--ledger")
    sp.set_defaults(func=cmd_registry_check)
    sp = rg.add_parser("history")
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--ledger")
    sp.set_defaults(func=cmd_registry_history)

    pf = sub.add_parser("proof").add_subparsers(dest="action", required=True)
    sp = pf.add_parser("setup")
    sp.add_argument("--backend", choices=sorted(BACKENDS))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_proof_setup)
    sp = pf.add_parser("prove")
    sp.add_argument("--backend", choices=sorted(BACKENDS))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--params")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--chunk-size", type=int)
    sp.add_argument("--out")
    sp.add_argument("--ledger")
    sp.set_defaults(func=cmd_proof_prove)
    sp = pf.add_parser("verify")
    sp.add_argument("--proof", required=True)
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--params")
    sp.add_argument("--ledger")
    sp.set_defaults(func=cmd_proof_verify)
    sp = pf.add_parser("anchor")
    sp.add_argument("--proof", required=True)
    sp.add_argument("--token", type=int, required=True)
    sp.add_argument("--sender", required=True)
    ledger_opt(sp)
    sp.set_defaults(func=cmd_proof_anchor)

    pv = sub.add_parser("privacy").add_subparsers(dest="action", required=True)
    sp = pv.add_parser("export")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--field", required=True)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--clamp-lo", type=float)
    sp.add_argument("--clamp-hi", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_privacy_export)

    fl = sub.add_parser("fleet").add_subparsers(dest="action", required=True)
    sp = fl.add_parser("run")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fleet_run)

    sc = sub.add_parser("script").add_subparsers(dest="action", required=True)
    sp = sc.add_parser("run")
    sp.add_argument("script")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_script_run)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except RecordParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Revert as exc:
        print(f"reverted: {exc.reason}", file=sys.stderr)
        return EXIT_UNEXPECTED_REVERT
    except (LedgerError, EncodingError, StepError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
