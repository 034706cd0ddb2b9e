"""Command-line entry point.

Exit codes are a stable contract:

    0  success
    2  usage or configuration error
    3  safety violation found
    4  liveness stall found (and no safety violation)

Every flag marked [env] can also be set through an environment variable
named ``BEACONBFT_<FLAG>``, for example ``BEACONBFT_OUT=runs/a``.  An
explicit flag wins over the environment.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SAFETY = 3
EXIT_STALL = 4

ENV_PREFIX = "BEACONBFT_"

log = logging.getLogger("beaconbft")


class CliError(Exception):
    pass


def env_default(flag: str, fallback=None):
    return os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"), fallback)


def _int_env(flag: str, fallback: int | None) -> int | None:
    raw = env_default(flag)
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{ENV_PREFIX}{flag.upper()} must be an integer, got {raw!r}")


def _decimal(text: str) -> Decimal:
    try:
        return Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a decimal number: {text!r}")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _out_dir(args) -> Path:
    out = args.out or env_default("out")
    if not out:
        raise CliError("an output directory is required (--out or BEACONBFT_OUT)")
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}")
    if not os.access(path, os.W_OK):
        raise CliError(f"output directory {path} is not writable")
    return path


def _verdict(safety: int, stalls: int) -> int:
    if safety:
        return EXIT_SAFETY
    if stalls:
        return EXIT_STALL
    return EXIT_OK


# -- sim --------------------------------------------------------------------


def cmd_sim_run(args) -> int:
    from .simnet.metrics import metrics_csv, run, write_trace
    from .simnet.scenario import load_scenario

    path = args.scenario or env_default("scenario")
    if not path:
        raise CliError("a scenario file is required (--scenario or BEACONBFT_SCENARIO)")
    scenario = load_scenario(path)
    seed = args.seed if args.seed is not None else _int_env("seed", None)
    if seed is not None:
        scenario = scenario.with_seed(seed).validate()
    out = _out_dir(args)
    log.info("running %s", scenario.name or path)
    metrics, trace = run(scenario)
    _write(out / "metrics.json", json.dumps(metrics.to_json(), indent=2, sort_keys=True) + "\n")
    _write(out / "metrics.csv", metrics_csv([metrics.to_json()]))
    write_trace(trace, out / "trace.jsonl", compress=args.compress)
    if args.report:
        from .report import write_report

        write_report(metrics, trace, out, scenario.delta)
    summary = (
        f"commits={metrics.commits} safety_violations={metrics.safety_violations} "
        f"liveness_stalls={metrics.liveness_stalls} stop={metrics.stop_reason}"
    )
    print(summary)
    return _verdict(metrics.safety_violations, metrics.liveness_stalls)


SWEEP_KEYS = ("row", "name", "n", "f", "seed", "adversary_policy", "gst", "rounds", "error")


def sweep_row(index: int, obj: dict, seed: int | None) -> dict:
    """Run one matrix entry; configuration errors are reported in the row."""
    from .simnet.metrics import run
    from .simnet.scenario import ConfigError, Scenario

    row: dict = {"row": index}
    try:
        if not isinstance(obj, dict):
            raise ConfigError("matrix entry is not an object")
        sc = Scenario.from_json(obj)
        if seed is not None:
            sc = sc.with_seed(seed)
        sc.validate()
    except ConfigError as exc:
        row["error"] = str(exc)
        return row
    row.update(
        name=sc.name, n=sc.n, f=sc.f, seed=sc.seed, adversary_policy=sc.adversary_policy.value, gst=sc.gst, rounds=sc.rounds
    )
    metrics, _ = run(sc)
    row.update(metrics.to_json())
    row["error"] = ""
    return row


def _sweep_row_star(job):
    return sweep_row(*job)


def cmd_sim_sweep(args) -> int:
    from .simnet.metrics import metrics_csv
    from .simnet.scenario import load_matrix

    path = args.matrix or args.scenario or env_default("matrix")
    if not path:
        raise CliError("a matrix file is required (--matrix or BEACONBFT_MATRIX)")
    entries = load_matrix(path)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else _int_env("seed", None)
    parallel = args.parallel if args.parallel is not None else _int_env("parallel", 1)
    if parallel < 1:
        raise CliError("--parallel must be at least 1")
    jobs = [(i, obj, seed) for i, obj in enumerate(entries)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_sweep_row_star, jobs))
    else:
        rows = [_sweep_row_star(j) for j in jobs]
    _write(out / "sweep.csv", metrics_csv(rows, SWEEP_KEYS))
    safety = sum(int(r.get("safety_violations") or 0) for r in rows)
    stalls = sum(int(r.get("liveness_stalls") or 0) for r in rows)
    errors = sum(bool(r.get("error")) for r in rows)
    print(f"scenarios={len(rows)} errors={errors} safety_violations={safety} liveness_stalls={stalls}")
    code = _verdict(safety, stalls)
    if code == EXIT_OK and errors:
        return EXIT_CONFIG
    return code


def cmd_sim_check(args) -> int:
    from .simnet.checks import check_liveness, check_safety
    from .simnet.metrics import read_trace

    trace = read_trace(Path(args.trace))
    violations = check_safety(trace)
    stalls = check_liveness(trace)
    for v in violations:
        print(f"safety {v.kind} height={v.height}: {v.detail}")
    for s in stalls:
        print(f"stall view={s.view} leader={s.leader} timed_out={list(s.nodes)}")
    print(f"safety_violations={len(violations)} liveness_stalls={len(stalls)}")
    return _verdict(len(violations), len(stalls))


def cmd_sim_report(args) -> int:
    from .report import write_report
    from .simnet.checks import trace_scenario
    from .simnet.metrics import metrics_from_trace, read_trace

    trace = read_trace(Path(args.trace))
    out = _out_dir(args)
    metrics = metrics_from_trace(trace)
    for p in write_report(metrics, trace, out, trace_scenario(trace).delta):
        print(p)
    return EXIT_OK


# -- beacon -------------------------------------------------------------------


def cmd_beacon_demo(args) -> int:
    from .beacon import demo_transcript, transcript_json

    seed = args.seed if args.seed is not None else _int_env("seed", 0)
    rows = demo_transcript(args.n, args.t, args.rounds, seed)
    print(transcript_json(rows))
    return EXIT_OK if all(r["verified"] for r in rows) else EXIT_SAFETY


# -- roster -------------------------------------------------------------------


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}")


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        _write(Path(out), text)
    else:
        sys.stdout.write(text)


def cmd_roster_show(args) -> int:
    from .membership import Roster

    roster = Roster.from_json(_load_json(args.roster))
    print(f"epoch {roster.epoch}: {len(roster)} members, fault bound {roster.fault_bound}, quorum {roster.quorum}")
    for m in roster.members:
        print(f"  {m.node_id}  {m.public_key.hex()}")
    return EXIT_OK


def cmd_roster_issuer_new(args) -> int:
    from .crypto import H, u64
    from .membership import Issuer

    issuer = Issuer.create(args.id, H(b"beaconbft/cli-issuer", args.id.encode(), u64(args.seed)))
    _emit(issuer.to_json(include_secret=True), args.output)
    return EXIT_OK


def cmd_roster_issue(args) -> int:
    from .crypto import SigningKey, u64
    from .membership import Issuer, issue_credential

    issuer = Issuer.from_json(_load_json(args.issuer))
    if args.node_key:
        node_key = bytes.fromhex(args.node_key)
    else:
        node_key = SigningKey.derive(b"beaconbft/cli-node", u64(args.node_seed)).public_key
    cred = issue_credential(issuer, args.identity.encode(), node_key)
    _emit(cred.to_json(), args.output)
    return EXIT_OK


def cmd_roster_admit(args) -> int:
    from .membership import AdmissionError, Credential, Roster, admit

    roster = Roster.from_json(_load_json(args.roster)) if args.roster else Roster()
    trusted = {}
    for path in args.issuer:
        obj = _load_json(path)
        trusted[obj["issuer_id"]] = bytes.fromhex(obj["verification_key"])
    cred = Credential.from_json(_load_json(args.cred))
    try:
        roster = admit(roster, cred, trusted)
    except AdmissionError as exc:
        print(f"rejected ({exc.reason}): {exc}", file=sys.stderr)
        return EXIT_SAFETY
    _emit(roster.to_json(), args.output)
    return EXIT_OK


# -- econ ---------------------------------------------------------------------


def _params(args) -> dict:
    if getattr(args, "params", None):
        obj = _load_json(args.params)
        if not isinstance(obj, dict):
            raise CliError("parameter file must hold a JSON object")
        return obj
    return {}


def _pick(args, params: dict, name: str, default=None):
    value = getattr(args, name, None)
    if value is None:
        value = params.get(name, default)
    if value is None:
        raise CliError(f"missing parameter {name!r} (flag or --params file)")
    return value


def _permissionless(args, params):
    from .econ import Money, PermissionlessParams

    return PermissionlessParams(
        Decimal(str(_pick(args, params, "reward"))),
        Money(Decimal(str(_pick(args, params, "price"))), _pick(args, params, "currency", "USD")),
        Decimal(str(_pick(args, params, "maturation"))),
        Decimal(str(_pick(args, params, "detect", "1"))),
    )


def _permissioned(args, params):
    from .econ import Money, PermissionedParams

    raw = _pick(args, params, "penalties")
    if isinstance(raw, str):
        raw = [x for x in raw.split(",") if x.strip()]
    currency = _pick(args, params, "currency", "USD")
    try:
        penalties = tuple(Money(Decimal(str(x).strip()), currency) for x in raw)
    except InvalidOperation:
        raise CliError(f"penalties must be decimal numbers, got {raw!r}")
    return PermissionedParams(
        penalties,
        Decimal(str(_pick(args, params, "tau", "1"))),
        int(_pick(args, params, "colluders")),
        Decimal(str(_pick(args, params, "detect", "1"))),
    )


def cmd_econ(args) -> int:
    from . import econ

    params = _params(args)
    kind = args.econ_command
    if kind == "beta-pl":
        result = {"beta_permissionless": econ.beta_permissionless(_permissionless(args, params)).to_json()}
    elif kind == "beta-p":
        result = {"beta_permissioned": econ.beta_permissioned(_permissioned(args, params)).to_json()}
    elif kind == "compare":
        p, q = _permissioned(args, params), _permissionless(args, params)
        result = {
            "permissioned_safer": econ.permissioned_safer(p, q),
            "beta_permissioned": econ.beta_permissioned(p).to_json(),
            "beta_permissionless": econ.beta_permissionless(q).to_json(),
        }
    elif kind == "min-reward":
        payoff = econ.Money(Decimal(str(_pick(args, params, "payoff"))), _pick(args, params, "currency", "USD"))
        result = {"min_block_reward": econ.min_block_reward(payoff, Decimal(str(_pick(args, params, "alpha")))).to_json()}
    elif kind == "poca":
        cur = _pick(args, params, "currency", "USD")
        nash = econ.Money(Decimal(str(_pick(args, params, "nash"))), cur)
        floor = econ.Money(Decimal(str(_pick(args, params, "floor"))), cur)
        result = {"price_of_crypto_anarchy": str(econ.poca_ratio(nash, floor))}
    else:
        rows = econ.recompute_table()
        if args.json:
            _emit([r.to_json() for r in rows], None)
        else:
            print(econ.format_table(rows))
            flagged = [r.name for r in rows if r.status != "ok"]
            if flagged:
                print(f"flagged rows: {', '.join(flagged)} (derived reward matches a different printed row)")
        return EXIT_OK
    _emit(result, None)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage text plus a stable exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="beaconbft",
        description="Committee BFT simulator, threshold beacon, roster tooling and economic calculator.",
        epilog=f"Exit codes: 0 ok, {EXIT_CONFIG} usage/config error, {EXIT_SAFETY} safety violation, "
        f"{EXIT_STALL} liveness stall. Flags marked [env] read {ENV_PREFIX}<FLAG> when omitted.",
    )
    p.add_argument("--verbose", "-v", action="count", default=None, help="more logging [env]")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("sim", help="run and check simulations")
    simsub = sim.add_subparsers(dest="sim_command", required=True, parser_class=_Parser)
    r = simsub.add_parser("run", help="run one scenario, write metrics.json, metrics.csv and trace.jsonl")
    r.add_argument("--scenario", help="scenario JSON file [env]")
    r.add_argument("--out", help="output directory [env]")
    r.add_argument("--seed", type=int, help="override the scenario seed [env]")
    r.add_argument("--compress", action="store_true", help="gzip the trace")
    r.add_argument("--report", action="store_true", help="also write PNG figures")
    r.set_defaults(func=cmd_sim_run)

    s = simsub.add_parser("sweep", help="run a matrix of scenarios into sweep.csv")
    s.add_argument("--matrix", help="matrix JSON file [env]")
    s.add_argument("--scenario", help="alias for --matrix")
    s.add_argument("--out", help="output directory [env]")
    s.add_argument("--seed", type=int, help="override every scenario seed [env]")
    s.add_argument("--parallel", type=int, help="worker processes (default 1) [env]")
    s.set_defaults(func=cmd_sim_sweep)

    c = simsub.add_parser("check", help="re-run the safety and liveness checks on a trace")
    c.add_argument("--trace", required=True)
    c.set_defaults(func=cmd_sim_check)

    rp = simsub.add_parser("report", help="draw figures from a trace")
    rp.add_argument("--trace", required=True)
    rp.add_argument("--out", help="output directory [env]")
    rp.set_defaults(func=cmd_sim_report)

    b = sub.add_parser("beacon", help="threshold beacon tools")
    bsub = b.add_subparsers(dest="beacon_command", required=True, parser_class=_Parser)
    d = bsub.add_parser("demo", help="run key generation and print verified beacon outputs")
    d.add_argument("--n", type=int, default=5)
    d.add_argument("--t", type=int, default=None)
    d.add_argument("--rounds", type=int, default=3)
    d.add_argument("--seed", type=int, help="key generation seed [env]")
    d.set_defaults(func=cmd_beacon_demo)

    ro = sub.add_parser("roster", help="identity-gated membership")
    rsub = ro.add_subparsers(dest="roster_command", required=True, parser_class=_Parser)
    x = rsub.add_parser("show", help="summarise a roster snapshot")
    x.add_argument("--roster", required=True)
    x.set_defaults(func=cmd_roster_show)
    x = rsub.add_parser("issuer-new", help="create an issuer from a seed")
    x.add_argument("--id", required=True)
    x.add_argument("--seed", type=int, required=True)
    x.add_argument("--output")
    x.set_defaults(func=cmd_roster_issuer_new)
    x = rsub.add_parser("issue", help="issue a credential binding an identity to a node key")
    x.add_argument("--issuer", required=True, help="issuer JSON with its signing seed")
    x.add_argument("--identity", required=True)
    g = x.add_mutually_exclusive_group(required=True)
    g.add_argument("--node-key", help="node public key, hex")
    g.add_argument("--node-seed", type=int, help="derive the node key from this seed")
    x.add_argument("--output")
    x.set_defaults(func=cmd_roster_issue)
    x = rsub.add_parser("admit", help="admit a credential into a roster")
    x.add_argument("--roster", help="existing roster JSON (default: empty)")
    x.add_argument("--cred", required=True)
    x.add_argument("--issuer", action="append", required=True, help="trusted issuer JSON (repeatable)")
    x.add_argument("--output")
    x.set_defaults(func=cmd_roster_admit)

    e = sub.add_parser("econ", help="economic-safety calculator")
    esub = e.add_subparsers(dest="econ_command", required=True, parser_class=_Parser)

    def pl_flags(q):
        q.add_argument("--reward", type=_decimal, help="block reward in coins")
        q.add_argument("--price", type=_decimal, help="fiat per coin")
        q.add_argument("--maturation", type=_decimal, help="blocks until a reward matures")

    def p_flags(q):
        q.add_argument("--penalties", help="comma-separated fines")
        q.add_argument("--tau", type=_decimal, help="punishment probability")
        q.add_argument("--colluders", type=int, help="size of the cheapest coalition")

    for name, helptext, groups in (
        ("beta-pl", "permissionless safety threshold", (pl_flags,)),
        ("beta-p", "permissioned safety threshold", (p_flags,)),
        ("compare", "is the permissioned threshold strictly higher", (pl_flags, p_flags)),
    ):
        q = esub.add_parser(name, help=helptext)
        for add in groups:
            add(q)
        q.add_argument("--detect", type=_decimal, help="detection probability")
        q.add_argument("--currency")
        q.add_argument("--params", help="JSON file supplying any of the flags by name")
        q.set_defaults(func=cmd_econ)
    q = esub.add_parser("min-reward", help="block reward that makes an attack unprofitable")
    q.add_argument("--payoff", type=_decimal)
    q.add_argument("--alpha", type=_decimal)
    q.add_argument("--currency")
    q.add_argument("--params")
    q.set_defaults(func=cmd_econ)
    q = esub.add_parser("poca", help="price of crypto-anarchy ratio")
    q.add_argument("--nash", type=_decimal, help="worst equilibrium cost")
    q.add_argument("--floor", type=_decimal, help="identity-based cost (positive)")
    q.add_argument("--currency")
    q.add_argument("--params")
    q.set_defaults(func=cmd_econ)
    q = esub.add_parser("table3", help="recompute the mining-reward table with deviations")
    q.add_argument("--json", action="store_true")
    q.set_defaults(func=cmd_econ)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    from .beacon import BeaconError
    from .econ import ParameterError
    from .simnet.scenario import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        verbose = args.verbose if args.verbose is not None else _int_env("verbose", 0)
        logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(message)s")
        return args.func(args)
    except (CliError, ConfigError, ParameterError, BeaconError) as exc:
        print(f"beaconbft: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
