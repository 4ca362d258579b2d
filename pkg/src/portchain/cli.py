"""Scenario runner and chain tooling.

Subcommands:
  run     execute a scenario file, audit the result, emit a report
  import  load an exported chain file and independently re-verify it
  tail    print exact quorum-failure tail probabilities

Reports are a pure function of (scenario file, seed): line-oriented
key=value pairs followed by a JSON summary block.  Exit codes: 0 all
enabled checks pass, 1 a check failed or the run stalled when stalling
is not allowed, 2 unusable input (missing file, bad JSON, bad schema,
invalid configuration).
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema

from . import analysis
from .core import block_digest, decode_chain, encode_chain
from .netsim import AdversarySpec, SimConfig, SimConfigError, build_context, run

ADVERSARY_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {
            "enum": [
                "crash",
                "vote_withhold",
                "vote_disapprove_all",
                "equivocate_creator",
                "forge_assignment",
            ]
        },
        "node": {"type": ["integer", "null"]},
        "voter_slot": {"type": ["integer", "null"]},
        "start_tick": {"type": "integer", "minimum": 0},
        "recover_tick": {"type": ["integer", "null"]},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_INT_FIELDS = [
    "seed",
    "node_count",
    "voter_count",
    "creator_redundancy",
    "latency_min",
    "latency_max",
    "run_height",
    "max_ticks",
    "tx_interval",
    "txs_per_interval",
    "tx_value_min",
    "tx_value_max",
    "genesis_balance",
    "genesis_tax_min",
    "genesis_tax_max",
    "tax_rate_numerator",
    "tax_rate_denominator",
    "creator_reward",
    "voter_reward",
    "reporter_reward",
    "blacklist_duration",
    "max_txs",
    "sync_interval",
    "stall_patience",
]

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "config": {
            "type": "object",
            "properties": {
                **{name: {"type": "integer"} for name in _INT_FIELDS},
                "drop_probability": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "proposal_delay": {"type": ["integer", "null"]},
                "adversaries": {"type": "array", "items": ADVERSARY_SCHEMA},
            },
            "additionalProperties": False,
        },
        "checks": {
            "type": "array",
            "items": {"enum": ["single_chain", "schedule", "conservation", "fairness", "liveness"]},
        },
        "fairness_window": {
            "type": "array",
            "items": {"type": "integer"},
            "minItems": 2,
            "maxItems": 2,
        },
        "allow_stall": {"type": "boolean"},
    },
    "required": ["config"],
    "additionalProperties": False,
}

DEFAULT_CHECKS = ["single_chain", "schedule", "conservation", "liveness"]

# 0.01 upper-tail chi-square quantile by the Wilson-Hilferty cube
# approximation; at 49 degrees of freedom this gives 74.9
_Z_99 = 2.3263478740408408


def chi_square_critical(dof: int) -> float:
    if dof < 1:
        raise ValueError("degrees of freedom must be positive")
    c = 2.0 / (9.0 * dof)
    return dof * (1.0 - c + _Z_99 * c**0.5) ** 3


class ScenarioError(ValueError):
    pass


def load_scenario(path: str) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}")
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"scenario schema violation: {exc.message}")
    return doc


def scenario_config(doc: dict, seed_override: int | None = None) -> SimConfig:
    fields = dict(doc["config"])
    advs = tuple(AdversarySpec(**a) for a in fields.pop("adversaries", []))
    if seed_override is not None:
        fields["seed"] = seed_override
    cfg = SimConfig(adversaries=advs, **fields)
    cfg.validate()
    return cfg


def run_scenario(doc: dict, seed_override: int | None = None, checks=None, export_path=None):
    """Execute one scenario.  Returns (report_text, exit_code)."""
    config = scenario_config(doc, seed_override)
    enabled = list(checks) if checks is not None else list(doc.get("checks", DEFAULT_CHECKS))
    allow_stall = bool(doc.get("allow_stall", False))

    transcript = run(config)
    context = build_context(config)
    head = max((b.header.height for b in transcript.chain), default=0)

    lines = []
    results = {}
    metrics = {}

    def record(key, value):
        metrics[key] = value
        lines.append(f"{key}={value}")

    record("config_digest", config.digest_hex())
    record("transcript_digest", transcript.digest_hex())
    record("committed_head", head)
    record("ticks", transcript.ticks)
    record("stalled", int(transcript.stalled))

    if "single_chain" in enabled:
        ok, viol = analysis.assert_single_chain(transcript)
        results["single_chain"] = ok
        record("check_single_chain", "pass" if ok else f"fail:{viol}")
    if "schedule" in enabled:
        violations = analysis.schedule_audit(transcript.chain, context.genesis_assignments)
        ok = not violations
        results["schedule"] = ok
        record("check_schedule", "pass" if ok else f"fail:{violations[0]}")
    if "conservation" in enabled:
        try:
            audit = analysis.conservation_audit(transcript, context)
            ok = audit["drift"] == 0
            record("check_conservation", "pass" if ok else f"fail:drift={audit['drift']}")
            record("issued", audit["issued"])
            record("confiscated", audit["confiscated"])
        except analysis.ChainInvalid as exc:
            ok = False
            record("check_conservation", f"fail:{exc}")
        results["conservation"] = ok
    if "fairness" in enabled:
        window = tuple(doc.get("fairness_window", (1, max(head - 2, 1))))
        try:
            fr = analysis.selection_fairness(transcript, window, context)
            critical = chi_square_critical(fr.degrees_of_freedom)
            ok = fr.chi_square < critical
            record("fairness_chi_square", f"{fr.chi_square:.6f}")
            record("fairness_dof", fr.degrees_of_freedom)
            record("fairness_critical_0p01", f"{critical:.6f}")
        except (analysis.AnalysisError, analysis.ChainInvalid) as exc:
            ok = False
            record("fairness_error", str(exc))
        results["fairness"] = ok
        record("check_fairness", "pass" if ok else "fail")
    if "liveness" in enabled:
        ok = not transcript.stalled and head >= config.run_height
        results["liveness"] = ok
        record("check_liveness", "pass" if ok else f"fail:head={head}")

    try:
        steps = analysis.replay_chain(
            transcript.chain, context.genesis_trie, context.genesis_assignments, context.engine_cfg
        )
    except analysis.ChainInvalid:
        steps = []
    if steps:
        final_balances = [s.balance for _, s in steps[-1].post_trie.accounts()]
        record("gini_genesis", f"{analysis.gini([s.balance for _, s in context.genesis_trie.accounts()]):.6f}")
        record("gini_final", f"{analysis.gini(final_balances):.6f}")

    stall_fail = transcript.stalled and not allow_stall
    record("stall_allowed", int(allow_stall))

    all_pass = all(results.values()) and not stall_fail
    summary = {
        "checks": {k: bool(v) for k, v in results.items()},
        "committed_head": head,
        "config_digest": config.digest_hex(),
        "exit_code": 0 if all_pass else 1,
        "stalled": transcript.stalled,
        "transcript_digest": transcript.digest_hex(),
    }
    report = "\n".join(lines) + "\n" + json.dumps(summary, sort_keys=True, indent=2) + "\n"

    if export_path is not None:
        Path(export_path).write_bytes(encode_chain(transcript.chain))

    return report, 0 if all_pass else 1


def import_chain(chain_path: str, doc: dict):
    """Load an exported chain and re-verify every block against a fresh
    genesis derived from the scenario config.  Returns (chain, message)
    or raises analysis.ChainInvalid / ScenarioError."""
    config = scenario_config(doc)
    try:
        data = Path(chain_path).read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read chain file: {exc}")
    try:
        chain = decode_chain(data)
    except ValueError as exc:
        raise analysis.ChainInvalid(-1, f"undecodable chain file: {exc}")
    if not chain:
        return [], "empty chain: trivially valid"
    context = build_context(config)
    expected_genesis = block_digest(context.genesis_block.header)
    if block_digest(chain[0].header) != expected_genesis:
        raise analysis.ChainInvalid(0, "genesis does not match the scenario config")
    analysis.replay_chain(chain, context.genesis_trie, context.genesis_assignments, context.engine_cfg)
    head = chain[-1].header.height
    return chain, f"verified {len(chain)} blocks up to height {head}"


def _parse_fraction(text: str) -> Fraction:
    return Fraction(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="portchain")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario and report")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="directory for report.txt")
    p_run.add_argument("--check", default=None, help="comma-separated checks to run")
    p_run.add_argument("--export-chain", default=None, help="write the committed chain here")

    p_imp = sub.add_parser("import", help="verify an exported chain file")
    p_imp.add_argument("--chain", required=True, help="chain file to verify")
    p_imp.add_argument("--config", required=True, help="scenario JSON the chain was produced from")

    p_tail = sub.add_parser("tail", help="exact quorum-failure tail probability")
    p_tail.add_argument("--n", type=int, required=True)
    p_tail.add_argument("--p", type=_parse_fraction, required=True, help="e.g. 1/3")
    p_tail.add_argument("--m", type=int, required=True)
    p_tail.add_argument("--digits", type=int, default=30)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            doc = load_scenario(args.config)
            checks = args.check.split(",") if args.check else None
            if checks is not None:
                bad = [c for c in checks if c not in DEFAULT_CHECKS + ["fairness"]]
                if bad:
                    raise ScenarioError(f"unknown checks: {','.join(bad)}")
            report, code = run_scenario(
                doc, seed_override=args.seed, checks=checks, export_path=args.export_chain
            )
        except (ScenarioError, SimConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        sys.stdout.write(report)
        if args.out is not None:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "report.txt").write_text(report)
        return code
    if args.command == "import":
        try:
            doc = load_scenario(args.config)
            _, message = import_chain(args.chain, doc)
        except (ScenarioError, SimConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except analysis.ChainInvalid as exc:
            print(f"invalid chain: {exc}", file=sys.stderr)
            return 1
        print(message)
        return 0
    if args.command == "tail":
        try:
            result = analysis.byzantine_tail(args.n, args.p, args.m, digits=args.digits)
        except analysis.AnalysisError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"n={args.n} m={args.m} p={args.p}")
        print(f"exact_binomial_tail={result.exact_str}")
        print(f"coefficient_free_sum={result.coefficient_free_str}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
