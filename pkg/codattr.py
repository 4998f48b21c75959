"""
codattr - LLM code authorship attribution and verification experiments

    codattr verify|attribute|tournament|robustness --config exp.toml
            [--backend mock|http] [--resume] [--dry-run]
    codattr report --config exp.toml
    codattr synth --out fixtures/ --authors 60 --tasks 4 [--adversarial-pairs 10]

Exit codes: 0 success, 2 configuration error, 3 corpus error,
4 run aborted by backend failures (partial report written).
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from corpus_engine import CorpusError, count_different_pairs, sample_verification_cases
from cost_ledger import PricingError
from experiment_config import ConfigError, ExperimentKind, load_config
from experiment_runner import RunAborted, format_report, plan_experiment, run_experiment, run_report
from llm_backend import BackendConfigError
from prompt_engine import TemplateError
from style_oracle import write_calibration
from synthetic_corpus import (
    generate_adversarial_fixture,
    generate_corpus,
    write_author_dirs,
    write_manifest,
    write_pairing,
)
from tournament_engine import TournamentBudgetError

logger = logging.getLogger("codattr")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORPUS = 3
EXIT_ABORTED = 4

CALIBRATION_PAIRS = 100
CALIBRATION_SEED = 0

COMMAND_KINDS = {
    "verify": ExperimentKind.VERIFICATION,
    "attribute": ExperimentKind.ATTRIBUTION,
    "tournament": ExperimentKind.TOURNAMENT,
    "robustness": ExperimentKind.ROBUSTNESS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codattr", description="LLM code authorship experiments")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in COMMAND_KINDS:
        p = sub.add_parser(name, help=f"run a {COMMAND_KINDS[name].value} experiment")
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--backend", choices=["mock", "http"], help="override [backend] kind")
        p.add_argument("--resume", action="store_true", help="keep finished tournament queries")
        p.add_argument("--dry-run", action="store_true", help="render and price prompts without sending them")

    p = sub.add_parser("report", help="cost and metric summary of a finished run")
    p.add_argument("--config", required=True, help="experiment TOML file")

    p = sub.add_parser("synth", help="write a synthetic corpus with well-separated author styles")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--authors", type=int, default=60)
    p.add_argument("--tasks", type=int, default=4, help="tasks per author")
    p.add_argument("--language", default="cpp", choices=["cpp", "java"])
    p.add_argument("--adversarial-pairs", type=int, default=0, help="evasion/imitation rows to add")
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# -----------------------------------------------------------
# COMMANDS
# -----------------------------------------------------------
def _run(args) -> int:
    cfg = load_config(args.config, backend_override=args.backend)
    expected = COMMAND_KINDS[args.command]
    if cfg.kind is not expected:
        raise ConfigError(f"❌ `codattr {args.command}` needs kind = \"{expected.value}\", config says {cfg.kind.value!r}")

    if args.dry_run:
        plan = plan_experiment(cfg)
        print("🧮 Dry run (nothing sent)")
        print(json.dumps(plan, indent=2, sort_keys=True))
        return EXIT_OK

    report = run_experiment(cfg, resume=args.resume)
    print(format_report(report.to_dict()))
    print(f"✅ Report written to {cfg.run_dir / 'report.json'}")
    return EXIT_OK


def _report(args) -> int:
    cfg = load_config(args.config)
    _, text = run_report(cfg)
    print(text)
    return EXIT_OK


def _synth(args) -> int:
    out = Path(args.out)
    pairs = args.adversarial_pairs
    if pairs and args.authors < 2 * pairs + 6:
        raise ConfigError(f"❌ {pairs} adversarial pairs need at least {2 * pairs + 6} authors")

    corpus = generate_corpus(args.authors, args.tasks, args.language)
    write_author_dirs(corpus, out / "corpus")
    print(f"✅ {len(corpus)} samples by {len(corpus.index)} authors in {out / 'corpus'}")

    if pairs:
        _, transformed, rows = generate_adversarial_fixture(pairs, args.tasks, args.language)
        write_manifest(transformed, out / "transformed")
        write_pairing(rows, out / "pairing.json")
        print(f"✅ {len(rows)} adversarial rows in {out / 'transformed'} and {out / 'pairing.json'}")
    _calibrate(corpus, out / "calibration.json")
    return EXIT_OK


def _calibrate(corpus, path: Path):
    """Mock-oracle threshold from seeded same/different pairs of the generated corpus"""
    same = sum(len(samples) * (len(samples) - 1) // 2 for samples in corpus.index.values())
    n = min(CALIBRATION_PAIRS, same, count_different_pairs(corpus))
    if n == 0:
        logger.warning("⚠️ Corpus has no same-author pairs; skipping calibration")
        return
    cases = sample_verification_cases(corpus, n, n, CALIBRATION_SEED)
    threshold = write_calibration(path, cases, CALIBRATION_SEED)
    print(f"✅ Calibrated threshold {threshold:.4f} from {2 * n} pairs in {path}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)

    try:
        if args.command == "synth":
            return _synth(args)
        if args.command == "report":
            return _report(args)
        return _run(args)
    except RunAborted as e:
        print(str(e), file=sys.stderr)
        return EXIT_ABORTED
    except CorpusError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CORPUS
    except (ConfigError, TemplateError, BackendConfigError, PricingError, TournamentBudgetError) as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
