"""``nileztn`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
Failures print one ``error kind=<kind> message=<json string>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .agent import QTableFormatError
from .config import ConfigError, RunConfig, load_config
from .evalkit import ReportFormatError, satisfaction
from .intent import (ConflictError, ExemplarCorpus, HttpTranslationClient, IntentError,
                     IntentStore, NaturalIntent, detect_conflict, extract_bandwidth,
                     render_nile, translate, translate_with_backend)
from .netsim import TraceError
from .pipeline import STAGES, MissingArtifactError, Workspace, run_pipeline
from .predictor import ModelFormatError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report("usage", message)
        raise SystemExit(EXIT_USAGE)


def _report(kind: str, message: str) -> None:
    print(f"error kind={kind} message={json.dumps(message)}", file=sys.stderr)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file (defaults if omitted)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="sets trace, training and evaluation seeds")
    p.add_argument("--corpus", help="exemplar corpus file (bundled corpus if omitted)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nileztn", description="Intent-driven closed-loop bandwidth control "
                 "on a simulated link.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="<subcommand>")

    p = sub.add_parser("translate", help="English intent to Nile plus the extracted goal",
                       description="With --intent, translate one sentence. Without it, "
                       "translate the config's ID and OOD intents and write the goals file "
                       "used by the later stages.")
    _common(p)
    p.add_argument("--intent", help="English intent text")
    p.add_argument("--store", help="file of active Nile intents to check for conflicts")
    p.add_argument("--admit", action="store_true", help="append the intent to --store if it "
                   "does not conflict")
    p.add_argument("--backend-url", help="use an HTTP translation service instead of retrieval")

    helps = {
        "gen-trace": "generate the training and evaluation capacity traces",
        "train-predictor": "train the BiLSTM and its residual booster",
        "train-agent": "train the Q-table and keep an early snapshot",
        "run": "evaluation episodes for ID/OOD x optimal/suboptimal",
        "montecarlo": "exhaustive-search objective on the comparison traces",
        "evaluate": "satisfaction, MOS, closed-loop objective and trend report",
        "pipeline": "all stages in order plus a manifest",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return ap


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "corpus", None):
        cfg = replace(cfg, corpus=args.corpus)
    return cfg


def cmd_translate(args) -> int:
    intent = NaturalIntent(args.intent)
    if args.backend_url:
        nile = translate_with_backend(intent, HttpTranslationClient(args.backend_url))
    else:
        corpus = ExemplarCorpus.load(args.corpus) if args.corpus else ExemplarCorpus.bundled()
        nile = translate(intent, corpus)
    if args.store:
        try:
            store = IntentStore.load(args.store)
        except FileNotFoundError:
            if not args.admit:
                raise
            store = IntentStore()
        conflicts = detect_conflict(nile, store)
        if conflicts:
            print(render_nile(nile))
            for c in conflicts:
                print(f"conflict: {c.describe()}", file=sys.stderr)
            raise ConflictError(conflicts)
        if args.admit:
            store.admit(nile)
            store.save(args.store)
    print(render_nile(nile))
    print(f"beta_target_kbps={extract_bandwidth(nile).beta_target}")
    return EXIT_OK


def cmd_stage(name: str, args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.out_dir)
    result = STAGES[name](cfg, ws)
    if name == "evaluate":
        print(result.summary())
        print(f"report: {ws.path('report')}")
    elif name == "run":
        for (sc, md), ep in result.items():
            print(f"{sc} {md}: satisfaction {satisfaction(ep, ep.goal_kbps).fraction:.3f}")
    elif name == "translate":
        print(f"goals: ID {result.id_kbps:g} kbps, OOD {result.ood_kbps:g} kbps")
    else:
        print(f"{name}: wrote to {ws.out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    report = run_pipeline(cfg, cfg.out_dir)
    print(report.summary())
    print(f"ordering ID-opt > ID-sub > OOD-opt > OOD-sub: {report.ordering_holds()}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "translate" and args.intent is not None:
            return cmd_translate(args)
        if args.command == "pipeline":
            return cmd_pipeline(args)
        return cmd_stage(args.command, args)
    except ConfigError as exc:
        _report("config", str(exc))
        return EXIT_USAGE
    except MissingArtifactError as exc:
        _report("missing-artifact", str(exc))
        return EXIT_RUNTIME
    except IntentError as exc:
        _report(exc.kind, str(exc))
        return EXIT_RUNTIME
    except (ModelFormatError, QTableFormatError, TraceError, ReportFormatError) as exc:
        _report("data", str(exc))
        return EXIT_RUNTIME
    except OSError as exc:
        _report("io", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
