#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import argparse
import json
import logging
import sys

from argparse import RawTextHelpFormatter
from typing import List, Optional

from mmrisk.mm_checkpoint import load_checkpoint, save_checkpoint
from mmrisk.mm_config import TrainingConfig, provenance
from mmrisk.mm_data import Dataset, SignalSpec, build_dataset, load_clinical_csv, load_reports_jsonl, \
    synthesize_cohort, write_cohort, write_tokens_jsonl
from mmrisk.mm_exceptions import ConfigurationError, MmRiskException, UndefinedMetricError
from mmrisk.mm_gradcheck import GRADCHECK_TOLERANCE, run_gradchecks
from mmrisk.mm_metrics import evaluate
from mmrisk.mm_models import ScenarioTag, predict
from mmrisk.mm_report import dump_json, write_cv_outputs
from mmrisk.mm_text import load_stopwords, make_stemmer, preprocess
from mmrisk.mm_training import cross_validate, fit_scenario, kfold_split

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_ERROR = 2
EXIT_UNDEFINED_AUC = 3

description = """\
Multimodal cardiovascular risk prediction from chest X-ray reports and clinical predictors.

Commands:
  synth-data       write a synthetic cohort (clinical.csv, reports.jsonl, generator.json)
  preprocess       lowercase / strip digits and punctuation / drop stopwords / stem reports
  cross-validate   k-fold cross-validation of one or all scenarios
  train            fit one scenario and write a checkpoint
  evaluate         score a checkpoint on a cohort and emit its metrics
  gradcheck        finite-difference check of every layer and of micro scenario graphs

Exit codes: 0 success, 1 gradient check failed, 2 error, 3 AUC undefined (single-class data).
"""


def configure_logging(level: str = 'INFO', log_file: Optional[str] = None):
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode='w'))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='[%(asctime)s.%(msecs)03d]: %(message)s',
        datefmt='%H:%M:%S',
        handlers=handlers,
        force=True)


def scenario_list(name: str) -> List[ScenarioTag]:
    if name == 'all':
        return list(ScenarioTag)
    return [ScenarioTag.from_name(name)]


def load_config(args) -> TrainingConfig:
    config = TrainingConfig.from_json(args.config) if getattr(args, 'config', None) else TrainingConfig()
    return config.with_overrides(seed=getattr(args, 'seed', None), epochs=getattr(args, 'epochs', None))


def load_dataset(clinical: str, reports: str, config: TrainingConfig) -> Dataset:
    return build_dataset(load_clinical_csv(clinical), load_reports_jsonl(reports),
                         load_stopwords(config.stopwords), make_stemmer(config.stemmer))


def emit(payload: dict, out: Optional[str]):
    if out:
        dump_json(payload, out)
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + '\n')


def cmd_synth_data(args) -> int:
    signal = SignalSpec.preset(args.signal)
    if args.missing_rate is not None:
        signal = SignalSpec(signal.clinical_weight, signal.text_weight, missing_rate=args.missing_rate)
    cohort = synthesize_cohort(args.n, args.seed, signal)
    write_cohort(cohort, args.out_dir)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    config = load_config(args)
    stopwords = load_stopwords(config.stopwords)
    stemmer = make_stemmer(config.stemmer)
    reports = load_reports_jsonl(args.reports)
    write_tokens_jsonl([r.patient_id for r in reports], [preprocess(r.text, stopwords, stemmer) for r in reports],
                       args.out)
    logging.info(f"{len(reports)} report(s) preprocessed with the {stemmer.name} stemmer into {args.out}")
    return EXIT_OK


def cmd_cross_validate(args) -> int:
    config = load_config(args)
    dataset = load_dataset(args.clinical, args.reports, config)
    results = cross_validate(scenario_list(args.scenario), dataset, config, jobs=args.jobs)
    write_cv_outputs(results, config, args.out, n=len(dataset), positives=dataset.positives)
    undefined = [f"{tag.value}/{f.fold}" for tag, r in results.items() for f in r.folds if not f.report.auc_defined]
    if undefined:
        logging.error(f"AUC undefined for fold(s) {undefined}: held-out fold has a single class")
        return EXIT_UNDEFINED_AUC
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args)
    tag = ScenarioTag.from_name(args.scenario)
    dataset = load_dataset(args.clinical, args.reports, config).canonical()
    train_ds = dataset
    payload = provenance(config.seed, config)
    if args.holdout_fold is not None:
        if not 0 <= args.holdout_fold < config.folds:
            raise ConfigurationError(f"--holdout-fold must be in [0, {config.folds}), got {args.holdout_fold}")
        plan = kfold_split(len(dataset), config.folds, config.seed, labels=dataset.labels,
                           stratified=config.stratified)
        train_ds = dataset.subset(plan.train_indices(args.holdout_fold))
        payload['holdout_fold'] = args.holdout_fold
    model, pipeline, logs = fit_scenario(tag, train_ds, config, config.seed)
    save_checkpoint(args.out, model, pipeline, config, config.seed)
    if args.holdout_fold is not None:
        held_out = dataset.subset(plan.test_indices(args.holdout_fold))
        payload['holdout_metrics'] = evaluate(predict(model, pipeline.batch(held_out)), held_out.labels,
                                              config.threshold).to_dict()
    payload.update({'scenario': tag.value, 'checkpoint': args.out, 'n_train': len(train_ds),
                    'parameter_count': model.parameter_count(), 'epoch_losses': [log.train_loss for log in logs]})
    emit(payload, None)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    dataset = load_dataset(args.clinical, args.reports, config)
    scores = predict(checkpoint.model, checkpoint.pipeline.batch(dataset))
    report = evaluate(scores, dataset.labels, config.threshold)
    payload = provenance(checkpoint.seed if args.seed is None else args.seed, config)
    payload.update({'scenario': checkpoint.model.scenario.value, 'checkpoint': args.checkpoint,
                    'metrics': report.to_dict()})
    emit(payload, args.out)
    if not report.auc_defined:
        return EXIT_UNDEFINED_AUC
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = TrainingConfig.micro(seed=args.seed)
    results = run_gradchecks(scenario_list(args.scenario), seed=args.seed, h=args.step)
    max_error = max(r.max_error for r in results)
    payload = provenance(args.seed, config)
    payload.update({'checks': {r.name: r.errors for r in results}, 'max_relative_error': max_error,
                    'tolerance': args.tolerance})
    emit(payload, None)
    return EXIT_OK if max_error <= args.tolerance else EXIT_GRADCHECK_FAILED


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mmrisk', description=description, formatter_class=RawTextHelpFormatter)
    parser.add_argument('--log-level', type=str, default='INFO', help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--log-file', type=str, default=None, help='also write the log to this file')
    commands = parser.add_subparsers(dest='command', required=True)
    scenarios = [t.value for t in ScenarioTag]

    synth = commands.add_parser('synth-data', help='write a synthetic cohort')
    synth.add_argument('--n', type=int, default=5603, help='number of patients')
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--signal', choices=['balanced', 'clinical-only', 'text-only'], default='balanced')
    synth.add_argument('--missing-rate', type=float, default=None, help='missingness of laboratory values')
    synth.add_argument('--out-dir', type=str, required=True)
    synth.set_defaults(func=cmd_synth_data)

    prep = commands.add_parser('preprocess', help='tokenize reports into a tokens JSONL file')
    prep.add_argument('--reports', type=str, required=True)
    prep.add_argument('--config', type=str, default=None, help='JSON file with TrainingConfig fields')
    prep.add_argument('--seed', type=int, default=None)
    prep.add_argument('--out', type=str, required=True)
    prep.set_defaults(func=cmd_preprocess)

    cv = commands.add_parser('cross-validate', help='k-fold cross-validation')
    cv.add_argument('--scenario', choices=scenarios + ['all'], default='all')
    cv.add_argument('--clinical', type=str, required=True)
    cv.add_argument('--reports', type=str, required=True)
    cv.add_argument('--config', type=str, default=None, help='JSON file with TrainingConfig fields')
    cv.add_argument('--seed', type=int, default=None)
    cv.add_argument('--epochs', type=int, default=None, help='override the configured number of epochs')
    cv.add_argument('--jobs', type=int, default=1, help='folds trained in parallel')
    cv.add_argument('--out', type=str, default='report.json')
    cv.set_defaults(func=cmd_cross_validate)

    train = commands.add_parser('train', help='fit one scenario and write a checkpoint')
    train.add_argument('--scenario', choices=scenarios, required=True)
    train.add_argument('--clinical', type=str, required=True)
    train.add_argument('--reports', type=str, required=True)
    train.add_argument('--config', type=str, default=None)
    train.add_argument('--seed', type=int, default=None)
    train.add_argument('--epochs', type=int, default=None)
    train.add_argument('--holdout-fold', type=int, default=None, help='leave this fold of the plan out of training')
    train.add_argument('--out', type=str, required=True, help='checkpoint file')
    train.set_defaults(func=cmd_train)

    ev = commands.add_parser('evaluate', help='score a checkpoint')
    ev.add_argument('--checkpoint', type=str, required=True)
    ev.add_argument('--clinical', type=str, required=True)
    ev.add_argument('--reports', type=str, required=True)
    ev.add_argument('--seed', type=int, default=None, help='recorded in the output, the checkpoint seed by default')
    ev.add_argument('--out', type=str, default=None, help='metrics JSON file, standard output when omitted')
    ev.set_defaults(func=cmd_evaluate)

    gc = commands.add_parser('gradcheck', help='finite-difference gradient validation')
    gc.add_argument('--scenario', choices=scenarios + ['all'], default='all')
    gc.add_argument('--micro', action='store_true', default=True, help='micro dimensions (always on)')
    gc.add_argument('--seed', type=int, default=0)
    gc.add_argument('--step', type=float, default=1e-5, help='finite-difference step h')
    gc.add_argument('--tolerance', type=float, default=GRADCHECK_TOLERANCE)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(sys.argv[1:] if argv is None else argv)
    configure_logging(args.log_level, args.log_file)
    try:
        return args.func(args)
    except UndefinedMetricError as err:
        logging.error(f"{err}")
        return EXIT_UNDEFINED_AUC
    except MmRiskException as err:
        logging.error(f"{err.__class__.__name__}: {err}")
        return EXIT_ERROR
    except OSError as err:
        logging.error(f"I/O error: {err}")
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
