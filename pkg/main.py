import argparse
import logging
import sys
import time

import logic.helper as hlp
from logic.generation import NAMED_CONFIGS
from logic.studies import RUNNERS, STUDIES, ExperimentConfig, run_study

logger = logging.getLogger('main')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

COMMON_DEFAULTS = {
    'manifest': None,
    'image_root': None,
    'backend': 'mock',
    'embedder': 'mock',
    'seed': 42,
    'out': 'output',
    'execution_id': None,
    'verbose': False,
    'no_progress': False,
}
COMMAND_DEFAULTS = {
    'study': {'configs': list(NAMED_CONFIGS), 'n_conditional': 100, 'variants': None, 'levels': None,
              'fractions': None, 'prompt': 'attribute', 'grammar': None, 'llm_responses': None, 'tokens': None,
              'steps': 50},
    'expand': {'config_name': 'HiSt_HiSc', 'technique': 'textual_inversion', 'grammar': None, 'multiplier': 1,
               'label_mode': 'negative', 'tokens': None, 'token_steps': 100, 'steps': 50},
    'train': {'epochs': 30, 'batch_size': 64, 'lr': 0.01, 'lr_fr': None, 'lr_new': None, 'label_mode': 'negative',
              'freeze_backbone': True},
    'eval': {'model': None, 'split': 'test'},
    'report': {'reports': None},
}
COMMON_KEYS = set(COMMON_DEFAULTS) | {'configs', 'n_conditional'}


def build_parser():
    parser = argparse.ArgumentParser(description='Pedestrian attribute dataset expansion')
    commands = parser.add_subparsers(dest='command', required=True)
    study = commands.add_parser('study', help='Run a generation-quality study (FID grid).')
    hlp.add_study_arguments(study)
    expand = commands.add_parser('expand', help='Expand the training split of a dataset with synthetic samples.')
    hlp.add_expand_arguments(expand)
    train = commands.add_parser('train', help='Train the attribute classifier.')
    hlp.add_train_arguments(train)
    evaluate = commands.add_parser('eval', help='Evaluate a trained classifier (mA).')
    hlp.add_eval_arguments(evaluate)
    report = commands.add_parser('report', help='Compare mA reports or render a report again.')
    hlp.add_report_arguments(report)
    for command in (study, expand, train, evaluate, report):
        hlp.add_common_arguments(command)
    return parser


def effective_args(args):
    """Defaults, then the parameter file, then the flags given explicitly."""
    command = args.command
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ('command', 'config', 'experiment')}
    defaults = dict(COMMON_DEFAULTS)
    defaults.update(COMMAND_DEFAULTS[command])
    file_args = hlp.read_args_from_file(args.config) if args.config else {}
    return hlp.merge_args(defaults, file_args, given)


def experiment_config(command, experiment, params):
    specific = {k: v for k, v in params.items() if k not in COMMON_KEYS and v is not None}
    if command == 'study':
        variants = specific.pop('variants', None) or specific.pop('levels', None) or specific.pop('fractions', None)
        specific.pop('levels', None)
        specific.pop('fractions', None)
        if variants:
            specific['variants'] = variants
    return ExperimentConfig(
        experiment=experiment,
        manifest_path=params['manifest'],
        backend_id=params['backend'],
        embedder_id=params['embedder'],
        configs=tuple(params.get('configs') or NAMED_CONFIGS),
        seed=params['seed'],
        n_conditional=params.get('n_conditional') or 100,
        output_dir=params['out'],
        image_root=params.get('image_root'),
        params=specific,
    )


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    experiment = args.experiment if args.command == 'study' else args.command
    try:
        params = effective_args(args)
        config = experiment_config(args.command, experiment, params)
    except (OSError, ValueError) as e:
        print("Invalid arguments: {}".format(e), file=sys.stderr)
        return EXIT_USAGE

    hlp.setup_logging(params['verbose'])
    print("Running {}".format(experiment))
    start_time = time.time()
    display_progress = not params['no_progress']

    run_params = {k: v for k, v in params.items() if k not in ('verbose', 'no_progress')}
    execution_id = params['execution_id'] or hlp.generate_execution_id(
        {'experiment': experiment} | {k: v for k, v in config.params.items()})
    try:
        run_dir = hlp.create_run_dir(params['out'], execution_id)
        hlp.export_json_file(run_params, run_dir / 'args.json')
        if experiment in STUDIES:
            report = run_study(config, run_dir=run_dir, display_progress=display_progress)
            logger.info("Study grid:\n%s", report.grid.to_string())
        elif experiment in ('expand', 'train'):
            RUNNERS[experiment](config, run_dir, display_progress=display_progress)
        else:
            RUNNERS[experiment](config, run_dir)
    except Exception as e:
        logger.error("%s failed: %s", experiment, e)
        logger.debug("Traceback", exc_info=True)
        return EXIT_FAILURE
    finally:
        print("Execution time: {:.2f} seconds".format(time.time() - start_time))
    print("Outputs written to {}".format(run_dir))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
