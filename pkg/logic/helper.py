# -*- coding: utf-8 -*-
import argparse
import json
import logging
import pathlib
import re

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
TECHNIQUE_HELP = ('plain, textual_inversion, dynamic_strength[:s_min,s_max] or latent_alteration[:amplitude], e.g. '
                  'dynamic_strength:0.2,0.8')


def generate_execution_id(args_dict):
    num_args_to_use = 5
    max_characters = 100
    execution_id = "-".join([str(key) + '-' + str(value)
                             if not isinstance(value, (list, tuple))
                             else str(key) + '-' + "-".join([str(v) for v in value])
                             for key, value in list(args_dict.items())[:num_args_to_use]])
    # run directories are flat
    return re.sub(r"[^\w.,=+-]", "_", execution_id)[:max_characters]


def export_json_file(data, filepath):
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=4, default=lambda x: str(x))


def read_args_from_file(filepath):
    try:
        with open(filepath) as f:
            args = json.load(f)
    except FileNotFoundError:
        print("Couldn't find file to read parameter values from: {}".format(filepath))
        raise
    except ValueError:
        print("Invalid format for parameter file {}.".format(filepath))
        raise
    if not isinstance(args, dict):
        raise ValueError("parameter file {} must hold a flat key/value object".format(filepath))
    return args


def read_seq_id(filename='sequence.dat'):
    try:
        with open(filename, 'r') as f:
            seq = int(f.read())
    except FileNotFoundError:
        seq = 0
    return seq


def write_seq_id(seq, filename='sequence.dat'):
    with open(filename, 'w') as f:
        f.write(str(seq))


def create_run_dir(output_dir, execution_id):
    """
    Create the directory of a new run, named <seq>-<execution_id>, where seq is the counter kept in
    <output_dir>/sequence.dat.
    @param output_dir: the parent of all run directories
    @param execution_id: the identifier of the run
    @return: path of the new directory
    """
    output_dir = pathlib.Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    sequence_file = output_dir / 'sequence.dat'
    seq_id = read_seq_id(sequence_file) + 1
    write_seq_id(seq_id, sequence_file)
    path = output_dir / "{}-{}".format(seq_id, execution_id)
    path.mkdir(parents=True)
    return path


def merge_args(defaults, file_args, cli_args):
    """
    Effective parameters: defaults < values from the parameter file < values given explicitly on the command line.
    @param cli_args: only the flags the user actually typed
    """
    unknown = sorted(set(file_args) - set(defaults))
    if unknown:
        raise ValueError("unknown parameter(s) in file: {}".format(", ".join(unknown)))
    merged = dict(defaults)
    merged.update(file_args)
    merged.update(cli_args)
    return merged


def setup_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def positive_int(value):
    int_value = int(value)
    if int_value <= 0:
        raise argparse.ArgumentTypeError("invalid positive int value: {}".format(value))
    return int_value


def non_negative_int(value):
    int_value = int(value)
    if int_value < 0:
        raise argparse.ArgumentTypeError("invalid non-negative int value: {}".format(value))
    return int_value


def positive_float(value):
    float_value = float(value)
    if float_value <= 0:
        raise argparse.ArgumentTypeError("invalid positive float value: {}".format(value))
    return float_value


def fraction(value):
    float_value = float(value)
    if float_value <= 0 or float_value > 1:
        raise argparse.ArgumentTypeError("invalid fraction value: {}".format(value))
    return float_value


def comma_list(value):
    """
    Comma-separated values. A value with parameters keeps them: "dynamic_strength:0.2,0.8,plain" gives
    ['dynamic_strength:0.2,0.8', 'plain'].
    """
    items = []
    for item in (item.strip() for item in value.split(',')):
        if not item:
            raise argparse.ArgumentTypeError("invalid comma-separated list: '{}'".format(value))
        if items and ':' in items[-1] and not item[0].isalpha():
            items[-1] += ',' + item
        else:
            items.append(item)
    return items


def add_common_arguments(parser):
    """
    Arguments shared by every command. Defaults are None so that explicitly given flags can be told apart from
    values read from a parameter file; the effective defaults live in main.DEFAULTS.
    @param parser: an argparse.ArgumentParser object
    """
    parser.add_argument('--config', nargs="?", type=str, default=None,
                        help='A JSON file with parameter values (e.g. the args.json of a previous run). Flags given '
                             'on the command line take precedence over the file.')
    parser.add_argument('--manifest', nargs="?", type=str, default=None,
                        help='The dataset manifest to work on.')
    parser.add_argument('--image_root', nargs="?", type=str, default=None,
                        help='The directory image paths are resolved against. Default is the directory of the '
                             'manifest.')
    parser.add_argument('--backend', nargs="?", type=str, default=None,
                        help='The generation backend: mock or stable-diffusion-v1-4. Default is mock.')
    parser.add_argument('--embedder', nargs="?", type=str, default=None,
                        help='The feature extractor: mock, inception-v3-pool3 or resnet50. Default is mock.')
    parser.add_argument('--seed', nargs="?", type=non_negative_int, default=None,
                        help='Seed for reproducibility; every random draw of the run derives from it. Default is 42.')
    parser.add_argument('--out', nargs="?", type=str, default=None,
                        help='The parent directory of run directories. Default is output.')
    parser.add_argument('--execution_id', nargs="?", type=str, default=None,
                        help='An optional identifier for the run, used to name its output folder.')
    parser.add_argument('--verbose', default=None, action='store_true',
                        help='Log debugging messages.')
    parser.add_argument('--no-progress', dest='no_progress', default=None, action='store_true',
                        help='Hide progress bars.')


def add_study_arguments(parser):
    parser.add_argument('experiment', type=str,
                        choices=['prompt_study', 'blur_study', 'context_study', 'resolution_study', 'aspect_study',
                                 'technique_study'],
                        help='The study to run.')
    parser.add_argument('--configs', nargs="?", type=comma_list, default=None,
                        help='The named configurations, comma-separated. Default is HiSt_HiSc,HiSt_LoSc,LoSt_LoSc.')
    parser.add_argument('--n_conditional', nargs="?", type=positive_int, default=None,
                        help='The number of conditional images drawn from the dataset. Default is 100.')
    parser.add_argument('--variants', nargs="?", type=comma_list, default=None,
                        help='The rows of the study, comma-separated: prompt builders for prompt_study, blur levels, '
                             'context fractions, scale factors or aspect shapes for the image studies, and techniques '
                             'for technique_study (' + TECHNIQUE_HELP + '). Default is the full set of the study.')
    parser.add_argument('--levels', nargs="?", type=comma_list, default=None,
                        help='Blur levels of blur_study (none, low, medium, high).')
    parser.add_argument('--fractions', nargs="?", type=comma_list, default=None,
                        help='Context fractions of context_study or scale factors of resolution_study.')
    parser.add_argument('--prompt', nargs="?", type=str, default=None,
                        help='The prompt builder of image studies. Default is attribute.')
    parser.add_argument('--grammar', nargs="?", type=str, default=None,
                        help='Grammar id or grammar file. Default is the grammar of the manifest dataset.')
    parser.add_argument('--llm_responses', nargs="?", type=str, default=None,
                        help='A file with recorded language model answers for the llm-* prompt builders.')
    parser.add_argument('--tokens', nargs="?", type=str, default=None,
                        help='A token library file for the textual_inversion variant of technique_study; tokens '
                             'are trained when absent.')
    parser.add_argument('--steps', nargs="?", type=positive_int, default=None,
                        help='Denoising steps per generation. Default is 50.')


def add_expand_arguments(parser):
    parser.add_argument('--config_name', nargs="?", type=str, default=None,
                        help='The named configuration used for expansion. Default is HiSt_HiSc.')
    parser.add_argument('--technique', nargs="?", type=str, default=None,
                        help=TECHNIQUE_HELP + '. Default is textual_inversion.')
    parser.add_argument('--grammar', nargs="?", type=str, default=None,
                        help='Grammar id or grammar file. Default is the grammar of the manifest dataset.')
    parser.add_argument('--multiplier', nargs="?", type=positive_int, default=None,
                        help='Synthetic samples per real training sample. Default is 1.')
    parser.add_argument('--label_mode', nargs="?", type=str, default=None, choices=['negative', 'mask'],
                        help='Labels of attributes a prompt does not state: negative or mask. Default is negative.')
    parser.add_argument('--tokens', nargs="?", type=str, default=None,
                        help='A token library file; tokens are trained when absent.')
    parser.add_argument('--token_steps', nargs="?", type=positive_int, default=None,
                        help='Training steps per textual inversion token. Default is 100.')
    parser.add_argument('--steps', nargs="?", type=positive_int, default=None,
                        help='Denoising steps per generation. Default is 50.')


def add_train_arguments(parser):
    parser.add_argument('--epochs', nargs="?", type=positive_int, default=None,
                        help='The maximum number of training epochs. Default is 30.')
    parser.add_argument('--batch_size', nargs="?", type=positive_int, default=None,
                        help='The batch size. Default is 64.')
    parser.add_argument('--lr', nargs="?", type=positive_float, default=None,
                        help='The base learning rate. Default is 0.01.')
    parser.add_argument('--lr_fr', nargs="?", type=positive_float, default=None,
                        help='The learning rate of the backbone when it is fine-tuned. Default is lr.')
    parser.add_argument('--lr_new', nargs="?", type=positive_float, default=None,
                        help='The learning rate of the attribute head. Default is lr.')
    parser.add_argument('--label_mode', nargs="?", type=str, default=None, choices=['negative', 'mask'],
                        help='negative trains on every label, mask only on the labeled_attributes of a sample.')
    parser.add_argument('--freeze_backbone', type=bool, default=None, action=argparse.BooleanOptionalAction,
                        help='Train the linear head only. Default is yes.')


def add_eval_arguments(parser):
    parser.add_argument('--model', nargs="?", type=str, default=None,
                        help='The model artifact to evaluate.')
    parser.add_argument('--split', nargs="?", type=str, default=None, choices=['val', 'test'],
                        help='The split to evaluate on. Default is test.')


def add_report_arguments(parser):
    parser.add_argument('reports', nargs='+', type=str,
                        help='Two mA reports to compare, or one study or mA report to render again.')
