import argparse
import logging
import random

import numpy as np

from data_utils.common_utils import Config
from utils.errors import ConfigError

logger = logging.getLogger()

REWARD_CHOICES = ['mcq', 'qa', 'list-acc', 'list-mrr', 'list-judge-mrr', 'mixed']
LIST_REWARD_CHOICES = ['list-acc', 'list-mrr', 'list-judge-mrr']
TEMPLATE_CHOICES = ['mcq', 'mcq_cot', 'qa', 'qa_cot', 'list', 'list_cot']


def add_data_params(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--dataset',
        type=str,
        help='Dataset JSONL: {id, benchmark, question, options?, gold, valid_answers?, format}.')
    parser.add_argument(
        '--responses',
        type=str,
        help='Responses JSONL: {id, response, tokens?}.')
    parser.add_argument(
        '--format',
        dest='expected_format',
        default=None,
        choices=['mcq', 'qa', 'list'],
        help='Reject dataset lines whose format differs from this one.')


def add_reward_params(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--reward',
        default='list-mrr',
        choices=REWARD_CHOICES,
        help=('Correctness reward; "mixed" routes mcq and qa records to their own '
              'reward and list records to --list-reward.'))
    parser.add_argument(
        '--list-reward',
        default='list-mrr',
        choices=LIST_REWARD_CHOICES,
        help='Reward for list records when --reward mixed.')
    parser.add_argument(
        '--lambda',
        dest='length_lambda',
        default=None,
        type=float,
        help='Length-penalty coefficient in [0, 1] (list-acc and list-mrr only).')
    parser.add_argument(
        '--lambda-sweep',
        nargs='+',
        type=float,
        default=None,
        help='Re-score with each of these lambdas and write sweep.json.')
    parser.add_argument(
        '--format-reward',
        action='store_true',
        help='Average the correctness reward with the think-tag format reward.')


def add_judge_params(parser: argparse.ArgumentParser):
    """Judge client options; unset values fall back to the config file, then to
    the client defaults."""
    parser.add_argument(
        '--judge',
        action='store_true',
        help='Also compute the LLM-judge metric columns.')
    parser.add_argument(
        '--judge-endpoint',
        default=None,
        type=str,
        help='Base URL of an OpenAI-compatible API (…/v1).')
    parser.add_argument(
        '--judge-model',
        default=None,
        type=str)
    parser.add_argument(
        '--judge-protocol',
        default='full_mrr',
        choices=['full_mrr', 'simple_mrr'],
        help='Judge prompt for ranked lists; simple_mrr has no anti-gaming rules.')
    parser.add_argument(
        '--judge-temperature',
        default=None,
        type=float)
    parser.add_argument(
        '--max-retries',
        default=None,
        type=int)
    parser.add_argument(
        '--max-in-flight',
        default=None,
        type=int,
        help='Upper bound on concurrent requests to the endpoint.')
    parser.add_argument(
        '--judge-timeout',
        default=None,
        type=float,
        help='Per-request timeout in seconds.')
    parser.add_argument(
        '--judge-memo',
        action='store_true',
        default=None,
        help='Reuse verdicts for byte-identical judge prompts.')
    parser.add_argument(
        '--judge-templates',
        default=None,
        type=str,
        help='Directory with judge prompt templates.')


def add_output_params(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--out',
        default=None,
        type=str,
        help='Output directory; outputs, logs and manifest.json go here.')
    parser.add_argument(
        '--config',
        default=None,
        type=str,
        help='Optional json5 config with "judge", "service" and "reward" sections.')
    parser.add_argument(
        '--seed',
        type=int,
        default=42,
        help='Random seed for retry jitter and sampling.')


def add_service_params(parser: argparse.ArgumentParser):
    parser.add_argument('--host', default=None, type=str)
    parser.add_argument('--port', default=None, type=int)


def add_conversion_params(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--threshold',
        default=0.7,
        type=float,
        help='Minimum conversion confidence to keep a converted question.')
    parser.add_argument(
        '--resume',
        action='store_true',
        help='Skip ids already in the output or skip log of --out.')


def add_generation_params(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--template',
        default='list_cot',
        choices=TEMPLATE_CHOICES,
        help='Prompt template id.')
    parser.add_argument(
        '--preset',
        default=None,
        type=str,
        help='Decoding preset (eval, eval_long, conversion, distill).')
    parser.add_argument(
        '--generator-endpoint',
        default=None,
        type=str)
    parser.add_argument(
        '--generator-model',
        default=None,
        type=str)
    parser.add_argument(
        '--budget',
        default=20,
        type=int,
        help='Attempts per record during rejection sampling.')
    parser.add_argument(
        '--workers',
        default=4,
        type=int)


def load_config(args) -> Config:
    path = getattr(args, 'config', None)
    if not path:
        return Config({})
    try:
        return Config(config_file=path)
    except (OSError, ValueError) as e:
        raise ConfigError(f'cannot read config {path}: {e}') from e


def config_section(config: Config, name):
    section = config.get(name)
    if section is None:
        return {}
    return section.to_dict() if isinstance(section, Config) else dict(section)


def judge_overrides(args):
    return {
        'endpoint': getattr(args, 'judge_endpoint', None),
        'model_name': getattr(args, 'judge_model', None),
        'temperature': getattr(args, 'judge_temperature', None),
        'max_retries': getattr(args, 'max_retries', None),
        'max_in_flight': getattr(args, 'max_in_flight', None),
        'timeout': getattr(args, 'judge_timeout', None),
        'memoize': getattr(args, 'judge_memo', None),
    }


def set_seed(args):
    seed = args.seed
    random.seed(seed)
    np.random.seed(seed)
    return random.Random(seed)
