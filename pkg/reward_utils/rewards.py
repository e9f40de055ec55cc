"""Verifiable rewards for choice, short-text and ranked-list answers.

Correctness rewards:
    mcq        1[pred == gold]
    qa         1[normalize(gold) is a substring of normalize(pred)]
    list-acc   max over items of qa
    list-mrr   list-acc / r, r the 1-indexed position of the first correct item
    list-judge-mrr  as list-mrr, with item/gold equivalence decided by an LLM judge

The optional length penalty max(0, 1 - lambda * (L - 1)) scales the list
correctness before it is averaged with the optional format reward.
"""
import enum
import functools
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from data_utils.data_class import AnswerFormat, QuestionRecord
from reward_utils import parser
from reward_utils.parser import RawResponse, ThinkStructure
from utils.errors import ConfigError, IncompatibleFormat

logger = logging.getLogger()


class RewardKind(str, enum.Enum):
    MCQ = 'mcq'
    QA = 'qa'
    LIST_ACC = 'list-acc'
    LIST_MRR = 'list-mrr'
    LIST_JUDGE_MRR = 'list-judge-mrr'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        value = str(value).strip().lower().replace('_', '-')
        return cls(value)

    @property
    def is_list(self):
        return self in (RewardKind.LIST_ACC, RewardKind.LIST_MRR, RewardKind.LIST_JUDGE_MRR)


_PENALIZABLE = (RewardKind.LIST_ACC, RewardKind.LIST_MRR)


@dataclass(frozen=True)
class RewardConfig:
    kind: RewardKind
    use_format_reward: bool = False
    length_lambda: Optional[float] = None
    judge: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'kind', RewardKind.parse(self.kind))
        if self.length_lambda is not None:
            if self.kind not in _PENALIZABLE:
                raise ConfigError(
                    f'length penalty only applies to list-acc and list-mrr, not {self.kind.value}')
            if not 0.0 <= self.length_lambda <= 1.0:
                raise ConfigError(f'lambda must be in [0, 1], got {self.length_lambda}')
        if self.kind is RewardKind.LIST_JUDGE_MRR and self.judge is None:
            raise ConfigError('list-judge-mrr needs a judge binding')

    def snapshot(self):
        return {
            'kind': self.kind.value,
            'use_format_reward': self.use_format_reward,
            'lambda': self.length_lambda,
            'judge': None if self.judge is None else self.judge.snapshot(),
        }


@dataclass(frozen=True)
class RewardOutcome:
    correctness: float
    total: float
    format: Optional[float] = None
    rank: Optional[int] = None
    list_length: Optional[int] = None
    penalty: Optional[float] = None

    def to_dict(self):
        return {
            'correctness': self.correctness,
            'format': self.format,
            'total': self.total,
            'rank': self.rank,
            'list_length': self.list_length,
            'penalty': self.penalty,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            correctness=float(d['correctness']),
            total=float(d['total']),
            format=d.get('format'),
            rank=d.get('rank'),
            list_length=d.get('list_length'),
            penalty=d.get('penalty'),
        )


def reward_mcq(pred: Optional[str], gold: str) -> int:
    if pred is None:
        return 0
    return int(pred.strip().upper() == gold.strip().upper())


def _matches(normalized_gold, item):
    return normalized_gold in parser.normalize(item)


def reward_qa(pred: str, gold: str) -> int:
    return int(_matches(parser.normalize(gold), pred))


def first_match_rank(items: Sequence[str], gold: str) -> Optional[int]:
    normalized_gold = parser.normalize(gold)
    for i, item in enumerate(items, 1):
        if _matches(normalized_gold, item):
            return i
    return None


def reward_list(items: Sequence[str], gold: str) -> int:
    return int(first_match_rank(items, gold) is not None)


def reward_mrr(items: Sequence[str], gold: str) -> Tuple[float, Optional[int]]:
    rank = first_match_rank(items, gold)
    if rank is None:
        return 0.0, None
    return 1.0 / rank, rank


@functools.lru_cache(maxsize=4096)
def _penalty(extra, length_lambda):
    # decimal reading of the float, so 0.3 behaves as 3/10
    lam = Fraction(repr(length_lambda))
    return float(max(Fraction(0), 1 - lam * extra))


def length_penalty(list_length: int, length_lambda: float) -> float:
    if not 0.0 <= length_lambda <= 1.0:
        raise ValueError(f'lambda must be in [0, 1], got {length_lambda}')
    return _penalty(max(list_length, 1) - 1, float(length_lambda))


def reward_format(structure: ThinkStructure) -> int:
    return int(structure.well_formed)


def compose(correctness: float, penalty: Optional[float] = None,
            format_reward: Optional[float] = None) -> float:
    effective = correctness * (1.0 if penalty is None else penalty)
    if format_reward is None:
        return effective
    return (effective + format_reward) / 2.0


def _check_compatible(kind, record):
    fmt = record.answer_format
    if kind is RewardKind.MCQ:
        if fmt is not AnswerFormat.MCQ or not record.options:
            raise IncompatibleFormat(
                f'{record.record_id}: mcq reward needs an mcq record with options')
    elif fmt is AnswerFormat.MCQ:
        raise IncompatibleFormat(
            f'{record.record_id}: {kind.value} reward needs an open-ended record')
    if not record.gold or not record.gold.strip():
        raise IncompatibleFormat(f'{record.record_id}: record has no gold answer')


def score_response(raw: RawResponse, record: QuestionRecord, config: RewardConfig) -> RewardOutcome:
    kind = config.kind
    _check_compatible(kind, record)

    structure, body = parser.answer_body(raw)
    fmt = float(reward_format(structure)) if config.use_format_reward else None
    rank = None
    list_length = None
    penalty = None

    if kind is RewardKind.MCQ:
        pred = parser.extract_choice(body, record.allowed_labels)
        correctness = float(reward_mcq(pred, record.gold))
    elif kind is RewardKind.QA:
        boxed = parser.extract_boxed(body)
        correctness = float(reward_qa(boxed if boxed is not None else body, record.gold))
    else:
        items = parser.parse_ranked_list(body)
        list_length = len(items)
        if kind is RewardKind.LIST_JUDGE_MRR:
            rank = _judge_rank(config.judge, record, items)
            correctness = 1.0 / rank if rank is not None else 0.0
        else:
            rank = first_match_rank(items, record.gold)
            if rank is None:
                correctness = 0.0
            elif kind is RewardKind.LIST_MRR:
                correctness = 1.0 / rank
            else:
                correctness = 1.0
        if config.length_lambda is not None:
            penalty = length_penalty(list_length, config.length_lambda)

    return RewardOutcome(
        correctness=correctness,
        format=fmt,
        total=compose(correctness, penalty, fmt),
        rank=rank,
        list_length=list_length,
        penalty=penalty,
    )


def _judge_rank(judge, record, items):
    from reward_utils.judge import JudgeRequest

    if not items:
        return None
    request = JudgeRequest(
        question=record.question, gold=record.gold, items=tuple(items),
        protocol=judge.default_protocol)
    return judge.verdict(request).rank


_FORMAT_KIND = {
    AnswerFormat.MCQ: RewardKind.MCQ,
    AnswerFormat.QA: RewardKind.QA,
}


def config_for_record(record: QuestionRecord, list_config: RewardConfig,
                      use_format_reward: Optional[bool] = None) -> RewardConfig:
    """Reward routing for mixed-format batches: choice and short-text records
    get their own reward, list records get `list_config`."""
    if use_format_reward is None:
        use_format_reward = list_config.use_format_reward
    kind = _FORMAT_KIND.get(record.answer_format)
    if kind is None:
        if list_config.use_format_reward == use_format_reward:
            return list_config
        return replace(list_config, use_format_reward=use_format_reward)
    return RewardConfig(kind=kind, use_format_reward=use_format_reward)


def summarize_outcomes(outcomes: Iterable[RewardOutcome]):
    outcomes = list(outcomes)
    if not outcomes:
        return {'n': 0, 'mean_total': None, 'mean_correctness': None,
                'accuracy': None, 'format_pass_rate': None}
    totals = np.array([o.total for o in outcomes], dtype=np.float64)
    correctness = np.array([o.correctness for o in outcomes], dtype=np.float64)
    formats = [o.format for o in outcomes if o.format is not None]
    return {
        'n': len(outcomes),
        'mean_total': float(totals.mean()),
        'mean_correctness': float(correctness.mean()),
        'accuracy': float((correctness > 0).mean()),
        'format_pass_rate': float(np.mean(formats)) if formats else None,
    }


def sweep_length_penalty(pairs, config: RewardConfig, lambdas: Sequence[float]):
    """Re-scores (raw, record) pairs once per lambda.

    lambda = 0 leaves every list unpenalized, so its row doubles as the
    baseline of the sweep.
    """
    pairs = list(pairs)
    results = {}
    for lam in lambdas:
        swept = replace(config, length_lambda=float(lam))
        outcomes = [score_response(raw, record, swept) for raw, record in pairs]
        summary = summarize_outcomes(outcomes)
        lengths = [o.list_length for o in outcomes if o.list_length is not None]
        summary['mean_list_length'] = float(np.mean(lengths)) if lengths else None
        summary['zero_penalty_rate'] = (
            float(np.mean([o.penalty == 0.0 for o in outcomes])) if outcomes else None)
        results[repr(float(lam))] = summary
        logger.info(f'lambda={lam}: mean total = {summary["mean_total"]}')
    return results
