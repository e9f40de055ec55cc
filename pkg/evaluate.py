"""Evaluation metrics over scored responses.

Exact-match Acc/MRR come from the reward outcomes; the LLM variants come from
judge ranks attached afterwards. CP, LL and VLL describe list behaviour.
All stored values are fractions; percentages only appear in `render_table`.
"""
import enum
import logging
from dataclasses import asdict, dataclass, fields, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from data_utils.data_class import AnswerFormat
from reward_utils.parser import normalize
from reward_utils.rewards import RewardOutcome
from utils.errors import CardinalityMismatch, EmptySet, IncompatibleFormat

logger = logging.getLogger()


@dataclass(frozen=True)
class EvalRecord:
    record_id: str
    benchmark: str
    answer_format: AnswerFormat
    outcome: RewardOutcome
    judge_rank: Optional[int] = None
    judged: bool = False
    response_tokens: Optional[int] = None
    list_items: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.answer_format is AnswerFormat.LIST and self.list_items is None:
            object.__setattr__(self, 'list_items', ())


def response_length(raw):
    if raw.token_count is not None:
        return raw.token_count
    return len(raw.text.split())


def make_eval_record(record, raw, outcome, items=None):
    return EvalRecord(
        record_id=record.record_id,
        benchmark=record.benchmark,
        answer_format=record.answer_format,
        outcome=outcome,
        response_tokens=response_length(raw),
        list_items=tuple(items) if items is not None else None,
    )


@dataclass(frozen=True)
class MetricReport:
    benchmark: str
    answer_format: AnswerFormat
    n: int
    acc: float
    mrr: float
    acc_llm: Optional[float] = None
    mrr_llm: Optional[float] = None
    cp: Optional[float] = None
    ll: Optional[float] = None
    vll: Optional[float] = None
    resp_len_mean: Optional[float] = None
    resp_len_std: Optional[float] = None
    len_score_corr: Optional[float] = None

    def to_dict(self):
        d = asdict(self)
        d['answer_format'] = self.answer_format.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in d.items() if k in known}
        values['answer_format'] = AnswerFormat.parse(values['answer_format'])
        return cls(**values)


class MultiValidCategory(str, enum.Enum):
    CORRECT_KEPT = 'CORRECT_KEPT'
    INCORRECT_TO_VALID = 'INCORRECT_TO_VALID'
    STILL_INCORRECT = 'STILL_INCORRECT'


class Coverage(str, enum.Enum):
    ALL_VALID_COVERED = 'ALL_VALID_COVERED'
    PARTIAL = 'PARTIAL'


@dataclass(frozen=True)
class MultiValidOutcome:
    category: MultiValidCategory
    coverage: Optional[Coverage] = None

    def to_dict(self):
        return {'category': self.category.value,
                'coverage': self.coverage.value if self.coverage else None}


def _shared_format(records):
    if not records:
        raise EmptySet('no records to evaluate')
    formats = {r.answer_format for r in records}
    if len(formats) > 1:
        raise IncompatibleFormat(
            f'records mix answer formats: {sorted(f.value for f in formats)}')
    return formats.pop()


def _require_judged(records):
    missing = [r.record_id for r in records if not r.judged]
    if missing:
        raise ValueError(f'{len(missing)} records have no judge verdict, e.g. {missing[0]}')


def accuracy(records, use_judge=False):
    records = list(records)
    _shared_format(records)
    if use_judge:
        _require_judged(records)
        hits = [r.judge_rank is not None for r in records]
    else:
        hits = [r.outcome.correctness > 0 for r in records]
    return float(np.mean(hits))


def mrr(records, use_judge=False):
    records = list(records)
    if _shared_format(records) is not AnswerFormat.LIST:
        raise IncompatibleFormat('mrr is defined over list answers')
    if use_judge:
        _require_judged(records)
        ranks = [r.judge_rank for r in records]
    else:
        ranks = [r.outcome.rank for r in records]
    return float(np.mean([1.0 / rank if rank is not None else 0.0 for rank in ranks]))


@dataclass(frozen=True)
class ListStats:
    cp: Optional[float]
    ll: float
    vll: Optional[float]


def list_stats(records):
    records = list(records)
    if _shared_format(records) is not AnswerFormat.LIST:
        raise IncompatibleFormat('list statistics need list answers')
    lengths = np.array([len(r.list_items) for r in records], dtype=np.float64)
    nonempty = lengths[lengths > 0]
    ranks = [r.outcome.rank for r in records if r.outcome.rank is not None]
    return ListStats(
        cp=float(np.mean(ranks)) if ranks else None,
        ll=float(lengths.mean()),
        vll=float(nonempty.mean()) if nonempty.size else None,
    )


def attach_judge(records, verdicts):
    records = list(records)
    verdicts = list(verdicts)
    if len(records) != len(verdicts):
        raise CardinalityMismatch(
            f'{len(records)} records but {len(verdicts)} judge verdicts')
    attached = []
    for record, verdict in zip(records, verdicts):
        if not verdict.parse_ok:
            raise ValueError(f'{record.record_id}: unparsed judge verdict')
        attached.append(replace(record, judge_rank=verdict.rank, judged=True))
    return attached


def length_score_correlation(records):
    pairs = [(r.response_tokens, r.outcome.correctness)
             for r in records if r.response_tokens is not None]
    if len(pairs) < 2:
        return None
    lengths, scores = np.array(pairs, dtype=np.float64).T
    if lengths.std() == 0 or scores.std() == 0:
        return None
    return float(np.corrcoef(lengths, scores)[0, 1])


def build_report(records, benchmark=None, with_judge=False):
    records = list(records)
    fmt = _shared_format(records)
    if benchmark is None:
        benchmark = records[0].benchmark
    acc = accuracy(records)
    acc_llm = accuracy(records, use_judge=True) if with_judge else None
    if fmt is AnswerFormat.LIST:
        mrr_value = mrr(records)
        mrr_llm = mrr(records, use_judge=True) if with_judge else None
        stats = list_stats(records)
    else:
        # a single answer is a one-item list
        mrr_value, mrr_llm = acc, acc_llm
        stats = ListStats(cp=None, ll=None, vll=None)
    lengths = np.array([r.response_tokens for r in records if r.response_tokens is not None],
                       dtype=np.float64)
    return MetricReport(
        benchmark=benchmark,
        answer_format=fmt,
        n=len(records),
        acc=acc,
        mrr=mrr_value,
        acc_llm=acc_llm,
        mrr_llm=mrr_llm,
        cp=stats.cp,
        ll=stats.ll,
        vll=stats.vll,
        resp_len_mean=float(lengths.mean()) if lengths.size else None,
        resp_len_std=float(lengths.std()) if lengths.size else None,
        len_score_corr=length_score_correlation(records),
    )


def reports_by_benchmark(records, with_judge=False):
    grouped = {}
    for record in records:
        grouped.setdefault(record.benchmark, []).append(record)
    return {name: build_report(grouped[name], name, with_judge) for name in sorted(grouped)}


_AVERAGED = ('acc', 'mrr', 'acc_llm', 'mrr_llm', 'cp', 'll', 'vll',
             'resp_len_mean', 'resp_len_std', 'len_score_corr')


def _macro(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    # exact rational mean, so identical inputs average to themselves
    return float(sum(Fraction(v) for v in values) / len(values))


def aggregate(benchmark_reports, name='average'):
    reports = list(benchmark_reports.values())
    if not reports:
        raise EmptySet('no benchmark reports to aggregate')
    formats = {r.answer_format for r in reports}
    if len(formats) > 1:
        raise IncompatibleFormat('cannot aggregate reports over different answer formats')
    averaged = {key: _macro([getattr(r, key) for r in reports]) for key in _AVERAGED}
    return MetricReport(
        benchmark=name,
        answer_format=reports[0].answer_format,
        n=sum(r.n for r in reports),
        **averaged,
    )


def multi_valid_reclassify(record, valid_answers):
    valid = {normalize(v) for v in valid_answers}
    if not valid:
        raise ValueError(f'{record.record_id}: valid_answers must not be empty')
    items = {normalize(item) for item in (record.list_items or ())}
    hit = valid & items
    if record.outcome.correctness > 0:
        category = MultiValidCategory.CORRECT_KEPT
    elif hit:
        category = MultiValidCategory.INCORRECT_TO_VALID
    else:
        return MultiValidOutcome(MultiValidCategory.STILL_INCORRECT)
    coverage = Coverage.ALL_VALID_COVERED if hit == valid else Coverage.PARTIAL
    return MultiValidOutcome(category, coverage)


def tally_multi_valid(outcomes, valid_sizes):
    outcomes = list(outcomes)
    valid_sizes = list(valid_sizes)
    if len(outcomes) != len(valid_sizes):
        raise CardinalityMismatch(f'{len(outcomes)} outcomes but {len(valid_sizes)} valid sets')
    categories = {c.value: 0 for c in MultiValidCategory}
    coverage = {c.value: 0 for c in Coverage}
    kept_coverage = {c.value: 0 for c in Coverage}
    multi_valid_all_covered = 0
    for outcome, size in zip(outcomes, valid_sizes):
        categories[outcome.category.value] += 1
        if outcome.coverage is None:
            continue
        coverage[outcome.coverage.value] += 1
        if outcome.category is MultiValidCategory.CORRECT_KEPT:
            kept_coverage[outcome.coverage.value] += 1
        if outcome.coverage is Coverage.ALL_VALID_COVERED and size > 1:
            multi_valid_all_covered += 1
    return {
        'n': len(outcomes),
        'categories': categories,
        'coverage': coverage,
        'correct_kept_coverage': kept_coverage,
        'multi_valid_all_covered': multi_valid_all_covered,
    }


_HUNDREDTH = Decimal('0.01')


def _round_half_up(value, scale=1):
    return str((Decimal(repr(float(value))) * scale).quantize(_HUNDREDTH, rounding=ROUND_HALF_UP))


def format_percent(value):
    return '-' if value is None else _round_half_up(value, 100)


def format_raw(value):
    return '-' if value is None else _round_half_up(value)


def render_table(reports, with_judge=False):
    header = ['Benchmark', 'N', 'Acc', 'MRR']
    if with_judge:
        header += ['Acc^LLM', 'MRR^LLM']
    header += ['CP', 'LL', 'VLL']
    rows = [header]
    for report in reports:
        row = [report.benchmark, str(report.n),
               format_percent(report.acc), format_percent(report.mrr)]
        if with_judge:
            row += [format_percent(report.acc_llm), format_percent(report.mrr_llm)]
        row += [format_raw(report.cp), format_raw(report.ll), format_raw(report.vll)]
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append('  '.join(cells).rstrip())
    return '\n'.join(lines) + '\n'
