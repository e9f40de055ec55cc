import random

import pytest

from conftest import FakeClient, no_sleep, open_record, planted_multi_valid_fixture
from data_utils.data_class import AnswerFormat
from data_utils.reader_dataset import parse_record
from evaluate import (Coverage, EvalRecord, MetricReport, MultiValidCategory, accuracy,
                      aggregate, attach_judge, build_report, format_percent, format_raw,
                      length_score_correlation, list_stats, make_eval_record, mrr,
                      multi_valid_reclassify, render_table, reports_by_benchmark,
                      response_length, tally_multi_valid)
from reward_utils.judge import JudgeRequest, JudgeVerdict, LLMJudge, judge_many
from reward_utils.parser import RawResponse, answer_body, parse_ranked_list
from reward_utils.rewards import (RewardConfig, RewardKind, RewardOutcome, first_match_rank,
                                  score_response)
from utils.errors import CardinalityMismatch, EmptySet, IncompatibleFormat

VOCAB = ['aspirin', 'heparin', 'warfarin', 'statin']


def list_record(rid, items, gold='aspirin', benchmark='b1', tokens=None):
    rank = first_match_rank(items, gold)
    correctness = 1.0 / rank if rank is not None else 0.0
    outcome = RewardOutcome(correctness=correctness, total=correctness, rank=rank,
                            list_length=len(items))
    return EvalRecord(rid, benchmark, AnswerFormat.LIST, outcome,
                      response_tokens=tokens, list_items=tuple(items))


def single_record(rid, correct, fmt=AnswerFormat.QA, benchmark='b1', tokens=None):
    value = 1.0 if correct else 0.0
    return EvalRecord(rid, benchmark, fmt, RewardOutcome(value, value), response_tokens=tokens)


def exact_verdict(record):
    rank = record.outcome.rank
    return JudgeVerdict(rank=rank, equivalent=rank is not None, raw_reply='', parse_ok=True)


class TestMetrics:

    def test_mrr_example(self):
        records = [list_record('a', ['aspirin']), list_record('b', ['x', 'aspirin']),
                   list_record('c', ['x'])]
        assert mrr(records) == 0.5
        assert accuracy(records) == pytest.approx(2 / 3)

    def test_list_stats_example(self):
        records = [list_record('a', []), list_record('b', ['x', 'aspirin']),
                   list_record('c', ['x', 'aspirin', 'y', 'z'])]
        stats = list_stats(records)
        assert stats.ll == 2.0
        assert stats.vll == 3.0
        assert stats.cp == 2.0

    def test_no_correct_lists(self):
        stats = list_stats([list_record('a', []), list_record('b', ['x'])])
        assert stats.cp is None
        assert list_stats([list_record('a', [])]).vll is None

    def test_empty_set(self):
        with pytest.raises(EmptySet):
            accuracy([])

    def test_mixed_formats(self):
        with pytest.raises(IncompatibleFormat):
            accuracy([list_record('a', ['x']), single_record('b', True)])

    def test_mrr_needs_lists(self):
        with pytest.raises(IncompatibleFormat):
            mrr([single_record('a', True)])

    def test_judge_mode_needs_verdicts(self):
        with pytest.raises(ValueError):
            accuracy([list_record('a', ['x'])], use_judge=True)

    def test_randomized_identities(self):
        rng = random.Random(11)
        for _ in range(200):
            records = [
                list_record(str(i), [rng.choice(VOCAB) for _ in range(rng.randint(0, 6))])
                for i in range(rng.randint(1, 30))
            ]
            acc, mrr_value = accuracy(records), mrr(records)
            hits = [r for r in records if r.outcome.rank is not None]
            assert acc == pytest.approx(len(hits) / len(records))
            assert mrr_value <= acc + 1e-12
            stats = list_stats(records)
            if stats.vll is not None:
                assert stats.vll >= stats.ll
            if hits:
                assert 1.0 <= stats.cp <= max(len(r.list_items) for r in hits)
            judged = attach_judge(records, [exact_verdict(r) for r in records])
            assert accuracy(judged, use_judge=True) == acc
            assert mrr(judged, use_judge=True) == mrr_value


class TestJudgeAttachment:

    def test_cardinality(self):
        with pytest.raises(CardinalityMismatch):
            attach_judge([list_record('a', ['x'])], [])

    def test_unparsed_verdict(self):
        verdict = JudgeVerdict(rank=None, equivalent=False, raw_reply='?', parse_ok=False)
        with pytest.raises(ValueError):
            attach_judge([list_record('a', ['x'])], [verdict])

    def test_exact_match_judge_reproduces_exact_metrics(self):
        rng = random.Random(5)
        config = RewardConfig(kind=RewardKind.LIST_MRR)
        records = []
        for i in range(500):
            items = [rng.choice(VOCAB + ['Aspirin 81 mg']) for _ in range(rng.randint(0, 5))]
            raw = RawResponse('<think>t</think>\n' + '\n'.join(
                f'{k}. {item}' for k, item in enumerate(items, 1)))
            record = open_record(f'r{i}')
            outcome = score_response(raw, record, config)
            parsed = parse_ranked_list(answer_body(raw)[1])
            records.append((record, make_eval_record(record, raw, outcome, parsed)))

        judge = LLMJudge(FakeClient(), sleep=no_sleep)
        pending = [(i, JudgeRequest(rec.question, rec.gold, ev.list_items))
                   for i, (rec, ev) in enumerate(records) if ev.list_items]
        verdicts = [JudgeVerdict(None, False, '', True)] * len(records)
        for (i, _), verdict in zip(pending, judge_many([req for _, req in pending], judge,
                                                       workers=8)):
            verdicts[i] = verdict

        report = build_report(attach_judge([ev for _, ev in records], verdicts), with_judge=True)
        assert report.acc_llm == report.acc
        assert report.mrr_llm == report.mrr
        assert report.n == 500


class TestReports:

    def test_single_answer_report(self):
        report = build_report([single_record('a', True), single_record('b', False)])
        assert report.acc == 0.5
        assert report.mrr == report.acc
        assert report.cp is None and report.ll is None and report.vll is None

    def test_response_length(self):
        assert response_length(RawResponse('a b  c')) == 3
        assert response_length(RawResponse('a b', token_count=40)) == 40

    def test_length_statistics(self):
        records = [single_record(str(i), i >= 2, tokens=i + 1) for i in range(4)]
        report = build_report(records)
        assert report.resp_len_mean == 2.5
        assert report.len_score_corr > 0
        assert length_score_correlation(records[:1]) is None

    def test_by_benchmark_and_macro(self):
        records = ([single_record(f'a{i}', i < 1, benchmark='alpha') for i in range(5)]
                   + [single_record(f'b{i}', i < 2, benchmark='beta') for i in range(5)])
        reports = reports_by_benchmark(records)
        assert list(reports) == ['alpha', 'beta']
        assert reports['alpha'].acc == pytest.approx(0.2)
        average = aggregate(reports)
        assert average.benchmark == 'average'
        assert average.acc == pytest.approx(0.3)
        assert average.n == 10

    def test_macro_of_identical_reports_is_exact(self):
        report = build_report([list_record(str(i), ['x'] * (i % 3) + ['aspirin'])
                               for i in range(7)])
        average = aggregate({'a': report, 'b': report, 'c': report})
        assert average.mrr == report.mrr
        assert average.cp == report.cp

    def test_aggregate_needs_one_format(self):
        reports = {'a': build_report([single_record('a', True)]),
                   'b': build_report([list_record('b', ['aspirin'])])}
        with pytest.raises(IncompatibleFormat):
            aggregate(reports)
        with pytest.raises(EmptySet):
            aggregate({})

    def test_report_round_trip(self):
        report = build_report([list_record('a', ['x', 'aspirin'], tokens=12)])
        assert MetricReport.from_dict(report.to_dict()) == report


class TestMultiValid:

    def test_categories(self):
        kept = multi_valid_reclassify(list_record('a', ['aspirin', 'heparin']),
                                      ['aspirin', 'heparin'])
        assert kept.category is MultiValidCategory.CORRECT_KEPT
        assert kept.coverage is Coverage.ALL_VALID_COVERED
        rescued = multi_valid_reclassify(list_record('b', ['Heparin.']), ['aspirin', 'heparin'])
        assert rescued.category is MultiValidCategory.INCORRECT_TO_VALID
        assert rescued.coverage is Coverage.PARTIAL
        wrong = multi_valid_reclassify(list_record('c', ['x']), ['aspirin', 'heparin'])
        assert wrong.category is MultiValidCategory.STILL_INCORRECT
        assert wrong.coverage is None

    def test_empty_valid_set(self):
        with pytest.raises(ValueError):
            multi_valid_reclassify(list_record('a', ['x']), [])

    def test_planted_tallies(self):
        dataset, responses = planted_multi_valid_fixture()
        config = RewardConfig(kind=RewardKind.LIST_ACC)
        outcomes, sizes = [], []
        for line, (obj, resp) in enumerate(zip(dataset, responses), 1):
            record = parse_record(obj, line)
            raw = RawResponse(resp['response'])
            items = parse_ranked_list(answer_body(raw)[1])
            ev = make_eval_record(record, raw, score_response(raw, record, config), items)
            outcomes.append(multi_valid_reclassify(ev, record.valid_answers))
            sizes.append(len(record.valid_answers))

        tally = tally_multi_valid(outcomes, sizes)
        assert tally['n'] == 1149
        assert tally['categories'] == {'CORRECT_KEPT': 233, 'INCORRECT_TO_VALID': 43,
                                       'STILL_INCORRECT': 873}
        assert tally['coverage'] == {'ALL_VALID_COVERED': 133, 'PARTIAL': 143}
        assert tally['correct_kept_coverage'] == {'ALL_VALID_COVERED': 133, 'PARTIAL': 100}
        assert tally['multi_valid_all_covered'] == 55

    def test_tally_cardinality(self):
        with pytest.raises(CardinalityMismatch):
            tally_multi_valid([], [1])


class TestTable:

    def test_rounding(self):
        assert format_percent(2 / 3) == '66.67'
        assert format_percent(0.5) == '50.00'
        assert format_raw(2.005) == '2.01'
        assert format_raw(None) == '-'

    def test_columns(self):
        report = build_report(attach_judge(
            [list_record('a', ['x', 'aspirin'])], [exact_verdict(list_record('a', ['x', 'aspirin']))]),
            with_judge=True)
        table = render_table([report], with_judge=True)
        header, row = table.splitlines()
        assert header.split() == ['Benchmark', 'N', 'Acc', 'MRR', 'Acc^LLM', 'MRR^LLM',
                                  'CP', 'LL', 'VLL']
        assert row.split() == ['b1', '1', '100.00', '50.00', '100.00', '50.00',
                               '2.00', '2.00', '2.00']
        assert 'Acc^LLM' not in render_table([report])
