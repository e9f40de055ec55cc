import json
import threading
import time

import pytest
import requests
from webob import Request

from conftest import FakeClient, list_responses, mcq_record, no_sleep, open_record
from data_utils.reader_dataset import ReaderDataset
from reward_utils.judge import LLMJudge
from reward_utils.parser import RawResponse
from reward_utils.rewards import RewardConfig, RewardKind, score_response
from serve import Scorer, ServiceSettings, create_server, make_app
from utils import __version__
from utils.llm_client import JudgeClientConfig


def dataset():
    return ReaderDataset([open_record('l1'), mcq_record('m1', gold='C')])


def make_scorer(judge=None, **settings):
    return Scorer(ServiceSettings(**settings), dataset(), judge)


def post(app, payload, raw=None):
    body = raw if raw is not None else json.dumps(payload).encode('utf-8')
    request = Request.blank('/v1/score', method='POST', body=body,
                            content_type='application/json')
    return request.get_response(app)


def batch(pairs, **config):
    payload = {'v': 1, 'pairs': pairs}
    if config:
        payload['config'] = config
    return payload


class TestRoutes:

    def test_health(self):
        response = Request.blank('/v1/health').get_response(make_app(make_scorer()))
        assert response.status_code == 200
        assert response.json == {'status': 'ok', 'version': __version__}

    def test_config(self):
        response = Request.blank('/v1/config').get_response(
            make_app(make_scorer(format_reward=True)))
        assert response.json['format_reward'] is True
        assert response.json['records'] == 2
        assert response.json['judge'] is None

    def test_score_needs_post(self):
        response = Request.blank('/v1/score').get_response(make_app(make_scorer()))
        assert response.status_code in (404, 405)


class TestScore:

    def test_batch_with_malformed_item(self):
        app = make_app(make_scorer())
        response = post(app, batch([
            {'record_id': 'l1', 'response_text': '1. x\n2. aspirin'},
            {'response_text': '1. heparin', 'gold': 'heparin', 'format': 'list'},
            {'record_id': 'l1', 'response_text': 5},
        ]))
        assert response.status_code == 200
        body = response.json
        assert [o['index'] for o in body['outcomes']] == [0, 1]
        assert body['outcomes'][0]['total'] == 0.5
        assert body['outcomes'][0]['rank'] == 2
        assert body['outcomes'][1]['total'] == 1.0
        assert body['errors'] == [
            {'index': 2, 'code': 'bad_pair', 'message': 'response_text must be a string'}]

    def test_item_errors(self):
        app = make_app(make_scorer())
        body = post(app, batch([
            {'record_id': 'nope', 'response_text': 'x'},
            {'response_text': 'x', 'gold': 'x', 'format': 'essay'},
            {'record_id': 'm1', 'response_text': 'C'},
            'not a pair',
        ], reward='list-acc')).json
        assert body['outcomes'] == []
        assert [e['code'] for e in body['errors']] == [
            'unknown_record', 'bad_record', 'incompatible_format', 'bad_pair']

    def test_mixed_routes_by_format(self):
        app = make_app(make_scorer())
        body = post(app, batch([
            {'record_id': 'm1', 'response_text': '<think>t</think>C. Hydralazine'},
            {'record_id': 'l1', 'response_text': '<think>t</think>\n1. aspirin'},
        ], reward='mixed', list_reward='list-acc', format_reward=True)).json
        assert [o['total'] for o in body['outcomes']] == [1.0, 1.0]
        assert body['outcomes'][0]['format'] == 1.0

    def test_matches_in_process_scoring(self):
        app = make_app(make_scorer())
        text = '<think>t</think>\n1. a\n2. b\n3. aspirin'
        wire = post(app, batch([{'record_id': 'l1', 'response_text': text}],
                               reward='list-acc', format_reward=True, **{'lambda': 0.2})).json
        expected = score_response(
            RawResponse(text), open_record('l1'),
            RewardConfig(kind=RewardKind.LIST_ACC, use_format_reward=True, length_lambda=0.2))
        assert wire['outcomes'] == [dict(expected.to_dict(), index=0)]

    def test_deterministic(self):
        app = make_app(make_scorer())
        payload = batch([{'record_id': 'l1', 'response_text': '- x\n- aspirin'}] * 5)
        assert post(app, payload).body == post(app, payload).body

    def test_settings_defaults_apply(self):
        app = make_app(make_scorer(default_reward='list-acc'))
        body = post(app, batch([{'record_id': 'l1', 'response_text': '1. x\n2. aspirin'}])).json
        assert body['outcomes'][0]['total'] == 1.0

    @pytest.mark.parametrize('payload,raw', [
        (None, b'{not json'),
        ({'v': 2, 'pairs': []}, None),
        ({'v': 1, 'pairs': {}}, None),
        (batch([], reward='bleu'), None),
        (batch([], reward='mcq', **{'lambda': 0.3}), None),
        (batch([], format_reward='yes'), None),
        ([1, 2], None),
    ])
    def test_bad_batches(self, payload, raw):
        response = post(make_app(make_scorer()), payload, raw=raw)
        assert response.status_code == 400
        assert response.json['v'] == 1
        assert response.json['error']

    def test_judge_batch(self):
        client = FakeClient()
        app = make_app(make_scorer(judge=LLMJudge(client, sleep=no_sleep)))
        pairs = [{'record_id': 'l1', 'response_text': '1. x\n2. Aspirin'}] * 4
        body = post(app, batch(pairs, reward='list-judge-mrr')).json
        assert [o['rank'] for o in body['outcomes']] == [2, 2, 2, 2]
        assert client.calls == 4

    def test_judge_unavailable(self):
        client = FakeClient(reply='unsure', config=JudgeClientConfig(max_retries=0))
        app = make_app(make_scorer(judge=LLMJudge(client, sleep=no_sleep)))
        response = post(app, batch([{'record_id': 'l1', 'response_text': '1. aspirin'}],
                                   reward='list-judge-mrr'))
        assert response.status_code == 503

    def test_judge_kind_without_judge(self):
        response = post(make_app(make_scorer()), batch([], reward='list-judge-mrr'))
        assert response.status_code == 400


class TestSettings:

    def test_from_mapping(self):
        settings = ServiceSettings.from_mapping(
            {'port': 9000, 'format_reward': True, 'other': 1}, host=None, port=9100)
        assert settings.port == 9100
        assert settings.host == '127.0.0.1'
        assert settings.format_reward is True


@pytest.fixture
def live_server():
    scorer = make_scorer()
    server = create_server(scorer, '127.0.0.1', 0, threads=4)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        yield scorer, f'http://127.0.0.1:{server.effective_port}/v1/score'
    finally:
        server.close()


def best_of(repeats, fn):
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return min(timings)


@pytest.mark.slow
def test_service_round_trip_overhead(live_server):
    scorer, url = live_server
    texts = list_responses(1000, seed=1)
    payload = batch([{'record_id': 'l1', 'response_text': t} for t in texts], format_reward=True)
    record = scorer.dataset.get('l1')
    config = RewardConfig(kind=RewardKind.LIST_MRR, use_format_reward=True)
    session = requests.Session()

    def over_the_wire():
        response = session.post(url, json=payload, timeout=30)
        assert response.status_code == 200
        assert len(response.json()['outcomes']) == 1000

    def in_process():
        for text in texts:
            score_response(RawResponse(text), record, config)

    in_process_time = best_of(5, in_process)
    service_time = best_of(5, over_the_wire)
    assert service_time - in_process_time < 2 * in_process_time
