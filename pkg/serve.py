"""Batch scoring service for RL trainers.

    POST /v1/score   {"v": 1, "config": {...}, "pairs": [...]}
    GET  /v1/health
    GET  /v1/config

Each pair is {"response_text", "record_id"} against the dataset loaded at
start-up, or {"response_text", "gold", "format", "options"?, "question"?}
inline. Bad items are reported per index; the rest of the batch is scored.
"""
import json
import logging
import signal
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import waitress
from pyramid.config import Configurator
from webob import Response

from data_utils.reader_dataset import parse_record
from reward_utils.parser import RawResponse
from reward_utils.rewards import RewardConfig, RewardKind, config_for_record, score_response
from utils import __version__
from utils.errors import (ConfigError, IncompatibleFormat, JudgeUnavailable, SchemaError)

logger = logging.getLogger()

WIRE_VERSION = 1


@dataclass(frozen=True)
class ServiceSettings:
    host: str = '127.0.0.1'
    port: int = 8080
    threads: int = 8
    default_reward: str = 'list-mrr'
    list_reward: str = 'list-mrr'
    format_reward: bool = False
    length_lambda: Optional[float] = None

    @classmethod
    def from_mapping(cls, values=None, **overrides):
        merged = dict(values or {})
        merged.update({k: v for k, v in overrides.items() if v is not None})
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in merged.items() if k in known})


class BadBatch(ValueError):
    pass


def _json_response(payload, status=200):
    body = json.dumps(payload, ensure_ascii=False, sort_keys=True).encode('utf-8')
    return Response(body=body, status=status, content_type='application/json', charset='utf-8')


def _error(status, message):
    return _json_response({'v': WIRE_VERSION, 'error': message}, status=status)


class Scorer(object):
    """Turns a decoded batch into outcomes; shared by all request threads."""

    def __init__(self, settings: ServiceSettings, dataset=None, judge=None):
        self.settings = settings
        self.dataset = dataset
        self.judge = judge

    def reward_config(self, wire_config):
        if wire_config is None:
            wire_config = {}
        if not isinstance(wire_config, dict):
            raise BadBatch('"config" must be an object')
        reward = wire_config.get('reward', self.settings.default_reward)
        list_reward = wire_config.get('list_reward', self.settings.list_reward)
        use_format = wire_config.get('format_reward', self.settings.format_reward)
        length_lambda = wire_config.get('lambda', self.settings.length_lambda)
        if not isinstance(use_format, bool):
            raise BadBatch('"format_reward" must be a boolean')
        if length_lambda is not None and (isinstance(length_lambda, bool)
                                          or not isinstance(length_lambda, (int, float))):
            raise BadBatch('"lambda" must be a number')
        mixed = reward == 'mixed'
        kind = list_reward if mixed else reward
        try:
            kind = RewardKind.parse(kind)
        except ValueError:
            raise BadBatch(f'unknown reward {kind!r}') from None
        try:
            config = RewardConfig(
                kind=kind, use_format_reward=use_format,
                length_lambda=None if length_lambda is None else float(length_lambda),
                judge=self.judge if kind is RewardKind.LIST_JUDGE_MRR else None)
        except ConfigError as e:
            raise BadBatch(str(e)) from None
        return config, mixed

    def record_for(self, index, pair):
        if 'record_id' in pair:
            record = self.dataset.get(str(pair['record_id'])) if self.dataset else None
            if record is None:
                raise LookupError(f'unknown record id {pair["record_id"]!r}')
            return record
        inline = {
            'id': f'inline-{index}',
            'benchmark': 'inline',
            'question': pair.get('question') or '(inline)',
            'gold': pair.get('gold'),
            'format': pair.get('format'),
            'options': pair.get('options'),
        }
        return parse_record(inline, line=None)

    def score_pair(self, index, pair, config, mixed):
        if not isinstance(pair, dict):
            return {'index': index, 'code': 'bad_pair', 'message': 'pair must be an object'}
        text = pair.get('response_text')
        if not isinstance(text, str):
            return {'index': index, 'code': 'bad_pair', 'message': 'response_text must be a string'}
        try:
            record = self.record_for(index, pair)
            item_config = config_for_record(record, config) if mixed else config
            outcome = score_response(RawResponse(text), record, item_config)
        except LookupError as e:
            return {'index': index, 'code': 'unknown_record', 'message': str(e)}
        except SchemaError as e:
            return {'index': index, 'code': 'bad_record', 'message': str(e)}
        except IncompatibleFormat as e:
            return {'index': index, 'code': 'incompatible_format', 'message': str(e)}
        return dict(outcome.to_dict(), index=index)

    def score_batch(self, batch):
        if not isinstance(batch, dict):
            raise BadBatch('request body must be a JSON object')
        if batch.get('v') != WIRE_VERSION:
            raise BadBatch(f'unsupported wire version {batch.get("v")!r}')
        pairs = batch.get('pairs')
        if not isinstance(pairs, list):
            raise BadBatch('"pairs" must be a list')
        config, mixed = self.reward_config(batch.get('config'))

        uses_judge = config.kind is RewardKind.LIST_JUDGE_MRR
        if uses_judge and len(pairs) > 1:
            workers = self.judge.config.max_in_flight
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(
                    lambda ip: self.score_pair(ip[0], ip[1], config, mixed), enumerate(pairs)))
        else:
            results = [self.score_pair(i, pair, config, mixed) for i, pair in enumerate(pairs)]

        outcomes = [r for r in results if 'code' not in r]
        errors = [r for r in results if 'code' in r]
        return {'v': WIRE_VERSION, 'outcomes': outcomes, 'errors': errors}

    def snapshot(self):
        return {
            'v': WIRE_VERSION,
            'version': __version__,
            'default_reward': self.settings.default_reward,
            'list_reward': self.settings.list_reward,
            'format_reward': self.settings.format_reward,
            'lambda': self.settings.length_lambda,
            'judge': self.judge.snapshot() if self.judge is not None else None,
            'records': len(self.dataset) if self.dataset is not None else 0,
        }


def score_view(request):
    scorer = request.registry.settings['scorer']
    try:
        batch = json.loads(request.body.decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as e:
        return _error(400, f'invalid JSON body: {e}')
    try:
        return _json_response(scorer.score_batch(batch))
    except BadBatch as e:
        return _error(400, str(e))
    except JudgeUnavailable as e:
        logger.error(f'judge unavailable: {e}')
        return _error(503, 'judge unavailable')


def health_view(request):
    return _json_response({'status': 'ok', 'version': __version__})


def config_view(request):
    return _json_response(request.registry.settings['scorer'].snapshot())


def make_app(scorer: Scorer):
    with Configurator(settings={'scorer': scorer}) as config:
        config.add_route('score', '/v1/score', request_method='POST')
        config.add_route('health', '/v1/health', request_method='GET')
        config.add_route('config', '/v1/config', request_method='GET')
        config.add_view(score_view, route_name='score')
        config.add_view(health_view, route_name='health')
        config.add_view(config_view, route_name='config')
        return config.make_wsgi_app()


def create_server(scorer: Scorer, host, port, threads=None):
    threads = threads or scorer.settings.threads
    return waitress.create_server(make_app(scorer), host=host, port=port, threads=threads,
                                  ident='listreward')


def run(scorer: Scorer, host, port):
    """Serves until SIGINT/SIGTERM; running batches get waitress' shutdown grace period."""
    server = create_server(scorer, host, port)
    signal.signal(signal.SIGTERM, signal.default_int_handler)
    logger.info(f'Serving on http://{host}:{server.effective_port} '
                f'with {scorer.settings.threads} threads')
    try:
        server.run()
    except KeyboardInterrupt:
        logger.info('Interrupted, draining in-flight batches')
    finally:
        server.close()
        logger.info('Server stopped')
