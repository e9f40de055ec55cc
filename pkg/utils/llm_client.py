"""OpenAI-compatible chat-completions client shared by the judge, the MCQ
conversion pipeline and the distillation generator.

Every caller goes through `ChatCompletionsClient.complete`, which holds a
slot of the in-flight limiter for the duration of the HTTP call. Retries live
one level up in `call_with_retries` so that callers can also retry on replies
they fail to parse.
"""
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, List, Optional

import requests

from utils.errors import ConfigError, JudgeUnavailable, ReplyParseError, TransportError

logger = logging.getLogger()

API_KEY_ENV = 'LISTREWARD_JUDGE_API_KEY'
DEFAULT_ENDPOINT = 'https://api.openai.com/v1'


@dataclass(frozen=True)
class JudgeClientConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model_name: str = 'gpt-4.1-mini'
    temperature: float = 0.0
    max_retries: int = 3
    max_in_flight: int = 8
    timeout: float = 60.0
    max_tokens: Optional[int] = None
    memoize: bool = False
    backoff_base: float = 0.5
    backoff_max: float = 8.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f'temperature must be >= 0, got {self.temperature}')
        if self.max_in_flight < 1:
            raise ConfigError(f'max_in_flight must be >= 1, got {self.max_in_flight}')
        if self.max_retries < 0:
            raise ConfigError(f'max_retries must be >= 0, got {self.max_retries}')
        if self.timeout <= 0:
            raise ConfigError(f'timeout must be > 0, got {self.timeout}')

    @classmethod
    def from_mapping(cls, values=None, **overrides):
        known = {f.name for f in fields(cls)}
        merged = {}
        if values is not None:
            items = values.items() if hasattr(values, 'items') else vars(values).items()
            for key, value in items:
                if key in known:
                    merged[key] = value
        for key, value in overrides.items():
            if key in known and value is not None:
                merged[key] = value
        return cls(**merged)

    def snapshot(self):
        return asdict(self)


def user_messages(prompt: str) -> List[Dict[str, str]]:
    return [{'role': 'user', 'content': prompt}]


class ChatCompletionsClient(object):

    def __init__(self, config: JudgeClientConfig, api_key: Optional[str] = None,
                 session=None, on_request: Optional[Callable[[int], None]] = None):
        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, '')
        self.session = session if session is not None else requests.Session()
        self.on_request = on_request
        self._limiter = threading.BoundedSemaphore(config.max_in_flight)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0

    @property
    def url(self):
        return self.config.endpoint.rstrip('/') + '/chat/completions'

    def complete(self, messages, temperature=None, max_tokens=None) -> str:
        payload = {
            'model': self.config.model_name,
            'messages': messages,
            'temperature': self.config.temperature if temperature is None else temperature,
        }
        max_tokens = self.config.max_tokens if max_tokens is None else max_tokens
        if max_tokens is not None:
            payload['max_tokens'] = max_tokens
        headers = {'Content-Type': 'application/json'}
        if self.api_key:
            headers['Authorization'] = f'Bearer {self.api_key}'

        with self._limiter:
            with self._lock:
                self.in_flight += 1
                self.calls += 1
                self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
                current = self.in_flight
            try:
                if self.on_request is not None:
                    self.on_request(current)
                resp = self.session.post(
                    self.url, headers=headers, json=payload, timeout=self.config.timeout)
            except requests.RequestException as e:
                raise TransportError(f'{self.url}: {e!r}') from e
            finally:
                with self._lock:
                    self.in_flight -= 1

        if resp.status_code >= 400:
            raise TransportError(f'{self.url}: HTTP {resp.status_code}: {resp.text[:200]}')
        try:
            content = resp.json()['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f'{self.url}: unreadable completion body') from e
        if not isinstance(content, str):
            raise TransportError(f'{self.url}: completion without text content')
        return content


def backoff_delay(attempt, base, cap, rng=None):
    rng = rng or random
    return min(cap, base * (2 ** attempt)) * rng.uniform(0.5, 1.0)


def call_with_retries(fn, max_retries, backoff_base=0.5, backoff_max=8.0,
                      rng=None, sleep=time.sleep, what='llm call'):
    """Calls `fn` up to 1 + max_retries times.

    `fn` signals a retryable failure by raising TransportError or
    ReplyParseError. When the budget is spent a transport failure surfaces as
    JudgeUnavailable and a parse failure as ReplyParseError.
    """
    last_err = None
    for attempt in range(max_retries + 1):
        try:
            return fn()
        except (TransportError, ReplyParseError) as e:
            last_err = e
            logger.warning(f'{what}: attempt {attempt + 1}/{max_retries + 1} failed: {e}')
            if attempt < max_retries:
                sleep(backoff_delay(attempt, backoff_base, backoff_max, rng))

    logger.error(f'{what}: giving up after {max_retries + 1} attempts')
    if isinstance(last_err, ReplyParseError):
        raise last_err
    raise JudgeUnavailable(f'{what}: retries exhausted ({last_err})') from last_err
