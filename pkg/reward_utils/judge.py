"""LLM judge for semantic answer equivalence.

Ranked protocols ask the judge for the position of the first candidate that
means the same as the gold answer and expect a final `RANK: <k|none>` line.
Single-answer protocols expect `EQUIVALENT: yes|no`; an equivalent verdict is
reported as rank 1 so every verdict reads the same way downstream.
"""
import enum
import functools
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from tqdm import tqdm

from data_utils.common_utils import file_digest, read_txt
from utils.errors import JudgeUnavailable, ReplyParseError, TemplateMissing
from utils.llm_client import JudgeClientConfig, call_with_retries, user_messages

logger = logging.getLogger()

DEFAULT_TEMPLATE_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'dataset', 'prompts', 'judge')


class JudgeProtocol(str, enum.Enum):
    FULL_MRR = 'full_mrr'
    SIMPLE_MRR = 'simple_mrr'
    QA_ACC = 'qa_acc'
    SFT_VALIDATE = 'sft_validate'
    SFT_VALIDATE_LIST = 'sft_validate_list'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace('-', '_'))

    @property
    def ranked(self):
        return self in (JudgeProtocol.FULL_MRR, JudgeProtocol.SIMPLE_MRR,
                        JudgeProtocol.SFT_VALIDATE_LIST)

    @property
    def template_file(self):
        return f'{self.value}.txt'


MRR_PROTOCOLS = (JudgeProtocol.FULL_MRR, JudgeProtocol.SIMPLE_MRR)
EQUIVALENCE_PROTOCOLS = (JudgeProtocol.QA_ACC, JudgeProtocol.SFT_VALIDATE)


@dataclass(frozen=True)
class JudgeRequest:
    question: str
    gold: str
    items: Tuple[str, ...]
    protocol: JudgeProtocol = JudgeProtocol.FULL_MRR

    def __post_init__(self):
        object.__setattr__(self, 'items', tuple(self.items))
        object.__setattr__(self, 'protocol', JudgeProtocol.parse(self.protocol))
        if not self.items:
            raise ValueError(f'{self.protocol.value} request needs at least one candidate')


@dataclass(frozen=True)
class JudgeVerdict:
    rank: Optional[int]
    equivalent: bool
    raw_reply: str
    parse_ok: bool


_RANK_MARKER = re.compile(r'RANK[ \t]*:[ \t]*([^\n]*)', re.IGNORECASE)
_EQUIVALENT_MARKER = re.compile(r'EQUIVALENT[ \t]*:[ \t]*([^\n]*)', re.IGNORECASE)
_VALUE_STRIP = ' \t\r*.`\'"'
_PLACEHOLDER = re.compile(r'\{\{(question|gold|items)\}\}')


@functools.lru_cache(maxsize=32)
def _load_template(path):
    if not os.path.isfile(path):
        raise TemplateMissing(f'judge template not found: {path}')
    return read_txt(path)


def template_path(protocol, template_dir=None):
    protocol = JudgeProtocol.parse(protocol)
    return os.path.join(template_dir or DEFAULT_TEMPLATE_DIR, protocol.template_file)


def format_items(items: Sequence[str]) -> str:
    return '\n'.join(f'{i}. {item}' for i, item in enumerate(items, 1))


def render_judge_prompt(req: JudgeRequest, template_dir: Optional[str] = None) -> str:
    template = _load_template(template_path(req.protocol, template_dir))
    values = {
        'question': req.question,
        'gold': req.gold,
        'items': format_items(req.items),
    }
    # one pass, so placeholder-looking text inside values is left alone
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def _last_marker_value(pattern, text):
    matches = pattern.findall(text)
    if not matches:
        return None
    return matches[-1].strip(_VALUE_STRIP).lower()


def parse_judge_reply(text: str, n_items: int,
                      protocol: JudgeProtocol = JudgeProtocol.FULL_MRR) -> JudgeVerdict:
    if n_items < 1:
        raise ValueError(f'n_items must be >= 1, got {n_items}')
    protocol = JudgeProtocol.parse(protocol)
    failed = JudgeVerdict(rank=None, equivalent=False, raw_reply=text, parse_ok=False)

    if protocol.ranked:
        value = _last_marker_value(_RANK_MARKER, text)
        if value is None:
            return failed
        if value == 'none':
            return JudgeVerdict(rank=None, equivalent=False, raw_reply=text, parse_ok=True)
        if not value.isdigit():
            return failed
        rank = int(value)
        if not 1 <= rank <= n_items:
            return failed
        return JudgeVerdict(rank=rank, equivalent=True, raw_reply=text, parse_ok=True)

    value = _last_marker_value(_EQUIVALENT_MARKER, text)
    if value == 'yes':
        return JudgeVerdict(rank=1, equivalent=True, raw_reply=text, parse_ok=True)
    if value == 'no':
        return JudgeVerdict(rank=None, equivalent=False, raw_reply=text, parse_ok=True)
    return failed


class LLMJudge(object):
    """Binds a chat-completions client to the judge templates.

    Safe to share across threads; the client's limiter bounds concurrent calls.
    """

    def __init__(self, client, config: Optional[JudgeClientConfig] = None,
                 template_dir: Optional[str] = None, rng=None, sleep=time.sleep,
                 default_protocol=JudgeProtocol.FULL_MRR):
        self.client = client
        self.config = config or getattr(client, 'config', None) or JudgeClientConfig()
        self.template_dir = template_dir or DEFAULT_TEMPLATE_DIR
        self.rng = rng or random.Random()
        self.sleep = sleep
        self.default_protocol = JudgeProtocol.parse(default_protocol)
        self._memo = {} if self.config.memoize else None
        self._memo_lock = threading.Lock()

    def verdict(self, req: JudgeRequest) -> JudgeVerdict:
        prompt = render_judge_prompt(req, self.template_dir)
        key = (req.protocol, prompt)
        if self._memo is not None:
            with self._memo_lock:
                if key in self._memo:
                    return self._memo[key]

        def attempt():
            reply = self.client.complete(
                user_messages(prompt), temperature=self.config.temperature)
            verdict = parse_judge_reply(reply, len(req.items), req.protocol)
            if not verdict.parse_ok:
                raise ReplyParseError(f'unreadable judge reply: {reply[-120:]!r}')
            return verdict

        try:
            verdict = call_with_retries(
                attempt, self.config.max_retries,
                backoff_base=self.config.backoff_base, backoff_max=self.config.backoff_max,
                rng=self.rng, sleep=self.sleep, what=f'judge[{req.protocol.value}]')
        except ReplyParseError as e:
            raise JudgeUnavailable(f'judge reply unreadable after retries: {e}') from e

        if self._memo is not None:
            with self._memo_lock:
                self._memo[key] = verdict
        return verdict

    def template_paths(self, protocols=None):
        protocols = protocols or [self.default_protocol]
        return [template_path(p, self.template_dir) for p in protocols]

    def snapshot(self):
        snap = self.config.snapshot()
        snap['protocol'] = self.default_protocol.value
        snap['templates'] = {
            os.path.basename(path): file_digest(path)
            for path in self.template_paths() if os.path.isfile(path)
        }
        return snap


def judge_mrr(req: JudgeRequest, judge: LLMJudge) -> float:
    if req.protocol not in MRR_PROTOCOLS:
        raise ValueError(f'judge_mrr needs an MRR protocol, got {req.protocol.value}')
    verdict = judge.verdict(req)
    return 1.0 / verdict.rank if verdict.rank is not None else 0.0


def judge_equivalent(req: JudgeRequest, judge: LLMJudge) -> int:
    if req.protocol not in EQUIVALENCE_PROTOCOLS:
        raise ValueError(f'judge_equivalent needs a single-answer protocol, got {req.protocol.value}')
    return int(judge.verdict(req).equivalent)


def derived_llm_acc(verdict: JudgeVerdict) -> int:
    if not verdict.parse_ok:
        raise ValueError('cannot derive accuracy from an unparsed verdict')
    return int(verdict.rank is not None)


def judge_many(requests: Sequence[JudgeRequest], judge: LLMJudge,
               workers: Optional[int] = None, progress: bool = False):
    """Verdicts in input order; the first JudgeUnavailable aborts the batch."""
    requests = list(requests)
    if not requests:
        return []
    workers = workers or judge.config.max_in_flight
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = executor.map(judge.verdict, requests)
        if progress:
            results = tqdm(results, total=len(requests), desc='judging')
        return list(results)
