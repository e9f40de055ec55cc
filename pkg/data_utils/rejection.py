"""Rejection sampling for distillation data.

A generated response is kept only once a validator accepts it. Choice
questions are validated with the exact choice reward, open-ended questions by
an LLM judge. Records still rejected when the attempt budget runs out are
dropped.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

from tqdm import tqdm

from reward_utils import parser
from reward_utils.judge import JudgeProtocol, JudgeRequest
from reward_utils.rewards import RewardConfig, RewardKind, score_response
from utils.errors import ConfigError
from utils.llm_client import call_with_retries, user_messages

from .data_class import AnswerFormat, QuestionRecord
from .prompts import DECODING_PRESETS, DecodingConfig, render_prompt

logger = logging.getLogger()

DEFAULT_BUDGET = 20


@dataclass(frozen=True)
class RejectionResult:
    accepted: bool
    attempts_used: int
    response: Optional[str] = None


class ExactChoiceValidator(object):
    name = 'exact-choice'

    def __call__(self, record: QuestionRecord, response: str) -> bool:
        outcome = score_response(
            parser.RawResponse(response), record, RewardConfig(kind=RewardKind.MCQ))
        return outcome.correctness == 1.0


class JudgeValidator(object):
    name = 'judge'

    def __init__(self, judge):
        self.judge = judge

    def __call__(self, record: QuestionRecord, response: str) -> bool:
        _, body = parser.answer_body(response)
        if record.answer_format is AnswerFormat.LIST:
            items = parser.parse_ranked_list(body)
            if not items:
                return False
            req = JudgeRequest(record.question, record.gold, items,
                               JudgeProtocol.SFT_VALIDATE_LIST)
            return self.judge.verdict(req).rank is not None
        answer = body.strip()
        if not answer:
            return False
        req = JudgeRequest(record.question, record.gold, (answer,), JudgeProtocol.SFT_VALIDATE)
        return self.judge.verdict(req).equivalent


def validator_for(record: QuestionRecord, judge=None):
    if record.answer_format is AnswerFormat.MCQ:
        return ExactChoiceValidator()
    if judge is None:
        raise ConfigError(f'{record.record_id}: open-ended validation needs a judge')
    return JudgeValidator(judge)


def rejection_validate(record: QuestionRecord, candidate: str, validator,
                       budget: int = DEFAULT_BUDGET,
                       regenerate: Optional[Callable[[QuestionRecord, int], str]] = None
                       ) -> RejectionResult:
    """Validates `candidate`, then regenerated responses, until one passes.

    `budget` counts every validated response including the first candidate;
    `regenerate(record, attempt)` produces the response for attempt 2, 3, ...
    """
    if budget < 1:
        raise ValueError(f'budget must be >= 1, got {budget}')
    response = candidate
    for attempt in range(1, budget + 1):
        if attempt > 1:
            if regenerate is None:
                return RejectionResult(False, attempt - 1)
            response = regenerate(record, attempt)
        if validator(record, response):
            return RejectionResult(True, attempt, response)
    return RejectionResult(False, budget)


class ResponseGenerator(object):
    """Samples responses for a prompt template from a chat-completions client."""

    def __init__(self, client, template_id, decoding: DecodingConfig = DECODING_PRESETS['distill'],
                 max_retries=3, rng=None, sleep=time.sleep):
        self.client = client
        self.template_id = template_id
        self.decoding = decoding
        self.max_retries = max_retries
        self.rng = rng
        self.sleep = sleep

    def prompt(self, record):
        return render_prompt(self.template_id, record)

    def __call__(self, record, attempt=1):
        messages = user_messages(self.prompt(record))
        return call_with_retries(
            lambda: self.client.complete(
                messages, temperature=self.decoding.temperature,
                max_tokens=self.decoding.max_tokens),
            self.max_retries, rng=self.rng, sleep=self.sleep,
            what=f'generate[{record.record_id}#{attempt}]')


def distill_records(records, generator: ResponseGenerator, judge=None,
                    budget: int = DEFAULT_BUDGET, workers: int = 1, progress: bool = False):
    """Returns (accepted SFT rows, rejected record ids), both in input order."""
    records = list(records)

    def run(record):
        validator = validator_for(record, judge)
        result = rejection_validate(
            record, generator(record, 1), validator, budget=budget, regenerate=generator)
        return record, result

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        results = executor.map(run, records)
        if progress:
            results = tqdm(results, total=len(records), desc='distilling')
        results = list(results)

    rows, rejected = [], []
    for record, result in results:
        if result.accepted:
            rows.append({
                'id': record.record_id,
                'benchmark': record.benchmark,
                'prompt': generator.prompt(record),
                'response': result.response,
                'attempts': result.attempts_used,
            })
        else:
            logger.info(f'{record.record_id}: rejected after {result.attempts_used} attempts')
            rejected.append(record.record_id)
    return rows, rejected
