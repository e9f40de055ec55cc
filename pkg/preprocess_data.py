"""MCQ -> open-ended QA conversion.

One LLM call per question both decides whether the stem can stand without its
options and, when it can, rewrites it. The gold answer of the converted record
is the text of the original gold option.
"""
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from tqdm import tqdm

from data_utils.common_utils import append_jsonl, mkdir, read_jsonl
from data_utils.data_class import AnswerFormat, ConversionVerdict, QuestionRecord
from data_utils.prompts import PROMPT_DIR, format_options, load_asset, substitute
from data_utils.reader_dataset import load_records, record_to_dict
from utils.errors import ConfigError, IncompatibleFormat, ReplyParseError
from utils.llm_client import call_with_retries, user_messages

logger = logging.getLogger()

CONVERSION_PROMPT = os.path.join(PROMPT_DIR, 'conversion', 'mcq_to_qa.txt')
CONVERTED_FILE = 'converted.jsonl'
SKIP_LOG_FILE = 'skipped.jsonl'

_FENCE = re.compile(r'^```(?:json)?\s*|\s*```$', re.IGNORECASE)


@dataclass(frozen=True)
class ConversionParams:
    threshold: float = 0.7
    temperature: float = 0.1
    max_retries: int = 3
    workers: int = 4
    backoff_base: float = 0.5
    backoff_max: float = 8.0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f'threshold must be in [0, 1], got {self.threshold}')
        if self.workers < 1:
            raise ConfigError(f'workers must be >= 1, got {self.workers}')


def render_conversion_prompt(record, prompt_file=CONVERSION_PROMPT):
    if record.answer_format is not AnswerFormat.MCQ or not record.options:
        raise IncompatibleFormat(f'{record.record_id}: only mcq records can be converted')
    return substitute(load_asset(prompt_file), {
        'question': record.question.strip(),
        'options': format_options(record.options),
        'answer': f'{record.gold}. {record.gold_option_text}',
    })


def _json_object(text):
    text = _FENCE.sub('', text.strip())
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start, end = text.find('{'), text.rfind('}')
    if start == -1 or end <= start:
        raise ReplyParseError('no JSON object in conversion reply')
    try:
        return json.loads(text[start:end + 1])
    except json.JSONDecodeError as e:
        raise ReplyParseError(f'invalid JSON in conversion reply: {e.msg}') from e


def parse_conversion_reply(text):
    obj = _json_object(text)
    if not isinstance(obj, dict):
        raise ReplyParseError('conversion reply is not a JSON object')
    convertible = obj.get('convertible')
    if not isinstance(convertible, bool):
        raise ReplyParseError("'convertible' must be true or false")
    confidence = obj.get('confidence')
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise ReplyParseError("'confidence' must be a number")
    if not 0.0 <= confidence <= 1.0:
        raise ReplyParseError(f"'confidence' out of range: {confidence}")
    question = obj.get('question')
    if convertible and (not isinstance(question, str) or not question.strip()):
        raise ReplyParseError("convertible reply without a 'question'")
    rationale = obj.get('rationale') or ''
    if not isinstance(rationale, str):
        rationale = str(rationale)
    return ConversionVerdict(
        convertible=convertible,
        converted_question=question.strip() if convertible else None,
        confidence=float(confidence),
        rationale=rationale,
    )


def request_verdict(record, client, params, rng=None, sleep=time.sleep):
    messages = user_messages(render_conversion_prompt(record))
    return call_with_retries(
        lambda: parse_conversion_reply(
            client.complete(messages, temperature=params.temperature)),
        params.max_retries, backoff_base=params.backoff_base,
        backoff_max=params.backoff_max, rng=rng, sleep=sleep,
        what=f'convert[{record.record_id}]')


def converted_record(record, verdict):
    return QuestionRecord(
        record_id=record.record_id,
        benchmark=record.benchmark,
        question=verdict.converted_question,
        gold=record.gold_option_text.strip(),
        answer_format=AnswerFormat.QA,
        metadata={'conversion': {
            'confidence': verdict.confidence,
            'rationale': verdict.rationale,
            'source_gold': record.gold,
            'source_question': record.question,
        }},
    )


def convert_mcq(record, client, params=ConversionParams(), rng=None, sleep=time.sleep):
    verdict = request_verdict(record, client, params, rng=rng, sleep=sleep)
    if not verdict.convertible:
        return None
    return converted_record(record, verdict)


def conversion_confidence(record):
    return float(record.metadata.get('conversion', {}).get('confidence', 0.0))


def filter_by_confidence(records, threshold):
    return [r for r in records if conversion_confidence(r) >= threshold]


def _result_triple(record, verdict):
    converted = converted_record(record, verdict) if verdict.convertible else None
    return record, verdict, converted


def _deliver_finished(pending, on_result):
    for record, future in pending:
        if future.cancelled() or future.exception() is not None:
            continue
        if on_result is not None:
            on_result(*_result_triple(record, future.result()))


def convert_dataset(records, client, params=ConversionParams(),
                    skip_ids=(), on_result=None, rng=None, sleep=time.sleep, progress=False):
    """Converts every record whose id is not in `skip_ids`.

    Returns (source, verdict, converted-or-None) triples in input order;
    `on_result` sees each triple in that same order as soon as it and all
    earlier ones are done. A failure cancels the work not yet started, and
    verdicts that already came back are still handed to `on_result` before the
    error propagates.
    """
    skip_ids = set(skip_ids)
    todo = [r for r in records if r.record_id not in skip_ids]
    rng = rng or random.Random()
    results = []
    with ThreadPoolExecutor(max_workers=params.workers) as executor:
        futures = [executor.submit(request_verdict, r, client, params, rng, sleep) for r in todo]
        try:
            iterator = zip(todo, futures)
            if progress:
                iterator = tqdm(iterator, total=len(todo), desc='converting')
            for record, future in iterator:
                triple = _result_triple(record, future.result())
                if on_result is not None:
                    on_result(*triple)
                results.append(triple)
        except BaseException:
            for future in futures:
                future.cancel()
            _deliver_finished(list(zip(todo, futures))[len(results) + 1:], on_result)
            raise
    return results


def _done_ids(path):
    if not os.path.exists(path):
        return set()
    return {str(obj['id']) for _, obj in read_jsonl(path)}


def convert_file(dataset_path, out_dir, client, params=ConversionParams(),
                 resume=False, rng=None, sleep=time.sleep, progress=True):
    # with resume, ids already in the output or the skip log are not sent again
    records = load_records(dataset_path, expected_format=AnswerFormat.MCQ)
    mkdir(out_dir)
    out_path = os.path.join(out_dir, CONVERTED_FILE)
    skip_path = os.path.join(out_dir, SKIP_LOG_FILE)
    if resume:
        done = _done_ids(out_path) | _done_ids(skip_path)
        logger.info(f'Resuming: {len(done)} records already processed')
    else:
        done = set()
        for path in (out_path, skip_path):
            if os.path.exists(path):
                os.remove(path)

    counts = {'input': len(records), 'resumed': len(done), 'converted': 0,
              'not_convertible': 0, 'low_confidence': 0}

    def on_result(source, verdict, converted):
        if converted is None:
            reason = 'not_convertible'
        elif verdict.confidence < params.threshold:
            reason = 'low_confidence'
        else:
            append_jsonl(record_to_dict(converted), out_path)
            counts['converted'] += 1
            return
        counts[reason] += 1
        append_jsonl({'id': source.record_id, 'reason': reason, **verdict.to_dict()}, skip_path)

    convert_dataset(records, client, params, skip_ids=done, on_result=on_result,
                    rng=rng, sleep=sleep, progress=progress)
    logger.info(f'Converted {counts["converted"]} records, skipped '
                f'{counts["not_convertible"]} not convertible and '
                f'{counts["low_confidence"]} below threshold {params.threshold}')
    return counts

