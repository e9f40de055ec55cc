import logging
import string
from dataclasses import dataclass
from typing import Dict, List, Optional

from reward_utils.parser import RawResponse, normalize
from utils.errors import DuplicateId, SchemaError, UnknownRecord

from .common_utils import read_jsonl, write_jsonl
from .data_class import AnswerFormat, QuestionRecord

logger = logging.getLogger()

OPTION_LABELS = string.ascii_uppercase


def _required_text(obj, key, line):
    if key not in obj or obj[key] is None:
        raise SchemaError(line, key, 'missing')
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise SchemaError(line, key, f'expected a string, got {type(value).__name__}')
    value = str(value)
    if not value.strip():
        raise SchemaError(line, key, 'empty')
    return value


def _parse_options(raw, line):
    if isinstance(raw, list):
        if len(raw) > len(OPTION_LABELS):
            raise SchemaError(line, 'options', 'too many options')
        raw = dict(zip(OPTION_LABELS, raw))
    if not isinstance(raw, dict) or not raw:
        raise SchemaError(line, 'options', 'expected a non-empty object or list')
    options = {}
    for label, text in raw.items():
        label = str(label).strip().upper()
        if len(label) != 1 or label not in OPTION_LABELS:
            raise SchemaError(line, 'options', f'bad option label {label!r}')
        if not isinstance(text, str):
            raise SchemaError(line, 'options', f'option {label} is not a string')
        options[label] = text
    return options


def _parse_valid_answers(raw, gold, line):
    if not isinstance(raw, list) or not raw:
        raise SchemaError(line, 'valid_answers', 'expected a non-empty list')
    if not all(isinstance(v, str) and v.strip() for v in raw):
        raise SchemaError(line, 'valid_answers', 'entries must be non-empty strings')
    if normalize(gold) not in {normalize(v) for v in raw}:
        raise SchemaError(line, 'valid_answers', 'must contain the gold answer')
    return tuple(raw)


def parse_record(obj, line=None, expected_format=None) -> QuestionRecord:
    if not isinstance(obj, dict):
        raise SchemaError(line, '<record>', 'expected a JSON object')
    record_id = _required_text(obj, 'id', line)
    benchmark = _required_text(obj, 'benchmark', line)
    question = _required_text(obj, 'question', line)
    gold = _required_text(obj, 'gold', line).strip()

    fmt_value = obj.get('format', expected_format)
    if fmt_value is None:
        raise SchemaError(line, 'format', 'missing')
    try:
        answer_format = AnswerFormat.parse(fmt_value)
    except ValueError:
        raise SchemaError(line, 'format', f'unknown format {fmt_value!r}') from None
    if expected_format is not None and answer_format is not AnswerFormat.parse(expected_format):
        raise SchemaError(
            line, 'format', f'expected {AnswerFormat.parse(expected_format).value}, '
                            f'got {answer_format.value}')

    options = None
    if obj.get('options') is not None:
        options = _parse_options(obj['options'], line)
    if answer_format is AnswerFormat.MCQ:
        if options is None:
            raise SchemaError(line, 'options', 'mcq records need options')
        gold = gold.upper()
        if gold not in options:
            raise SchemaError(line, 'gold', f'{gold!r} is not an option label')

    valid_answers = None
    if obj.get('valid_answers') is not None:
        if answer_format is AnswerFormat.MCQ:
            raise SchemaError(line, 'valid_answers', 'only open-ended records carry valid answers')
        valid_answers = _parse_valid_answers(obj['valid_answers'], gold, line)

    metadata = {}
    if obj.get('conversion') is not None:
        metadata['conversion'] = obj['conversion']

    return QuestionRecord(
        record_id=record_id,
        benchmark=benchmark,
        question=question,
        gold=gold,
        answer_format=answer_format,
        options=options,
        valid_answers=valid_answers,
        metadata=metadata,
    )


def record_to_dict(record: QuestionRecord):
    row = {
        'id': record.record_id,
        'benchmark': record.benchmark,
        'question': record.question,
        'gold': record.gold,
        'format': record.answer_format.value,
    }
    if record.options is not None:
        row['options'] = dict(record.options)
    if record.valid_answers is not None:
        row['valid_answers'] = list(record.valid_answers)
    if 'conversion' in record.metadata:
        row['conversion'] = record.metadata['conversion']
    return row


def load_records(path, expected_format=None) -> List[QuestionRecord]:
    records = []
    seen = set()
    for line, obj in read_jsonl(path):
        record = parse_record(obj, line, expected_format)
        if record.record_id in seen:
            raise DuplicateId(line, record.record_id)
        seen.add(record.record_id)
        records.append(record)
    logger.info(f'Loaded {len(records)} records from {path}')
    return records


def save_records(records, path):
    write_jsonl((record_to_dict(r) for r in records), path)


@dataclass(frozen=True)
class ResponseLine:
    line: int
    record_id: str
    raw: RawResponse


def load_responses(path) -> List[ResponseLine]:
    responses = []
    for line, obj in read_jsonl(path):
        if not isinstance(obj, dict):
            raise SchemaError(line, '<record>', 'expected a JSON object')
        record_id = _required_text(obj, 'id', line)
        text = obj.get('response')
        if not isinstance(text, str):
            raise SchemaError(line, 'response', 'missing or not a string')
        tokens = obj.get('tokens')
        if tokens is not None and (isinstance(tokens, bool) or not isinstance(tokens, int)
                                   or tokens < 0):
            raise SchemaError(line, 'tokens', 'expected a nonnegative integer')
        responses.append(ResponseLine(line, record_id, RawResponse(text, tokens)))
    logger.info(f'Loaded {len(responses)} responses from {path}')
    return responses


class ReaderDataset(object):
    """Records of one dataset file, addressable by id."""

    def __init__(self, records):
        self.records = list(records)
        self._by_id: Dict[str, QuestionRecord] = {r.record_id: r for r in self.records}

    @classmethod
    def from_file(cls, path, expected_format=None):
        return cls(load_records(path, expected_format))

    def __getitem__(self, idx):
        return self.records[idx]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id) -> Optional[QuestionRecord]:
        return self._by_id.get(record_id)

    @property
    def benchmarks(self):
        return sorted({r.benchmark for r in self.records})

    def resolve(self, responses):
        """Pairs each response line with its record; unknown ids are schema errors."""
        pairs = []
        for row in responses:
            record = self._by_id.get(row.record_id)
            if record is None:
                raise UnknownRecord(row.line, row.record_id)
            pairs.append((row, record))
        return pairs
