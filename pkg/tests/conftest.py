import json
import random
import re
import threading

import pytest

from data_utils.data_class import AnswerFormat, QuestionRecord
from reward_utils.rewards import first_match_rank
from utils.errors import TransportError
from utils.llm_client import JudgeClientConfig

_GOLD_LINE = re.compile(r'^Ground-truth answer: (.*)$', re.MULTILINE)
_ITEM_BLOCK = re.compile(r'Candidate answers:\n((?:\d+\. .*(?:\n|$))+)')
_ITEM_LINE = re.compile(r'^\d+\. (.*)$', re.MULTILINE)


def prompt_of(messages):
    return messages[-1]['content']


def judge_prompt_parts(prompt):
    gold = _GOLD_LINE.search(prompt).group(1)
    items = _ITEM_LINE.findall(_ITEM_BLOCK.search(prompt).group(1))
    return gold, items


def exact_match_reply(prompt):
    """Judge reply that agrees with the string-matching reward."""
    gold, items = judge_prompt_parts(prompt)
    rank = first_match_rank(items, gold)
    if 'EQUIVALENT: yes' in prompt:
        return 'Checked.\nEQUIVALENT: ' + ('yes' if rank is not None else 'no')
    return 'Compared each candidate.\nRANK: ' + (str(rank) if rank is not None else 'none')


class FakeClient(object):
    """Stands in for ChatCompletionsClient; `reply` is a string or prompt -> string."""

    def __init__(self, reply=exact_match_reply, config=None, fail_calls=()):
        self.config = config or JudgeClientConfig(backoff_base=0.0, max_retries=2)
        self.reply = reply
        self.fail_calls = set(fail_calls)
        self.calls = 0
        self.prompts = []
        self.temperatures = []
        self._lock = threading.Lock()

    def complete(self, messages, temperature=None, max_tokens=None):
        with self._lock:
            self.calls += 1
            call = self.calls
            self.prompts.append(prompt_of(messages))
            self.temperatures.append(temperature)
        if call in self.fail_calls:
            raise TransportError(f'call {call} failed')
        if callable(self.reply):
            return self.reply(prompt_of(messages))
        return self.reply


def no_sleep(_):
    pass


@pytest.fixture
def fake_client():
    return FakeClient()


def mcq_record(record_id='q1', gold='B', benchmark='medqa'):
    return QuestionRecord(
        record_id=record_id, benchmark=benchmark,
        question='Which drug is first-line for uncomplicated hypertension?',
        gold=gold, answer_format=AnswerFormat.MCQ,
        options={'A': 'Metoprolol', 'B': 'Hydrochlorothiazide', 'C': 'Hydralazine',
                 'D': 'Clonidine'})


def open_record(record_id='q1', gold='aspirin', answer_format=AnswerFormat.LIST,
                benchmark='medqa', valid_answers=None):
    return QuestionRecord(
        record_id=record_id, benchmark=benchmark,
        question=f'Question {record_id}: which drug?',
        gold=gold, answer_format=answer_format, valid_answers=valid_answers)


def write_lines(path, rows):
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + '\n')
    return str(path)


def read_lines(path):
    with open(path, encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


_DRUGS = ['aspirin', 'heparin', 'warfarin', 'clopidogrel', 'metoprolol', 'lisinopril',
          'amlodipine', 'atorvastatin', 'furosemide', 'spironolactone', 'digoxin', 'apixaban']
_FILLER = ('The patient presents with chest pain radiating to the left arm, elevated '
           'troponin and ST depression in the lateral leads, so the differential favours '
           'an acute coronary syndrome over pericarditis or aortic dissection. ') * 8


def list_responses(n, seed=0, size=1024):
    """About `size` characters each: a think block followed by a 3 to 8 item list."""
    rng = random.Random(seed)
    texts = []
    for _ in range(n):
        items = rng.sample(_DRUGS, rng.randint(3, 8))
        answer = '\n'.join(f'{i}. {item}' for i, item in enumerate(items, 1))
        offset = rng.randrange(100)
        think = _FILLER[offset:offset + max(0, size - len(answer) - 20)]
        texts.append(f'<think>{think}</think>\n{answer}')
    return texts


def planted_multi_valid_fixture():
    """1,149 list records with planted re-classification tallies.

    55 correct lists covering both valid answers, 78 correct lists of
    single-answer records, 100 correct lists missing the second valid answer,
    43 wrong lists that name only the second valid answer, 873 wrong lists.
    """
    dataset, responses = [], []
    groups = [
        (55, True, True, True),
        (78, False, True, False),
        (100, True, True, False),
        (43, True, False, True),
        (873, False, False, False),
    ]
    i = 0
    for count, two_valid, has_gold, has_alt in groups:
        for _ in range(count):
            gold, alt, wrong = f'drug-{i:04d}', f'alt-{i:04d}', f'wrong-{i:04d}'
            valid = [gold, alt] if two_valid else [gold]
            items = []
            if has_gold:
                items.append(gold)
            else:
                items.append(wrong)
            if has_alt:
                items.append(alt)
            dataset.append({
                'id': f'r{i:04d}', 'benchmark': 'medqa', 'question': f'Question {i}?',
                'gold': gold, 'valid_answers': valid, 'format': 'list',
            })
            body = '\n'.join(f'{k}. {item}' for k, item in enumerate(items, 1))
            responses.append({'id': f'r{i:04d}', 'response': f'<think>t</think>\n{body}'})
            i += 1
    return dataset, responses
