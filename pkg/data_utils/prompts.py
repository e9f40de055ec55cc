"""Prompt templates for the three answer formats and their decoding presets.

Each of the six templates is one format file plus an optional reasoning
block, so a zero-shot prompt and its CoT variant differ only by that block.
"""
import enum
import functools
import os
import re
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

from utils.errors import ConfigError, IncompatibleFormat, TemplateMissing

from .common_utils import file_digest, read_txt
from .data_class import AnswerFormat, QuestionRecord

PROMPT_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'dataset', 'prompts')
TEMPLATE_DIR = os.path.join(PROMPT_DIR, 'templates')

_PLACEHOLDER = re.compile(r'\{\{(\w+)\}\}')


class PromptTemplateId(str, enum.Enum):
    MCQ = 'mcq'
    MCQ_COT = 'mcq_cot'
    QA = 'qa'
    QA_COT = 'qa_cot'
    LIST = 'list'
    LIST_COT = 'list_cot'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace('-', '_'))

    @property
    def answer_format(self):
        return AnswerFormat(self.value.split('_')[0])

    @property
    def cot(self):
        return self.value.endswith('_cot')

    def asset_files(self):
        fmt = self.answer_format
        files = [f'{fmt.value}.txt']
        if self.cot:
            files.append('reasoning_mcq.txt' if fmt is AnswerFormat.MCQ else 'reasoning.txt')
        if fmt is AnswerFormat.LIST:
            files.append('list_example.txt')
        return files


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int = -1
    max_tokens: int = 8192

    def to_dict(self):
        return asdict(self)


DECODING_PRESETS: Dict[str, DecodingConfig] = {
    'eval': DecodingConfig(),
    'eval_long': DecodingConfig(max_tokens=16384),
    'conversion': DecodingConfig(temperature=0.1),
    'distill': DecodingConfig(temperature=0.7, max_tokens=8192),
}


def decoding_preset(name) -> DecodingConfig:
    try:
        return DECODING_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f'unknown decoding preset {name!r}, choose from {sorted(DECODING_PRESETS)}') from None


@functools.lru_cache(maxsize=64)
def load_asset(path):
    if not os.path.isfile(path):
        raise TemplateMissing(f'prompt asset not found: {path}')
    return read_txt(path)


def substitute(template: str, values: Dict[str, str]) -> str:
    return _PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), template)


def format_options(options) -> str:
    return '\n'.join(f'{label}. {text}' for label, text in options.items())


def render_prompt(template_id, record: QuestionRecord, template_dir: Optional[str] = None) -> str:
    template_id = PromptTemplateId.parse(template_id)
    template_dir = template_dir or TEMPLATE_DIR
    fmt = template_id.answer_format

    if fmt is AnswerFormat.MCQ:
        if record.answer_format is not AnswerFormat.MCQ or not record.options:
            raise IncompatibleFormat(
                f'{record.record_id}: {template_id.value} template needs an mcq record with options')
    elif record.answer_format is AnswerFormat.MCQ:
        raise IncompatibleFormat(
            f'{record.record_id}: {template_id.value} template needs an open-ended record')

    files = template_id.asset_files()
    body = load_asset(os.path.join(template_dir, files[0]))
    values = {
        'question': record.question.strip(),
        'options': format_options(record.options) if record.options else '',
        'reasoning': '',
        'example': '',
    }
    if template_id.cot:
        values['reasoning'] = load_asset(os.path.join(template_dir, files[1]))
    if fmt is AnswerFormat.LIST:
        values['example'] = load_asset(os.path.join(template_dir, files[-1]))
    return substitute(body, values)


def asset_checksums(template_ids, template_dir: Optional[str] = None) -> Dict[str, str]:
    template_dir = template_dir or TEMPLATE_DIR
    checksums = {}
    for template_id in template_ids:
        for name in PromptTemplateId.parse(template_id).asset_files():
            checksums[name] = file_digest(os.path.join(template_dir, name))
    return checksums


def template_paths(template_id, template_dir: Optional[str] = None) -> List[str]:
    template_dir = template_dir or TEMPLATE_DIR
    return [os.path.join(template_dir, name)
            for name in PromptTemplateId.parse(template_id).asset_files()]
