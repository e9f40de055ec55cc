"""Answer extraction for the three answer formats.

All functions here are pure and total: malformed model text yields an empty
or absent answer, never an exception.
"""
import functools
import re
import unicodedata
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, Optional, Tuple, Union

from data_utils.data_class import AnswerFormat

THINK_OPEN = '<think>'
THINK_CLOSE = '</think>'
BOXED = '\\boxed{'

_STRIP_CHARS = ' .,;:!?"\'()'
_CHOICE_STRIP = ' \t\r\n.,;:!?"\'()[]*$`'


@dataclass(frozen=True)
class RawResponse:
    text: str
    token_count: Optional[int] = None

    def __post_init__(self):
        if self.token_count is not None and self.token_count < 0:
            raise ValueError(f'token_count must be >= 0, got {self.token_count}')


@dataclass(frozen=True)
class ThinkStructure:
    well_formed: bool
    think: Optional[str]
    body: str


@dataclass(frozen=True)
class Choice:
    label: str


@dataclass(frozen=True)
class Short:
    text: str


@dataclass(frozen=True)
class RankedList:
    items: Tuple[str, ...]


AnswerPayload = Union[Choice, Short, RankedList]


@dataclass(frozen=True)
class ListGrammar:
    """Line shapes recognised as a ranked list, tried in this order."""
    enumerated: str = r'^[ \t]*(\d+)[.)](?:[ \t]+(.*?)|[ \t]*)[ \t]*$'
    bullets: str = r'^[ \t]*[-*][ \t]+(.*?)[ \t]*$'
    boxed_separators: str = r'[;\n]'
    _compiled: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def pattern(self, name):
        if name not in self._compiled:
            self._compiled[name] = re.compile(getattr(self, name), re.MULTILINE)
        return self._compiled[name]


DEFAULT_GRAMMAR = ListGrammar()


@dataclass(frozen=True)
class ParsedResponse:
    structure: ThinkStructure
    answer_region: str
    payload: Optional[AnswerPayload]

    @property
    def items(self):
        if isinstance(self.payload, RankedList):
            return self.payload.items
        return ()


def nfc(text):
    if text.isascii():
        return text
    return unicodedata.normalize('NFC', text)


@functools.lru_cache(maxsize=1 << 16)
def normalize(text: str) -> str:
    if text.isascii():
        text = text.lower()
    else:
        text = nfc(nfc(text).upper().casefold())
    text = ' '.join(text.split())
    return text.strip(_STRIP_CHARS)


def extract_think_structure(raw) -> ThinkStructure:
    text = raw.text if isinstance(raw, RawResponse) else raw
    stripped = text.lstrip()
    if (stripped.startswith(THINK_OPEN)
            and text.count(THINK_OPEN) == 1
            and text.count(THINK_CLOSE) == 1):
        close = stripped.find(THINK_CLOSE)
        if close > 0:
            return ThinkStructure(
                well_formed=True,
                think=stripped[len(THINK_OPEN):close],
                body=stripped[close + len(THINK_CLOSE):])
    return ThinkStructure(well_formed=False, think=None, body=text)


def _boxed_content(text, start):
    # start points just past the opening brace
    depth = 1
    i = start
    n = len(text)
    while i < n:
        c = text[i]
        if c == '{':
            depth += 1
        elif c == '}':
            depth -= 1
            if depth == 0:
                return text[start:i]
        i += 1
    return None


def extract_boxed(body: str) -> Optional[str]:
    if '\\' not in body:
        return None
    pos = body.rfind(BOXED)
    while pos != -1:
        content = _boxed_content(body, pos + len(BOXED))
        if content is not None:
            return content
        pos = body.rfind(BOXED, 0, pos)
    return None


_LETTER_TOKEN = re.compile(r'(?<![0-9A-Za-z])([A-Z])(?![0-9A-Za-z])')


def extract_choice(body: str, allowed_labels: Iterable[str]) -> Optional[str]:
    allowed = frozenset(label.upper() for label in allowed_labels)
    if not allowed:
        raise ValueError('allowed_labels must not be empty')
    body = nfc(body)

    boxed = extract_boxed(body)
    if boxed is not None:
        candidate = boxed.strip(_CHOICE_STRIP)
        if len(candidate) == 1 and candidate.upper() in allowed:
            return candidate.upper()

    region = body.lstrip(' \t\r\n(*[')
    if region and region[0] in allowed:
        if len(region) == 1 or not region[1].isalnum():
            return region[0]

    for m in _LETTER_TOKEN.finditer(body):
        if m.group(1) in allowed:
            return m.group(1)
    return None


def _clean_items(items):
    return [item.strip() for item in items if item and item.strip()]


def _enumerated_items(body, grammar):
    matches = grammar.pattern('enumerated').findall(body)
    if not matches:
        return None
    for expected, (number, _) in enumerate(matches, 1):
        if int(number) != expected:
            return None
    return _clean_items(text for _, text in matches)


def parse_ranked_list(body: str, grammar: ListGrammar = DEFAULT_GRAMMAR):
    body = nfc(body)
    if not body.strip():
        return []

    items = _enumerated_items(body, grammar)
    if items:
        return items

    bullets = grammar.pattern('bullets').findall(body)
    items = _clean_items(bullets)
    if items:
        return items

    boxed = extract_boxed(body)
    if boxed is not None:
        items = _clean_items(re.split(grammar.boxed_separators, boxed))
        if items:
            return items

    return [body.strip()]


def answer_body(raw) -> Tuple[ThinkStructure, str]:
    """Think structure plus the text answers are extracted from.

    A malformed response that still closes a reasoning block is scored on
    the text after its last close tag, so reasoning never reaches a reward.
    """
    structure = extract_think_structure(raw)
    if structure.well_formed:
        return structure, structure.body
    text = structure.body
    cut = text.rfind(THINK_CLOSE)
    if cut != -1:
        return structure, text[cut + len(THINK_CLOSE):]
    return structure, text


def parse_response(raw, answer_format, allowed_labels: Optional[FrozenSet[str]] = None,
                   grammar: ListGrammar = DEFAULT_GRAMMAR) -> ParsedResponse:
    answer_format = AnswerFormat.parse(answer_format)
    structure, body = answer_body(raw)
    boxed = extract_boxed(body)
    region = boxed if boxed is not None else body

    if answer_format is AnswerFormat.MCQ:
        label = extract_choice(body, allowed_labels or ())
        payload = Choice(label) if label is not None else None
    elif answer_format is AnswerFormat.QA:
        payload = Short(region.strip()) if region.strip() else None
    else:
        payload = RankedList(tuple(parse_ranked_list(body, grammar)))
    return ParsedResponse(structure=structure, answer_region=region, payload=payload)
