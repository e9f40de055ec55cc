# data_class.py
import enum
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple


class AnswerFormat(str, enum.Enum):
    MCQ = 'mcq'
    QA = 'qa'
    LIST = 'list'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower())


@dataclass(frozen=True)
class QuestionRecord:
    record_id: str
    benchmark: str
    question: str
    gold: str
    answer_format: AnswerFormat
    options: Optional[Dict[str, str]] = None
    valid_answers: Optional[Tuple[str, ...]] = None
    # sidecar metadata, e.g. {"conversion": {...}} on converted records
    metadata: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def allowed_labels(self):
        return frozenset(self.options) if self.options else frozenset()

    @property
    def gold_option_text(self):
        if self.options is None:
            return None
        return self.options.get(self.gold)

    def __repr__(self):
        return (f'QuestionRecord(id={self.record_id}, benchmark={self.benchmark}, '
                f'format={self.answer_format.value}, gold={self.gold!r})')


@dataclass(frozen=True)
class ConversionVerdict:
    convertible: bool
    converted_question: Optional[str]
    confidence: float
    rationale: str

    def to_dict(self):
        return {
            'convertible': self.convertible,
            'question': self.converted_question,
            'confidence': self.confidence,
            'rationale': self.rationale,
        }
