class ListRewardError(Exception):
    pass


class ConfigError(ListRewardError, ValueError):
    pass


class SchemaError(ListRewardError, ValueError):

    def __init__(self, line, field, message=None):
        self.line = line
        self.field = field
        text = f'line {line}: field {field!r}' if line is not None else f'field {field!r}'
        if message:
            text += f': {message}'
        super().__init__(text)


class DuplicateId(SchemaError):

    def __init__(self, line, record_id):
        self.record_id = record_id
        super().__init__(line, 'id', f'duplicate record id {record_id!r}')


class UnknownRecord(SchemaError):

    def __init__(self, line, record_id):
        self.record_id = record_id
        super().__init__(line, 'id', f'unknown record id {record_id!r}')


class IncompatibleFormat(ListRewardError, ValueError):
    pass


class TemplateMissing(ListRewardError, FileNotFoundError):
    pass


class EmptySet(ListRewardError, ValueError):
    pass


class CardinalityMismatch(ListRewardError, ValueError):
    pass


class TransportError(ListRewardError):
    """A single chat-completions call failed (network, HTTP status, body)."""


class JudgeUnavailable(ListRewardError):
    """Retries against the LLM endpoint are exhausted."""


class ReplyParseError(ListRewardError):
    """The LLM kept answering in a shape we cannot read."""
