from .common_utils import *
from .data_class import AnswerFormat, ConversionVerdict, QuestionRecord
