from .parser import RawResponse, normalize, parse_response
from .rewards import RewardConfig, RewardKind, RewardOutcome, score_response
