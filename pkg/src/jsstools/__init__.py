"""Job Shop Scheduling Tools"""

import importlib.metadata
import logging
import pathlib
from typing import Union

from jsstools.config import Configuration  # noqa: F401
from jsstools.scenario import ScenarioConfig, default_scenario  # noqa: F401
from jsstools.scheme import SchedulingScheme, makespan  # noqa: F401
from jsstools.env import LowerEnv, UpperEnv, RewardConfig  # noqa: F401
from jsstools.parser import parse_program  # noqa: F401
from jsstools.machine import run  # noqa: F401
from jsstools.verify import check_scheme, compile_scheme, Verdict  # noqa: F401
from jsstools.pattern import extract_pattern, match_patterns, reward_rz  # noqa: F401
from jsstools.agents import TrainConfig  # noqa: F401
from jsstools.training import train_lower, train_upper, evaluate  # noqa: F401

PathOrStr = Union[pathlib.Path, str]

# add a null handler, in case logging is not properly initialised
logging.getLogger(__package__).addHandler(logging.NullHandler())

__version__ = importlib.metadata.version(__package__)
