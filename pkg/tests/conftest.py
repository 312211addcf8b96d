import pathlib

import pytest

import jsstools
from jsstools.scenario import historical_scenario, load_scenario
from jsstools.scheme import historical_scheme

TINY = """\
seed: 0
cars: 1
equipment:
- {type: 0, workstations: 1}
- {type: 1, workstations: 1}
tasks:
- ops:
  - {type: 0, duration: 2}
  - {type: 1, duration: 3}
- ops:
  - {type: 1, duration: 1}
  - {type: 0, duration: 2}
"""

PAIR = """\
seed: 0
cars: 2
equipment:
- {type: 0, workstations: 1}
- {type: 1, workstations: 1}
tasks:
- ops:
  - {type: 0, duration: 3}
  - {type: 1, duration: 2}
- ops:
  - {type: 1, duration: 4}
  - {type: 0, duration: 1}
"""


@pytest.fixture
def tiny():
    return load_scenario(TINY, name="tiny")


@pytest.fixture
def pair():
    return load_scenario(PAIR, name="pair")


@pytest.fixture
def historical():
    return historical_scenario()


@pytest.fixture
def historical_records():
    return historical_scheme()


@pytest.fixture
def config(tmp_path: pathlib.Path) -> jsstools.Configuration:
    """Configuration read from a fresh copy of the packaged defaults"""

    config = jsstools.Configuration()
    config.init(tmp_path / "jsstools.toml")
    return config


SMALL_TOML = """\
[scenario]
n_tasks = 3

[train]
upper_steps = 60
lower_steps = 40
hidden = [8]
batch_size = 8
buffer_size = 200
learning_starts = 10
n_steps = 16
minibatch_size = 8

[output]
out_dir = "{out_dir}"
jobs = 2
"""


@pytest.fixture
def small_config(tmp_path: pathlib.Path) -> jsstools.Configuration:
    """Configuration with step counts small enough for complete experiments"""

    path = tmp_path / "small.toml"
    path.write_text(SMALL_TOML.format(out_dir=tmp_path / "runs"))
    config = jsstools.Configuration()
    config.init(path)
    return config


@pytest.fixture
def tiny_file(tmp_path: pathlib.Path) -> pathlib.Path:

    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path
