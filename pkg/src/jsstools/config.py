"""Configuration for Job Shop Scheduling Tools

Configuration is a singleton. As it it constructed only once, calling the
constructor again will connect to the same instance.

Usage:
    from jsstools.config import Configuration

    config = Configuration()
    config.init()
    print(config.reward.rx_scale)
"""
import logging
import os
import pathlib
import shutil
from typing import Any, Dict, List, Optional, Union, cast

import tomli
from expandvars import expandvars

from jsstools.exceptions import JSTError
from jsstools.singleton import SingletonMetaClass

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

HORIZON_MODES = ("projected", "scheduled")
M_OLD_MODES = ("before_wait", "after_wait")
ACTIVATIONS = ("sigmoid", "tanh", "relu")


def _choice(config_data: Dict[str, Any], key: str, default: str, choices) -> str:

    value = cast(str, config_data.get(key, default))
    if value not in choices:
        raise JSTError(f"{key} must be one of {', '.join(choices)}, not {value!r}")
    return value


class Configuration(metaclass=SingletonMetaClass):
    """Configuration wrapper class

    Usage:
        config = Configuration()
        config.init()
        print(config.train.learning_rate)
    """

    config_path: Optional[pathlib.Path]
    scenario: "Configuration.Scenario"
    reward: "Configuration.Reward"
    train: "Configuration.Train"
    verify: "Configuration.Verify"
    output: "Configuration.Output"

    class Scenario:
        """Scenario used when none is given on the command line"""

        n_tasks: int
        seed: int

        def __init__(self, config_data: Dict[str, Any]) -> None:

            self.n_tasks = int(config_data.get("n_tasks", 10))
            self.seed = int(config_data.get("seed", 20230419))
            if self.n_tasks < 1:
                raise JSTError(f"scenario.n_tasks must be >= 1, not {self.n_tasks}")

    class Reward:
        """Reward constants of the two decision layers"""

        task_reward: float
        rx_scale: float
        alpha: float
        alpha_sign: int
        horizon: str
        m_old: str

        def __init__(self, config_data: Dict[str, Any]) -> None:

            self.task_reward = float(config_data.get("task_reward", 10.0))
            self.rx_scale = float(config_data.get("rx_scale", 5000.0))
            self.alpha = float(config_data.get("alpha", 1.0))
            self.alpha_sign = int(config_data.get("alpha_sign", 1))
            self.horizon = _choice(config_data, "horizon", "projected", HORIZON_MODES)
            self.m_old = _choice(config_data, "m_old", "before_wait", M_OLD_MODES)
            if self.rx_scale <= 0:
                raise JSTError(f"reward.rx_scale must be > 0, not {self.rx_scale}")
            if self.alpha < 0:
                raise JSTError(f"reward.alpha must be >= 0, not {self.alpha}")
            if self.alpha_sign not in (1, -1):
                raise JSTError(f"reward.alpha_sign must be 1 or -1, not {self.alpha_sign}")

    class Train:
        """Hyperparameters of the learners"""

        upper_steps: int
        lower_steps: int
        learning_rate: float
        gamma: float
        hidden: List[int]
        activation: Optional[str]
        batch_size: int
        buffer_size: int
        learning_starts: int
        train_freq: int
        target_update: int
        eps_start: float
        eps_end: float
        eps_fraction: float
        n_steps: int
        ppo_epochs: int
        minibatch_size: int
        clip_range: float
        gae_lambda: float
        ent_coef: float

        def __init__(self, config_data: Dict[str, Any]) -> None:

            self.upper_steps = int(config_data.get("upper_steps", 200_000))
            self.lower_steps = int(config_data.get("lower_steps", 100_000))
            self.learning_rate = float(config_data.get("learning_rate", 2e-4))
            self.gamma = float(config_data.get("gamma", 0.99))
            self.hidden = [int(h) for h in config_data.get("hidden", [64, 64])]
            self.activation = config_data.get("activation")
            self.batch_size = int(config_data.get("batch_size", 64))
            self.buffer_size = int(config_data.get("buffer_size", 50_000))
            self.learning_starts = int(config_data.get("learning_starts", 1000))
            self.train_freq = int(config_data.get("train_freq", 4))
            self.target_update = int(config_data.get("target_update", 1000))
            self.eps_start = float(config_data.get("eps_start", 1.0))
            self.eps_end = float(config_data.get("eps_end", 0.05))
            self.eps_fraction = float(config_data.get("eps_fraction", 0.3))
            self.n_steps = int(config_data.get("n_steps", 256))
            self.ppo_epochs = int(config_data.get("ppo_epochs", 4))
            self.minibatch_size = int(config_data.get("minibatch_size", 64))
            self.clip_range = float(config_data.get("clip_range", 0.2))
            self.gae_lambda = float(config_data.get("gae_lambda", 0.95))
            self.ent_coef = float(config_data.get("ent_coef", 0.01))

            if self.learning_rate <= 0:
                raise JSTError(
                    f"train.learning_rate must be > 0, not {self.learning_rate}"
                )
            if not 0 < self.gamma <= 1:
                raise JSTError(f"train.gamma must be in (0, 1], not {self.gamma}")
            if self.activation is not None and self.activation not in ACTIVATIONS:
                raise JSTError(
                    f"train.activation must be one of {', '.join(ACTIVATIONS)}, "
                    f"not {self.activation!r}"
                )

    class Verify:

        fuel_factor: int

        def __init__(self, config_data: Dict[str, Any]) -> None:

            self.fuel_factor = int(config_data.get("fuel_factor", 10))
            if self.fuel_factor < 1:
                raise JSTError("verify.fuel_factor must be >= 1")

    class Output:

        out_dir: pathlib.Path
        jobs: int

        def __init__(self, config_data: Dict[str, Any]) -> None:

            default_out_dir = os.path.join(
                os.environ.get("XDG_DATA_HOME", "~/.local/share"), "jsstools/runs"
            )
            self.out_dir = expandpath(
                cast(str, config_data.get("out_dir", default_out_dir))
            )
            self.jobs = int(config_data.get("jobs", 4))

    def __init__(self) -> None:

        self.config_path = None
        self._load({})

    def _load(self, config_data: Dict[str, Any]) -> None:

        self.scenario = Configuration.Scenario(config_data.get("scenario", {}))
        self.reward = Configuration.Reward(config_data.get("reward", {}))
        self.train = Configuration.Train(config_data.get("train", {}))
        self.verify = Configuration.Verify(config_data.get("verify", {}))
        self.output = Configuration.Output(config_data.get("output", {}))

    def init(self, config_file: Optional[PathOrStr] = None) -> None:
        """Initialise configuration

        The configuration file is stored in ~/.config/jsstools/jsstools.toml or
        at $XDG_CONFIG_HOME/jsstools/jsstools.toml
        Arguments:
            config_file (PathOrStr): other file to be read
        """

        if config_file is None:
            config_file = (
                pathlib.Path(
                    os.environ.get("XDG_CONFIG_HOME", "~/.config")
                ).expanduser()
                / "jsstools/jsstools.toml"
            )

        config_path = pathlib.Path(config_file)
        if not config_path.exists():
            log.info("Creating configuration file %s", config_path)
            config_path.parent.mkdir(mode=0o700, parents=True, exist_ok=True)
            shutil.copyfile(
                pathlib.Path(__file__).with_name("jsstools.toml"), config_path
            )

        try:
            with open(config_path, "rb") as f:
                config_data = tomli.load(f)
        except tomli.TOMLDecodeError as exc:
            raise JSTError(f"Invalid configuration file {config_path}: {exc}")

        log.debug("Reading configuration from %s", config_path)
        self._load(config_data)
        self.config_path = config_path


def expandpath(name: str) -> pathlib.Path:
    """Expand a path with environment variable and tilde expansion

    The library expandvars provides for many bash features.
    """

    return pathlib.Path(expandvars(name)).expanduser()
