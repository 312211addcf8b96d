import logging

import click
from click.testing import CliRunner

import jsstools.clicklog as clicklog

clicklog.basicConfig(
    format="%(asctime)s - %(levelname)s - %(message)s", datefmt="%y-%m-%d %H:%M:%S"
)
log = logging.getLogger()


def test_basic_config():

    assert isinstance(log.handlers[0], clicklog.ClickHandler)


def test_log_level_option():

    logger = logging.getLogger("jsstools.test_clicklog")

    @click.command()
    @clicklog.log_level_option(logger)
    def main():
        click.echo(logging.getLevelName(logger.level))

    runner = CliRunner()
    assert runner.invoke(main, ["--log-level", "debug"]).output == "DEBUG\n"
    assert runner.invoke(main, []).output == "INFO\n"
    assert runner.invoke(main, ["-l", "LOUD"]).exit_code == 2
