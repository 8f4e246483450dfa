import logging

import pytest

from utils.logger import ROOT_LOGGER, Logger, get_logger, log_exceptions


def test_children_share_the_root_handlers():
    child = get_logger("logger_test_child")
    assert child.name == f"{ROOT_LOGGER}.logger_test_child"
    assert child.propagate
    assert not child.handlers
    root = logging.getLogger(ROOT_LOGGER)
    assert root.handlers
    assert not root.propagate


def test_run_log_mirrors_loggers_created_later(tmp_path):
    path = tmp_path / "run.log"
    early = get_logger("logger_test_early")
    handler = Logger.attach_run_log(path)
    try:
        late = get_logger("logger_test_late")
        early.info("before the late logger")
        late.info("from the late logger")
    finally:
        Logger.detach_run_log(handler)
    late.info("after detach")
    text = path.read_text(encoding="utf-8")
    assert "fairlane.logger_test_early - INFO - before the late logger" in text
    assert "fairlane.logger_test_late - INFO - from the late logger" in text
    assert "after detach" not in text
    assert handler not in logging.getLogger(ROOT_LOGGER).handlers


def test_log_exceptions_reraises(tmp_path):
    path = tmp_path / "run.log"

    @log_exceptions("logger_test_decorated")
    def explode():
        raise RuntimeError("boom")

    handler = Logger.attach_run_log(path)
    try:
        with pytest.raises(RuntimeError):
            explode()
    finally:
        Logger.detach_run_log(handler)
    assert "Exception in explode: boom" in path.read_text(encoding="utf-8")
