"""Tests for utility functions."""

import logging
import os

from bandit_rex.utils import (
    THREADS_ENV_VAR,
    configure_logging,
    named_stream,
    notify,
    worker_count,
)


class TestNamedStream:
    """Tests for named_stream function."""

    def test_same_labels_same_draws(self):
        """Test that a seed and labels always give the same stream."""
        first = named_stream(7, "replay", "ts").random(5)
        second = named_stream(7, "replay", "ts").random(5)
        assert first.tolist() == second.tolist()

    def test_labels_separate_streams(self):
        """Test that different labels or seeds give different streams."""
        base = named_stream(7, "replay", "ts").random(3).tolist()
        assert named_stream(7, "replay", "ucb").random(3).tolist() != base
        assert named_stream(8, "replay", "ts").random(3).tolist() != base


class TestWorkerCount:
    """Tests for worker_count function."""

    def test_default_is_cpu_count(self, monkeypatch):
        """Test that without the variable every CPU is used."""
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert worker_count() == (os.cpu_count() or 1)

    def test_cap_from_environment(self, monkeypatch):
        """Test that the variable caps the worker count at no less than one."""
        monkeypatch.setenv(THREADS_ENV_VAR, "1")
        assert worker_count() == 1
        monkeypatch.setenv(THREADS_ENV_VAR, "0")
        assert worker_count() == 1

    def test_non_integer_is_ignored(self, monkeypatch, caplog):
        """Test that a malformed value falls back to the default with a warning."""
        monkeypatch.setenv(THREADS_ENV_VAR, "many")
        with caplog.at_level(logging.WARNING, logger="bandit_rex"):
            assert worker_count() == (os.cpu_count() or 1)
        assert THREADS_ENV_VAR in caplog.text


class TestNotify:
    """Tests for notify function."""

    def test_notify_logs_with_caller_location(self, capsys):
        """Test that notify reports the caller's file and line."""
        configure_logging()
        notify("Test message")
        err = capsys.readouterr().err
        assert "Test message" in err
        assert "test_utils.py" in err

    def test_quiet_hides_info(self, capsys):
        """Test that quiet logging drops info messages but keeps errors."""
        configure_logging(quiet=True)
        notify("hidden")
        notify("shown", logging.ERROR)
        err = capsys.readouterr().err
        assert "hidden" not in err
        assert "shown" in err
