"""
Shared fixtures.
"""

import logging

import pytest


@pytest.fixture(autouse=True)
def package_logs_reach_caplog():
    """CLI runs install a non-propagating rich handler; undo that between tests."""
    logger = logging.getLogger("telecoupling")
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
    yield
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
