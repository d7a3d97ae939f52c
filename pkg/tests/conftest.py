"""Shared fixtures: an in-process service client and quieter logging."""

import logging

import pytest


@pytest.fixture(scope="session")
def client():
    from fastapi.testclient import TestClient

    from tofg.service import create_app

    return TestClient(create_app())


@pytest.fixture(autouse=True)
def _quiet_offroad_warnings():
    # Randomized scenes place vehicles off-road on purpose; keep the
    # expected warnings out of the report while tests can still assert
    # on them through caplog.
    logging.getLogger("tofg.graph").setLevel(logging.ERROR)
    yield
    logging.getLogger("tofg.graph").setLevel(logging.NOTSET)
