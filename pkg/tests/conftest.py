from __future__ import annotations

import json
import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xdlforge.hardware import graph_from_dict  # noqa: E402
from xdlforge.llm import Gateway, ScriptedBackend  # noqa: E402
from xdlforge.memory import open_store  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Every test runs offline; any outbound connection attempt fails loudly."""

    def deny(*args, **kwargs):
        raise NetworkBlocked(f"network access attempted: {args!r}")

    monkeypatch.setattr(socket.socket, "connect", deny)
    monkeypatch.setattr(socket.socket, "connect_ex", deny)
    monkeypatch.setattr(socket, "create_connection", deny)
    monkeypatch.setattr(socket, "getaddrinfo", deny)


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def demo_graph():
    from importlib import resources

    text = resources.files("xdlforge").joinpath("data/demo_graph.json").read_text(encoding="utf-8")
    return graph_from_dict(json.loads(text))


@pytest.fixture
def store(tmp_path):
    return open_store(tmp_path / "store", default_dim=256)


@pytest.fixture
def offline_gateway():
    return Gateway(ScriptedBackend(), embed_dim=256)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
