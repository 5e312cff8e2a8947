import socket
import threading
import time

import pytest
import uvicorn

from diffusion_service.config import ServiceConfig
from diffusion_service.server import create_app


class ThreadedService:
    """uvicorn in a daemon thread on an ephemeral port."""

    def __init__(self, config: ServiceConfig):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            self.port = s.getsockname()[1]
        self.url = f"http://127.0.0.1:{self.port}"
        uv_config = uvicorn.Config(create_app(config), host="127.0.0.1",
                                   port=self.port, log_level="warning")
        self._server = uvicorn.Server(uv_config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def start(self) -> "ThreadedService":
        self._thread.start()
        deadline = time.time() + 15
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("service did not start in time")
            time.sleep(0.02)
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


@pytest.fixture(scope="session")
def service():
    with ThreadedService(ServiceConfig(engine="procedural")) as srv:
        yield srv
