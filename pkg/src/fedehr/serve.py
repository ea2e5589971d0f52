"""Run one topology server, either as a process (``python -m
fedehr.serve``) or in a background thread (tests and the desk harness)."""

from __future__ import annotations

import argparse
import threading
import time

import uvicorn
from fastapi import FastAPI

from .config import ROLE_INDEX, Topology
from .http_api import create_hospital_app, create_index_app


def build_app(topology: Topology, server_id: str) -> FastAPI:
    server = topology.server(server_id)
    if server.role == ROLE_INDEX:
        return create_index_app(topology, server_id)
    return create_hospital_app(topology, server_id)


class ThreadedServer:
    """Uvicorn in a daemon thread; binds port 0 if asked and reports the
    actual port."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        config = uvicorn.Config(app, host=host, port=port, log_level="warning", access_log=False)
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.app = app
        self.host = host

    def start(self, timeout: float = 10.0) -> "ThreadedServer":
        self.thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if time.monotonic() > deadline or not self.thread.is_alive():
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        return self

    @property
    def port(self) -> int:
        return self.server.servers[0].sockets[0].getsockname()[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="run one federation server")
    parser.add_argument("--topology", required=True)
    parser.add_argument("--server", required=True, help="server id from the topology file")
    args = parser.parse_args(argv)

    topology = Topology.load(args.topology)
    server = topology.server(args.server)
    app = build_app(topology, args.server)
    uvicorn.run(app, host=server.host, port=server.port, log_level="info", access_log=False)


if __name__ == "__main__":
    main()
