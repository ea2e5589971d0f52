import json
import socket
from pathlib import Path

import pytest

from fedehr.config import Topology
from fedehr.seed import seed as seed_fixture
from fedehr.serve import ThreadedServer, build_app

# Key used for golden digest values; tests derive it the same way
# everywhere so frozen expectations stay valid.
TEST_KEY = bytes.fromhex(
    "476f4f516eec554ff1d89ed5684d934c198667cb86d98699aa022318e129732f"
)


def free_ports(n: int) -> list[int]:
    sockets = []
    ports = []
    for _ in range(n):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        sockets.append(sock)
        ports.append(sock.getsockname()[1])
    for sock in sockets:
        sock.close()
    return ports


def make_fixture(tmp_path: Path, patients=5, records=60, rng_seed=42, hospitals=None) -> Path:
    """Seed a fixture and rewrite its topology onto free loopback ports."""
    hospitals = hospitals or ["HC", "KW", "UH"]
    out = seed_fixture(patients, records, hospitals, rng_seed, tmp_path / "fixture")
    topo_path = out / "topology.json"
    doc = json.loads(topo_path.read_text())
    ports = free_ports(len(doc["servers"]))
    for server, port in zip(doc["servers"], ports):
        server["port"] = port
    topo_path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return out


class RunningTopology:
    def __init__(self, fixture_dir: Path):
        self.fixture_dir = fixture_dir
        self.topology = Topology.load(fixture_dir / "topology.json")
        self.servers: dict[str, ThreadedServer] = {}

    def start(self, only=None):
        for server in self.topology.servers:
            if only is not None and server.id not in only:
                continue
            app = build_app(self.topology, server.id)
            self.servers[server.id] = ThreadedServer(
                app, host=server.host, port=server.port
            ).start()
        return self

    def stop(self, server_id=None):
        if server_id is not None:
            self.servers.pop(server_id).stop()
            return
        for srv in self.servers.values():
            srv.stop()
        self.servers.clear()

    def app(self, server_id: str):
        return self.servers[server_id].app


@pytest.fixture
def small_topology(tmp_path):
    fixture = make_fixture(tmp_path)
    running = RunningTopology(fixture).start()
    yield running
    running.stop()
