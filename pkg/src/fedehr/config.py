"""Topology and per-server configuration.

One topology file describes the whole desk-scale federation: the patient
index server plus one entry per hospital with its ports, state directory,
legacy store, mapping and credential files. Relative paths resolve
against the topology file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .tokens import load_key_map

ROLE_INDEX = "index"
ROLE_HOSPITAL = "hospital"


@dataclass(frozen=True)
class ServerConfig:
    id: str
    role: str
    host: str
    port: int
    data_dir: Path
    legacy_store: Optional[Path] = None
    mapping_file: Optional[Path] = None
    credentials_file: Optional[Path] = None
    sync_interval_s: int = 60

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"


@dataclass(frozen=True)
class Topology:
    path: Path
    federation_key_path: Path
    signing_keys_path: Path
    servers: tuple[ServerConfig, ...]

    @classmethod
    def load(cls, path: str | Path) -> "Topology":
        path = Path(path).resolve()
        doc = json.loads(path.read_text("utf-8"))
        base = path.parent

        def resolve(p: Optional[str]) -> Optional[Path]:
            return (base / p).resolve() if p else None

        servers = tuple(
            ServerConfig(
                id=s["id"],
                role=s["role"],
                host=s.get("host", "127.0.0.1"),
                port=int(s["port"]),
                data_dir=resolve(s["data_dir"]),
                legacy_store=resolve(s.get("legacy_store")),
                mapping_file=resolve(s.get("mapping_file")),
                credentials_file=resolve(s.get("credentials_file")),
                sync_interval_s=int(s.get("sync_interval_s", 60)),
            )
            for s in doc["servers"]
        )
        return cls(
            path=path,
            federation_key_path=resolve(doc["federation_key"]),
            signing_keys_path=resolve(doc["signing_keys"]),
            servers=servers,
        )

    def server(self, server_id: str) -> ServerConfig:
        for s in self.servers:
            if s.id == server_id:
                return s
        raise KeyError(f"no server {server_id!r} in topology")

    @property
    def index_server(self) -> ServerConfig:
        for s in self.servers:
            if s.role == ROLE_INDEX:
                return s
        raise KeyError("topology has no index server")

    @property
    def hospitals(self) -> tuple[ServerConfig, ...]:
        return tuple(s for s in self.servers if s.role == ROLE_HOSPITAL)

    def federation_key(self) -> bytes:
        return bytes.fromhex(self.federation_key_path.read_text("utf-8").strip())

    def key_map(self) -> dict[str, bytes]:
        return load_key_map(self.signing_keys_path)

    def peer_urls(self) -> dict[str, str]:
        return {s.id: s.base_url for s in self.hospitals}
