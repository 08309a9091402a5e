"""Hub configuration: one structured JSON document.

The config file carries the listen address, the trust boundary for header
authentication, the profile catalog, extra scheduler adapter definitions,
timeouts, and filesystem paths. Profiles and adapters are plain data so a
new scheduler dialect or job class is a config edit, not a code change.
"""

from __future__ import annotations

import fnmatch
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .model import Profile
from .spawners.batch import SchedulerAdapter, register_adapter
from .spawners.wrap import ProfileCatalog


class ConfigError(Exception):
    pass


@dataclass
class Timeouts:
    startup: float = 300.0
    poll_interval: float = 30.0
    command: float = 10.0
    proxy_read: float = 30.0

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Timeouts":
        return cls(
            startup=float(data.get("startup", 300.0)),
            poll_interval=float(data.get("poll_interval", 30.0)),
            command=float(data.get("command", 10.0)),
            proxy_read=float(data.get("proxy_read", 30.0)),
        )


@dataclass
class HubConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8760
    public_url: str = ""  # defaults to http://listen_host:listen_port
    trusted_proxy_addresses: list[str] = field(default_factory=lambda: ["127.0.0.1"])
    auth_header_name: str = "X-Remote-User"
    sso_url: str = "/sso/login"
    admin_users: list[str] = field(default_factory=list)
    profiles: ProfileCatalog = field(
        default_factory=lambda: ProfileCatalog(
            profiles=[Profile(id="local", display_name="Local process", spawner_kind="local")],
            default_profile_id="local",
        )
    )
    adapters: list[SchedulerAdapter] = field(default_factory=list)
    timeouts: Timeouts = field(default_factory=Timeouts)
    state_db_path: str = "state.json"
    spool_dir: str = "spool"
    host_map: dict[str, str] = field(default_factory=dict)
    static_dir: Optional[str] = None
    token_ttl: float = 86400.0
    config_path: Optional[str] = None

    def validate(self) -> None:
        if not self.trusted_proxy_addresses:
            raise ConfigError("trusted_proxy_addresses must not be empty for header auth")
        self.profiles.validate()
        for adapter in self.adapters:
            adapter.validate()

    def effective_public_url(self) -> str:
        return self.public_url or f"http://{self.listen_host}:{self.listen_port}"

    def resolve_host(self, host: str) -> str:
        """Translate a scheduler-reported node name into a reachable address.

        Exact entries win, then fnmatch patterns; unmapped names pass through.
        """
        if host in self.host_map:
            return self.host_map[host]
        for pattern, target in self.host_map.items():
            if fnmatch.fnmatch(host, pattern):
                return target
        return host


def config_from_dict(data: dict[str, Any], config_path: Optional[str] = None) -> HubConfig:
    cfg = HubConfig(config_path=config_path)
    if "listen" in data:
        listen = str(data["listen"])
        host, _, port = listen.rpartition(":")
        cfg.listen_host = host or "127.0.0.1"
        cfg.listen_port = int(port)
    cfg.listen_host = str(data.get("listen_host", cfg.listen_host))
    cfg.listen_port = int(data.get("listen_port", cfg.listen_port))
    cfg.public_url = str(data.get("public_url", ""))
    if "trusted_proxy_addresses" in data:
        cfg.trusted_proxy_addresses = [str(a) for a in data["trusted_proxy_addresses"]]
    cfg.auth_header_name = str(data.get("auth_header_name", cfg.auth_header_name))
    cfg.sso_url = str(data.get("sso_url", cfg.sso_url))
    cfg.admin_users = [str(u) for u in data.get("admin_users", [])]
    if "profiles" in data:
        cfg.profiles = ProfileCatalog.from_dict(data["profiles"])
    cfg.adapters = [SchedulerAdapter.from_dict(a) for a in data.get("adapters", [])]
    cfg.timeouts = Timeouts.from_dict(data.get("timeouts", {}))
    cfg.state_db_path = str(data.get("state_db_path", cfg.state_db_path))
    cfg.spool_dir = str(data.get("spool_dir", cfg.spool_dir))
    cfg.host_map = {str(k): str(v) for k, v in data.get("host_map", {}).items()}
    cfg.static_dir = data.get("static_dir")
    cfg.token_ttl = float(data.get("token_ttl", cfg.token_ttl))
    return cfg


def load_config(path: str) -> HubConfig:
    """Load, validate, and apply a config file (registers its adapters)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path!r} must be a JSON object")
    cfg = config_from_dict(data, config_path=os.path.abspath(path))
    for adapter in cfg.adapters:
        register_adapter(adapter)
    cfg.validate()
    return cfg


def reload_profiles(cfg: HubConfig) -> ProfileCatalog:
    """Re-read only the profiles block from the config file."""
    if not cfg.config_path:
        raise ConfigError("hub was started without a config file")
    with open(cfg.config_path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    catalog = ProfileCatalog.from_dict(data.get("profiles", {}))
    catalog.validate()
    return catalog
