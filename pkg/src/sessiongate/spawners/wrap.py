"""Runtime spawner selection from an administrator-controlled profile list.

Users pick a profile id from a dropdown; the id is the only user-supplied
datum and it is validated against the catalog before any use, so no request
data can ever reach a spawner configuration or a rendered command. The
wrapper proxies the spawner API through to the selected inner instance and
records the inner kind/config in its own state map, which makes reloaded
state self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from ..model import ExecutionStatus, Profile
from .base import MalformedState, Spawner, SpawnerDescriptor, SpawnRequest, create_spawner, spawner_kinds

WRAPPED_KIND_KEY = "wrapped.kind"
WRAPPED_CONFIG_KEY = "wrapped.config"


class UnknownProfile(Exception):
    def __init__(self, profile_id: str) -> None:
        super().__init__(f"unknown profile {profile_id!r}")
        self.profile_id = profile_id


@dataclass
class ProfileCatalog:
    """Ordered, admin-defined list of selectable profiles."""

    profiles: list[Profile]
    default_profile_id: str

    def validate(self, known_kinds: Optional[set[str]] = None) -> None:
        if not self.profiles:
            raise ValueError("profile catalog must not be empty")
        ids = [p.id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate profile ids: {ids}")
        if self.default_profile_id not in ids:
            raise ValueError(f"default profile {self.default_profile_id!r} not in catalog")
        kinds = known_kinds if known_kinds is not None else set(spawner_kinds())
        for p in self.profiles:
            if p.spawner_kind not in kinds:
                raise ValueError(f"profile {p.id!r} names unregistered spawner {p.spawner_kind!r}")

    def get(self, profile_id: str) -> Profile:
        for p in self.profiles:
            if p.id == profile_id:
                return p
        raise UnknownProfile(profile_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "default_profile_id": self.default_profile_id,
            "profiles": [p.to_dict() for p in self.profiles],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProfileCatalog":
        profiles = [Profile.from_dict(d) for d in data.get("profiles", [])]
        default = data.get("default_profile_id") or (profiles[0].id if profiles else "")
        return cls(profiles=profiles, default_profile_id=default)


@dataclass(frozen=True)
class OptionsSelection:
    """The single user-supplied datum of the spawn form."""

    profile_id: str


@dataclass
class OptionsFormSpec:
    field_name: str = "profile"
    choices: list[dict[str, str]] = field(default_factory=list)
    selected: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "field_name": self.field_name,
            "choices": list(self.choices),
            "selected": self.selected,
        }


def build_options_form(catalog: ProfileCatalog) -> OptionsFormSpec:
    """One choice per profile, catalog order preserved, default pre-selected."""
    return OptionsFormSpec(
        choices=[{"id": p.id, "display_name": p.display_name} for p in catalog.profiles],
        selected=catalog.default_profile_id,
    )


def apply_selection(catalog: ProfileCatalog, selection: OptionsSelection) -> SpawnerDescriptor:
    """Resolve an untrusted selection to the matching profile's descriptor.

    The returned kind and config are copied verbatim from the profile; the
    selection only chooses which profile, it contributes no values.
    """
    profile = catalog.get(selection.profile_id)
    return SpawnerDescriptor(kind=profile.spawner_kind, config=dict(profile.config))


class WrapperSpawner(Spawner):
    """Transparent proxy around a late-bound inner spawner instance."""

    kind = "wrapped"

    def __init__(self, config: dict[str, Any] | None = None,
                 descriptor: Optional[SpawnerDescriptor] = None) -> None:
        super().__init__(config)
        self._inner: Optional[Spawner] = None
        self._descriptor: Optional[SpawnerDescriptor] = None
        if descriptor is not None:
            self.bind(descriptor)

    @property
    def descriptor(self) -> Optional[SpawnerDescriptor]:
        return self._descriptor

    @property
    def inner(self) -> Spawner:
        if self._inner is None:
            raise MalformedState("wrapper has no inner spawner bound")
        return self._inner

    def bind(self, descriptor: SpawnerDescriptor) -> None:
        self._descriptor = descriptor
        self._inner = create_spawner(descriptor.kind, descriptor.config)

    def start(self, request: SpawnRequest) -> None:
        self.inner.start(request)

    def stop(self) -> None:
        self.inner.stop()

    def poll(self) -> ExecutionStatus:
        if self._inner is None:
            return ExecutionStatus.unknown()
        return self._inner.poll()

    def get_state(self) -> dict[str, str]:
        if self._descriptor is None:
            return {}
        state = dict(self.inner.get_state())
        state[WRAPPED_KIND_KEY] = self._descriptor.kind
        state[WRAPPED_CONFIG_KEY] = json.dumps(self._descriptor.config, sort_keys=True)
        return state

    def load_state(self, state: dict[str, str]) -> None:
        if WRAPPED_KIND_KEY not in state:
            raise MalformedState(f"wrapper state requires {WRAPPED_KIND_KEY!r}")
        try:
            config = json.loads(state.get(WRAPPED_CONFIG_KEY, "{}"))
        except json.JSONDecodeError as exc:
            raise MalformedState(f"bad {WRAPPED_CONFIG_KEY!r}: {exc}") from exc
        self.bind(SpawnerDescriptor(kind=state[WRAPPED_KIND_KEY], config=config))
        inner_state = {k: v for k, v in state.items()
                       if k not in (WRAPPED_KIND_KEY, WRAPPED_CONFIG_KEY)}
        self.inner.load_state(inner_state)


class ProfileSpawner:
    """Catalog-driven factory: options form in, wrapped spawner out."""

    def __init__(self, catalog: ProfileCatalog) -> None:
        catalog.validate()
        self.catalog = catalog

    def options_form(self) -> OptionsFormSpec:
        return build_options_form(self.catalog)

    def create(self, selection: OptionsSelection,
               base_config: Optional[dict[str, Any]] = None) -> WrapperSpawner:
        """Instantiate the wrapper for a validated selection.

        ``base_config`` carries hub-level defaults (spool dir, command
        timeout); profile values take precedence over them.
        """
        descriptor = apply_selection(self.catalog, selection)
        if base_config:
            merged = dict(base_config)
            merged.update(descriptor.config)
            descriptor = SpawnerDescriptor(kind=descriptor.kind, config=merged)
        return WrapperSpawner(descriptor=descriptor)
