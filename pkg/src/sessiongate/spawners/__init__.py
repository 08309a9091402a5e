"""Pluggable spawner implementations and their registry."""

from .base import (
    AlreadyRunning,
    MalformedState,
    NotRunning,
    Spawner,
    SpawnerDescriptor,
    SpawnerError,
    SpawnRequest,
    StartFailed,
    create_spawner,
    register_spawner,
    spawner_kinds,
)
from .batch import BatchSpawner
from .local import LocalProcessSpawner
from .wrap import ProfileSpawner, WrapperSpawner

register_spawner(LocalProcessSpawner.kind, LocalProcessSpawner)
register_spawner(BatchSpawner.kind, BatchSpawner)

__all__ = [
    "AlreadyRunning",
    "BatchSpawner",
    "LocalProcessSpawner",
    "MalformedState",
    "NotRunning",
    "ProfileSpawner",
    "Spawner",
    "SpawnerDescriptor",
    "SpawnerError",
    "SpawnRequest",
    "StartFailed",
    "WrapperSpawner",
    "create_spawner",
    "register_spawner",
    "spawner_kinds",
]
