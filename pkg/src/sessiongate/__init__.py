"""Multi-user interactive-session gateway.

One public URL behind which authenticated users launch, monitor, and stop
per-user backend servers, running either as local processes or as
batch-scheduler jobs. The gateway bundles a hub (auth, tokens, session
orchestration, persistence), a dynamic reverse proxy, a pluggable spawner
framework, and a deterministic mock batch scheduler for testing.
"""

__version__ = "0.1.0"
