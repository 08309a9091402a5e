"""Gateway entry point: load config, recover state, serve."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from typing import Optional

from .config import ConfigError, HubConfig, load_config
from .gateway import GatewayServer
from .hub import CorruptStateDb, Hub

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CORRUPT_STATE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sessiongate",
                                     description="multi-user interactive session gateway")
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--listen", metavar="ADDR", help="host:port to listen on")
    parser.add_argument("--state-db", metavar="PATH", help="state database path")
    parser.add_argument("--log-level", default="INFO")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config) if args.config else HubConfig()
    except ConfigError as exc:
        print(f"sessiongate: {exc}", file=sys.stderr)
        return 1
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        config.listen_host = host or "127.0.0.1"
        config.listen_port = int(port)
    if args.state_db:
        config.state_db_path = args.state_db
    try:
        config.validate()
    except ConfigError as exc:
        print(f"sessiongate: {exc}", file=sys.stderr)
        return 1

    hub = Hub(config)
    try:
        hub.recover_state()
    except CorruptStateDb as exc:
        print(f"sessiongate: {exc}\nmove the state db aside and restart", file=sys.stderr)
        return EXIT_CORRUPT_STATE

    gateway = GatewayServer(hub)
    log.info("gateway listening on %s", gateway.url)

    def _shutdown(signum, frame):
        raise SystemExit(0)

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    try:
        gateway.serve_forever()
    except (KeyboardInterrupt, SystemExit):
        pass
    finally:
        hub.persist_state()
        hub.shutdown()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
