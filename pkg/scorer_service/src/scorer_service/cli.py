"""Run the scorer service from the command line."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoders import EncoderLoadError
from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="scorer-service", description=__doc__)
    parser.add_argument("--model", default="bert-base-uncased",
                        help='model name/path for transformers, or "hash" for the '
                             "offline deterministic encoder")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8763)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        server = serve(args.model, args.host, args.port)
    except EncoderLoadError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1
    host, port = server.server_address
    print(f"serving {args.model} on {host}:{port} (dim {server.encoder.dim})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
