#!/usr/bin/env python3
"""Container entrypoint: `server` starts the REST API, anything else is a CLI command."""

import os
import sys
from typing import List, Optional


def serve() -> None:
    import uvicorn

    from api import app

    host = os.getenv("QUANTBENCH_HOST", "0.0.0.0")
    port = int(os.getenv("QUANTBENCH_PORT", "8000"))
    # log_config=None keeps uvicorn on the root JSON handler
    uvicorn.run(app, host=host, port=port, log_level="info", log_config=None)


def run(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if argv[:1] == ["server"]:
        serve()
        return 0
    from main import main

    return main(argv)


if __name__ == "__main__":
    sys.exit(run())
