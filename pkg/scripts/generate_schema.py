#!/usr/bin/env python
"""Dumps the json schemas of the revup file formats to a directory.

Checkpoints and training histories are written to `checkpoint_schema_v#.json`
and `history_schema_v#.json`; the run configuration to
`run_config_schema.json`. If no output directory is specified, the schemas are
written to the current working directory.

usage: python generate_schema.py [<OUT_DIR>]
"""

import json
import sys
from pathlib import Path

from pydantic import BaseModel

from revup.config import RunConfig
from revup.serialization.checkpoint import SerialCheckpoint
from revup.serialization.history import SerialHistory


def write_schema(out_dir: Path, filename: str, schema: type[BaseModel]) -> None:
    path = out_dir / filename
    print(f"Writing schema to {path}")
    with path.open("w") as f:
        json.dump(schema.model_json_schema(), f, indent=4)


if __name__ == "__main__":
    if len(sys.argv) == 1:
        out_dir = Path.cwd()
    elif len(sys.argv) == 2:
        out_dir = Path(sys.argv[1])
    else:
        print(__doc__)
        sys.exit(1)

    serials: list[tuple[str, type[SerialCheckpoint] | type[SerialHistory]]] = [
        ("checkpoint", SerialCheckpoint),
        ("history", SerialHistory),
    ]
    for prefix, serial in serials:
        write_schema(out_dir, f"{prefix}_schema_{serial.get_version()}.json", serial)
    write_schema(out_dir, "run_config_schema.json", RunConfig)
