from __future__ import annotations

from importlib import resources


def read_text(rel_path: str, encoding: str = "utf-8") -> str:
    """Read text from packaged resources under seqshot/resources.

    rel_path is relative to seqshot/resources, e.g.:
      - "config/defaults.yaml"
      - "schemas/run-config.schema.json"
    """
    base = resources.files("seqshot").joinpath("resources")
    p = base.joinpath(rel_path)
    return p.read_text(encoding=encoding)
