"""Plain key=value text blocks: the config, manifest, and report format.

One ``key=value`` pair per line; ``#`` starts a comment line; blank lines
are ignored.  Values may contain ``=``.  Keys are unique within a block.
"""

from __future__ import annotations


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(entries: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in entries.items())
