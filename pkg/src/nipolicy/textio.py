"""Self-describing plain-text documents used for every file this package emits.

A document is a header line ``nipolicy-doc <kind>`` followed by one entry per
key.  Scalar entries are single lines (``key int 5``, ``key real 0.25``,
``key str tanh``); array entries announce their length (``key reals 12``) and
the values follow, whitespace-separated and wrapped over as many lines as
needed.  Reals are written with 17 significant digits so float64 round-trips
are exact.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

HEADER = "nipolicy-doc"


def format_real(x: float) -> str:
    return f"{float(x):.17g}"


def _entry_lines(key: str, value) -> list[str]:
    if isinstance(value, str):
        if any(c.isspace() for c in value):
            raise DataError(f"string value for {key!r} must not contain whitespace")
        return [f"{key} str {value}"]
    if isinstance(value, (bool, np.bool_)):
        raise DataError(f"boolean value for {key!r} not supported; use int")
    if isinstance(value, (int, np.integer)):
        return [f"{key} int {int(value)}"]
    if isinstance(value, (float, np.floating)):
        return [f"{key} real {format_real(value)}"]

    arr = np.asarray(value)
    flat = arr.reshape(-1)
    if arr.dtype.kind in "iu":
        tag, tokens = "ints", [str(int(v)) for v in flat]
    elif arr.dtype.kind == "f":
        tag, tokens = "reals", [format_real(v) for v in flat]
    else:
        raise DataError(f"unsupported value type for key {key!r}: {arr.dtype}")
    lines = [f"{key} {tag} {flat.size}"]
    per_line = 8
    for i in range(0, len(tokens), per_line):
        lines.append(" ".join(tokens[i : i + per_line]))
    return lines


def write_document(path, kind: str, entries: dict) -> None:
    lines = [f"{HEADER} {kind}"]
    for key, value in entries.items():
        lines.extend(_entry_lines(key, value))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_document(path, expect_kind: str | None = None) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2 or tokens[0] != HEADER:
        raise DataError(f"{path}: not a {HEADER} file")
    kind = tokens[1]
    if expect_kind is not None and kind != expect_kind:
        raise DataError(f"{path}: expected kind {expect_kind!r}, found {kind!r}")

    entries: dict = {"_kind": kind}
    pos = 2
    while pos < len(tokens):
        if pos + 2 > len(tokens):
            raise DataError(f"{path}: truncated entry near {tokens[pos]!r}")
        key, tag = tokens[pos], tokens[pos + 1]
        pos += 2
        if tag == "int":
            entries[key] = int(tokens[pos])
            pos += 1
        elif tag == "real":
            entries[key] = float(tokens[pos])
            pos += 1
        elif tag == "str":
            entries[key] = tokens[pos]
            pos += 1
        elif tag in ("ints", "reals"):
            count = int(tokens[pos])
            pos += 1
            if pos + count > len(tokens):
                raise DataError(f"{path}: array {key!r} shorter than declared ({count})")
            chunk = tokens[pos : pos + count]
            pos += count
            if tag == "ints":
                entries[key] = np.array([int(t) for t in chunk], dtype=np.int64)
            else:
                entries[key] = np.array([float(t) for t in chunk], dtype=np.float64)
        else:
            raise DataError(f"{path}: unknown entry tag {tag!r} for key {key!r}")
    return entries


def require(entries: dict, key: str, path="document"):
    if key not in entries:
        raise DataError(f"{path}: missing required key {key!r}")
    return entries[key]
