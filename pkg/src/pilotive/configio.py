"""Flat ``key=value`` text files for configs, manifests and reports."""
from __future__ import annotations


def format_value(v) -> str:
    if hasattr(v, "item") and not hasattr(v, "__len__"):
        v = v.item()  # numpy scalar
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def write_kv(path: str, items: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items.items():
            fh.write(f"{k}={format_value(v)}\n")


def read_kv(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
