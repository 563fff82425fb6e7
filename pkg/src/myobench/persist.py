"""Deterministic on-disk formats.

Checkpoints are zip files of .npy payloads plus a meta.json, written with a
fixed timestamp so identical contents produce identical bytes; JSON helpers
sort keys for the same reason.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamp


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays + metadata as a byte-deterministic zip."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        names = sorted(arrays)
        for name in names:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, json.dumps(meta or {}, sort_keys=True, indent=2))


def load_arrays(path) -> tuple[dict, dict]:
    """Returns ({name: array}, meta)."""
    arrays: dict = {}
    meta: dict = {}
    with zipfile.ZipFile(path, "r") as zf:
        for name in zf.namelist():
            if name == "meta.json":
                meta = json.loads(zf.read(name).decode())
            elif name.endswith(".npy"):
                buf = io.BytesIO(zf.read(name))
                arrays[name[:-4]] = np.lib.format.read_array(buf)
    return arrays, meta


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def read_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
