"""Persistence: policy/value containers, trajectories, tables and reports.

Container layout::

    qrisk-container <schema version>\\n
    <one-line JSON header>\\n
    <packed little-endian float64 arrays, in header order>

The header lists each array's name, shape and byte offset, the metadata,
and a SHA-256 of the array section. All files are written to a temporary
name and renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynprog.grid import DPConfig, Lattice, Policy, ValueGrid
from .model import TwoLevelParams
from .stochastic import TrajectoryRecord

MAGIC = "qrisk-container"
SCHEMA_VERSION = 1


class ArtifactError(ValueError):
    """Unreadable, corrupted or incompatible artifact file."""


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack_container(metadata: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    body = b"".join(blobs)
    header = {"schema": SCHEMA_VERSION, "metadata": metadata, "arrays": entries,
              "content_sha256": hashlib.sha256(body).hexdigest()}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return f"{MAGIC} {SCHEMA_VERSION}\n".encode() + head + b"\n" + body


def unpack_container(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        first, rest = data.split(b"\n", 1)
        magic, version = first.decode().split()
        head, body = rest.split(b"\n", 1)
        header = json.loads(head)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"not a qrisk container: {exc}") from None
    if magic != MAGIC:
        raise ArtifactError("not a qrisk container")
    if int(version) != SCHEMA_VERSION or header.get("schema") != SCHEMA_VERSION:
        raise ArtifactError(f"unsupported container schema {version}")
    if hashlib.sha256(body).hexdigest() != header["content_sha256"]:
        raise ArtifactError("container content hash mismatch (corrupted file)")
    arrays = {}
    for e in header["arrays"]:
        chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(float)
    return header, arrays


def content_hash(path: str | Path) -> str:
    header, _ = unpack_container(Path(path).read_bytes())
    return header["content_sha256"]


def save_solution(path: str | Path, vg: ValueGrid, pol: Policy, extra: dict | None = None) -> str:
    """Write a value grid and its policy to one container; returns the content hash."""
    dp = vg.config.as_dict()
    dp.pop("backend")
    meta = {"kind": "solution", "mode": vg.mode, "params": vg.params.as_dict(),
            "params_digest": vg.params.digest(), "dp": dp, "provenance": pol.provenance}
    meta.update(extra or {})
    data = pack_container(meta, {"times": vg.times, "step_index": vg.step_index.astype(float),
                                 "values": vg.values, "u_r": pol.u_r, "u_i": pol.u_i})
    atomic_write(path, data)
    return unpack_container(data)[0]["content_sha256"]


def load_solution(path: str | Path) -> tuple[ValueGrid, Policy, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from None
    header, arr = unpack_container(data)
    meta = header["metadata"]
    if meta.get("kind") != "solution":
        raise ArtifactError(f"{path} does not hold a solution")
    params = TwoLevelParams(**meta["params"])
    cfg = DPConfig(**meta["dp"])
    lattice = Lattice(cfg.n_x, cfg.n_y, cfg.n_z)
    step_index = arr["step_index"].astype(np.int64)
    vg = ValueGrid(params, cfg, meta["mode"], arr["times"], step_index, arr["values"], lattice)
    pol = Policy(params, cfg, meta["mode"], arr["times"], step_index, arr["u_r"], arr["u_i"],
                 meta["provenance"], lattice)
    return vg, pol, header


def _num(v: float) -> str:
    return repr(float(v))


def trajectory_line(index: int, rec: TrajectoryRecord) -> str:
    """One path as a JSON line with the per-step series."""
    obj = {
        "path": index,
        "stream": list(rec.stream),
        "t": rec.times.tolist(),
        "dy2": rec.y_increments.tolist(),
        "truth": rec.states.tolist(),
        "filter": rec.controller_states.tolist(),
        "u": [[c.real, c.imag] for c in rec.controls.tolist()],
    }
    return json.dumps(obj, separators=(",", ":"))


def write_lines(path: str | Path, header: dict, lines) -> None:
    text = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    text += "".join(line + "\n" for line in lines)
    atomic_write(path, text.encode())


def write_table(path: str | Path, comments: list[str], columns: list[str], rows) -> None:
    """Comma-separated table with ``#``-prefixed header comments."""
    out = [f"# {c}" for c in comments]
    out.append(",".join(columns))
    for row in rows:
        out.append(",".join(_num(v) for v in row))
    atomic_write(path, ("\n".join(out) + "\n").encode())


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    cols = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return cols, data


def write_json(path: str | Path, obj: dict) -> None:
    atomic_write(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())
