"""File formats: lattice text files, network CSVs, the binary array container."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .models import LatticeState, NetworkState

MAGIC = b"IAVM1"
CONTAINER_VERSION = 1


# ---------------------------------------------------------------------------
# lattice / network
# ---------------------------------------------------------------------------


def read_lattice(path) -> LatticeState:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: missing 'm n' header")
    m, n = int(tokens[0]), int(tokens[1])
    values = [int(t) for t in tokens[2:]]
    if len(values) != m * n:
        raise ValueError(f"{path}: expected {m * n} spins, found {len(values)}")
    return LatticeState(np.array(values, dtype=np.int64).reshape(m, n))


def write_lattice(lattice: LatticeState, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{lattice.rows} {lattice.cols}\n")
        for row in lattice.spins:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_network(edges_path, attributes_path=None, n_nodes: Optional[int] = None) -> NetworkState:
    """Read an edge list ("src,dst", 0-based) and an optional "node,grade,sex" table."""
    edges = []
    with open(edges_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"src", "dst"} <= set(reader.fieldnames):
            raise ValueError(f"{edges_path}: header must be 'src,dst'")
        for row in reader:
            edges.append((int(row["src"]), int(row["dst"])))
    attrs = None
    if attributes_path is not None:
        table = {}
        with open(attributes_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "node" not in reader.fieldnames:
                raise ValueError(f"{attributes_path}: header must start with 'node'")
            cols = [c for c in reader.fieldnames if c != "node"]
            for row in reader:
                table[int(row["node"])] = row
        size = max(table) + 1 if table else 0
        n_nodes = n_nodes or size
        attrs = {}
        for c in cols:
            vals = [None] * n_nodes
            for node, row in table.items():
                v = row[c]
                if v == "":
                    continue
                vals[node] = int(v) if c == "grade" else v
            attrs[c] = vals
    if n_nodes is None:
        n_nodes = 1 + max((max(e) for e in edges), default=-1)
    return NetworkState.from_edges(n_nodes, edges, attrs)


def write_network(net: NetworkState, edges_path, attributes_path=None) -> None:
    iu = np.argwhere(np.triu(net.adjacency, 1))
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        w.writerows(iu.tolist())
    if attributes_path is not None:
        names = [c for c in ("grade", "sex") if c in net.attributes]
        with open(attributes_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node"] + names)
            for i in range(net.n_nodes):
                w.writerow([i] + ["" if net.attributes[c][i] is None else net.attributes[c][i] for c in names])


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------


def write_container(path, arrays: dict) -> str:
    """Write named float64 arrays; returns the sha256 of the bytes written.

    Layout: magic, uint32 version, uint32 count, then per array a uint16
    name length, the UTF-8 name, uint8 ndim, ndim uint64 dims and the
    little-endian float64 payload in C order.
    """
    parts = [MAGIC, struct.pack("<II", CONTAINER_VERSION, len(arrays))]
    for name in sorted(arrays):
        a = np.array(arrays[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    blob = b"".join(parts)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_container(path) -> dict:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not an IAVM1 container")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != CONTAINER_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    out = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_of_files(paths) -> str:
    """One digest over the contents of several files, in the given order."""
    h = hashlib.sha256()
    for p in paths:
        h.update(file_sha256(p).encode())
    return h.hexdigest()


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
