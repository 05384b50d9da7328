"""Checkpoint persistence.

File layout, fixed little-endian regardless of host:

    bytes 0-3    magic "SMCK"
    bytes 4-7    format version, u32
    bytes 8-11   header length H, u32
    bytes 12-..  header: canonical JSON {"manifest": [...], "spec": "..."}
    then         payload: float32 arrays concatenated in manifest order
    last 4       CRC32 of the payload, u32

The header JSON and the embedded model spec are both serialized with sorted
keys and no whitespace, so identical in-memory states produce byte-identical
files on any platform.  Writes go to a temp file in the target directory and
are renamed into place, so a crash never leaves a half-written checkpoint
at the destination path.
"""

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .network import ModelSpec, Network

MAGIC = b"SMCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net, path):
    """Write the network's spec, parameters, and normalization statistics."""
    state = net.state()
    manifest = [{"key": key, "shape": list(np.asarray(value).shape)}
                for key, value in state.items()]
    header = json.dumps({"spec": net.spec.to_json(), "manifest": manifest},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(value, dtype="<f4").tobytes()
                       for value in state.values())
    blob = b"".join([
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header)),
        header,
        payload,
        struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
    ])
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def load_checkpoint(path):
    """Read a checkpoint back into a fresh Network (bit-identical state)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated checkpoint (no header)")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} "
                              f"(this build reads version {FORMAT_VERSION})")
    if len(raw) < 12 + header_len + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
        spec = ModelSpec.from_json(header["spec"])
        manifest = header["manifest"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e

    sizes = [int(np.prod(entry["shape"], dtype=np.int64)) for entry in manifest]
    payload_len = 4 * sum(sizes)
    body_end = 12 + header_len + payload_len
    if len(raw) < body_end + 4:
        raise CheckpointError(f"{path}: truncated checkpoint "
                              f"(payload needs {payload_len} bytes)")
    payload = raw[12 + header_len:body_end]
    (crc_stored,) = struct.unpack("<I", raw[body_end:body_end + 4])
    crc_actual = zlib.crc32(payload) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise CheckpointError(f"{path}: payload checksum mismatch "
                              f"(stored {crc_stored:#010x}, computed {crc_actual:#010x})")

    state = {}
    offset = 0
    for entry, size in zip(manifest, sizes):
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=offset)
        state[entry["key"]] = arr.reshape(entry["shape"]).astype(np.float32)
        offset += 4 * size
    try:
        net = Network(spec)
        net.load_state(state)
    except ValueError as e:
        raise CheckpointError(f"{path}: state does not fit the embedded spec: {e}") from e
    return net
