"""Portable binary container, model (de)serialization and CSV output.

Container layout (all integers little-endian)::

    magic    8 bytes   b"NETREG\\x00\\x01"
    count    uint32    number of records
    record:
      name_len uint16, name (utf-8)
      type     uint8    0 = float64 array, 1 = utf-8 text
      array:   ndim uint8, dims uint64 * ndim, data float64 LE row-major
      text:    len uint32, bytes

Float arrays round-trip bit-exactly.
"""
import hashlib
from io import BytesIO
import json
import struct

import numpy as np

from netreg import __version__
from netreg.nets import FeedforwardNet, Layer

MAGIC = b"NETREG\x00\x01"


def write_container(path, records):
    """Write ``{name: ndarray | str}`` to ``path``."""
    buf = BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(records)))
    for name, value in records.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        if isinstance(value, str):
            text = value.encode("utf-8")
            buf.write(struct.pack("<BI", 1, len(text)))
            buf.write(text)
        else:
            arr = np.ascontiguousarray(value, dtype="<f8")
            buf.write(struct.pack("<BB", 0, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_container(path):
    """Inverse of :func:`write_container`; raises ``ValueError`` on malformed input."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a netreg container")
    try:
        return _parse(data)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: truncated or corrupt container ({exc})") from exc


def _parse(data):
    pos = 8
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (kind,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if kind == 1:
            (tlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            out[name] = data[pos : pos + tlen].decode("utf-8")
            pos += tlen
        elif kind == 0:
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(data):
                raise struct.error("array data runs past the end")
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            out[name] = arr.astype(np.float64)
            pos += 8 * size
        else:
            raise struct.error(f"unknown record type {kind}")
    if pos != len(data):
        raise struct.error("trailing bytes")
    return out


def net_records(net, prefix=""):
    meta = []
    records = {}
    for i, layer in enumerate(net.layers):
        meta.append(
            {
                "kind": layer.kind,
                "activation": layer.activation,
                "slope": layer.slope,
                "n": layer.n,
                "bias": layer.bias is not None,
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
            }
        )
        records[f"{prefix}layer{i}.weight"] = layer.weight
        if layer.bias is not None:
            records[f"{prefix}layer{i}.bias"] = layer.bias
    records[f"{prefix}meta"] = json.dumps({"layers": meta}, sort_keys=True)
    return records


def net_from_records(records, prefix=""):
    meta = json.loads(records[f"{prefix}meta"])
    layers = []
    for i, m in enumerate(meta["layers"]):
        bias = records[f"{prefix}layer{i}.bias"] if m["bias"] else None
        layers.append(
            Layer(records[f"{prefix}layer{i}.weight"], bias, m["activation"], m["slope"], m["kind"], m["n"])
        )
    return FeedforwardNet(layers)


def save_net(path, net):
    write_container(path, net_records(net))


def load_net(path):
    return net_from_records(read_container(path))


def save_matrix(path, matrix):
    write_container(path, {"matrix": np.asarray(matrix, dtype=np.float64)})


def load_matrix(path):
    return read_container(path)["matrix"]


def fmt(value):
    """Shortest round-trip text for a float; integers and strings pass through."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def config_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_csv(path, columns, rows, config_text=""):
    """CSV with a leading ``# netreg <version> config=<hash>`` line."""
    lines = [f"# netreg {__version__} config={config_hash(config_text)}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Return ``(columns, rows)`` with numeric cells parsed as float."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    columns = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        cells = []
        for c in ln.split(","):
            try:
                cells.append(float(c))
            except ValueError:
                cells.append(c)
        rows.append(cells)
    return columns, rows
