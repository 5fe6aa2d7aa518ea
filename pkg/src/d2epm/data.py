"""Edge-list ingestion, snapshot aggregation, held-out splitting and file formats.

Edge lists are UTF-8 text with one ``src dst time`` event per line,
whitespace separated; ``#`` starts a comment and blank lines are ignored.
"""
import csv
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import HeldOutMask, TemporalGraph
from .model import ModelState
from .trace import TRACE_COLUMNS, TraceLog

__all__ = [
    "RawEventList",
    "load_events",
    "aggregate",
    "split",
    "save_state",
    "load_state",
    "save_graph",
    "load_graph",
    "write_trace",
    "read_trace",
    "write_predictions",
    "read_predictions",
    "write_mask",
    "read_mask",
    "STATE_MAGIC",
    "STATE_VERSION",
]

logger = logging.getLogger(__name__)

STATE_MAGIC = b"D2EPMSTA"
STATE_VERSION = 1


@dataclass
class RawEventList:
    """Parsed events with vertex ids mapped to dense indices in first-seen order."""

    src: np.ndarray
    dst: np.ndarray
    time: np.ndarray
    vertex_ids: list = field(default_factory=list)
    self_loops_dropped: int = 0

    def __len__(self):
        return len(self.time)

    @property
    def n_vertices(self):
        return len(self.vertex_ids)

    def encode(self, vid):
        return self.vertex_ids.index(vid)

    def decode(self, index):
        return self.vertex_ids[index]


def _parse_time(tok, lineno):
    try:
        value = int(tok)
    except ValueError:
        try:
            value = float(tok)
        except ValueError:
            raise ValueError(f"line {lineno}: bad timestamp {tok!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"line {lineno}: timestamp must be finite")
    return value


def load_events(path):
    index = {}
    src, dst, times = [], [], []
    loops = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'src dst time', got {len(parts)} fields")
            a, b, tok = parts
            time = _parse_time(tok, lineno)
            if a == b:
                loops += 1
                continue
            for v in (a, b):
                if v not in index:
                    index[v] = len(index)
            src.append(index[a])
            dst.append(index[b])
            times.append(time)
    if loops:
        logger.warning("dropped %d self-loop event(s) from %s", loops, path)
    if not times:
        raise ValueError(f"{path}: no events")
    return RawEventList(np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                        np.array(times), list(index), loops)


def aggregate(events, window):
    """Binary snapshots with t = floor((time - t_min) / window)."""
    if not window > 0:
        raise ValueError("window must be positive")
    if len(events) == 0:
        raise ValueError("no events to aggregate")
    times = np.asarray(events.time, dtype=float)
    t = np.floor((times - times.min()) / window).astype(np.int64)
    T = int(t.max()) + 1
    cells = np.column_stack([t, events.src, events.dst])
    i = np.minimum(cells[:, 1], cells[:, 2])
    j = np.maximum(cells[:, 1], cells[:, 2])
    return TemporalGraph.from_cells(events.n_vertices, T, np.column_stack([t, i, j]))


def split(graph, fraction, rng, seed=None):
    """Hold out round(fraction * grid) cells drawn uniformly from the (t, i < j) grid.

    Returns the training graph (held-out links removed) and the mask with
    the held-out cells' true labels.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    N, T = graph.N, graph.T
    pairs = N * (N - 1) // 2
    grid = T * pairs
    n = int(round(fraction * grid))
    if n == 0:
        return graph, HeldOutMask.empty(N)
    flat = rng.choice(grid, size=n, replace=False)
    t = flat // pairs
    rows, cols = np.triu_indices(N, k=1)
    i, j = rows[flat % pairs], cols[flat % pairs]
    entries = np.column_stack([t, i, j])
    mask_keys = (t * N + i) * N + j
    edge_keys = graph.keys()
    labels = np.isin(mask_keys, edge_keys).astype(np.int8)
    keep = ~np.isin(edge_keys, mask_keys)
    if not keep.any():
        raise ValueError("held-out mask leaves no training links")
    train = TemporalGraph.from_cells(N, T, graph.cells()[keep])
    return train, HeldOutMask(entries, labels, N, fraction, seed)


# -- binary state container --------------------------------------------------

_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def _pack_section(name, arr):
    arr = np.asarray(arr)
    code = "f8" if arr.dtype.kind == "f" else "i8"
    data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    nb = name.encode("utf-8")
    head = struct.pack("<I", len(nb)) + nb + code.encode() + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    body = data.tobytes()
    return head + struct.pack("<Q", len(body)) + body


def save_state(state, path, extra=None):
    """Write a ModelState (plus optional named arrays) to a versioned binary file."""
    sections = {"phi": state.phi, "lam": state.lam, "p": state.p, "eta": np.array([state.eta])}
    for k, v in (extra or {}).items():
        if k in sections:
            raise ValueError(f"section name {k!r} is reserved")
        sections[k] = v
    blob = STATE_MAGIC + struct.pack("<II", STATE_VERSION, len(sections))
    blob += b"".join(_pack_section(k, v) for k, v in sections.items())
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated state file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_state(path, with_extra=False):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    if r.take(len(STATE_MAGIC)) != STATE_MAGIC:
        raise ValueError(f"{path}: not a state file (bad magic)")
    version, count = r.unpack("<II")
    if version != STATE_VERSION:
        raise ValueError(f"{path}: unsupported state version {version}")
    sections = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        code = r.take(2).decode()
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code!r}")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        arr = np.frombuffer(r.take(nbytes), dtype=_DTYPES[code])
        sections[name] = arr.reshape(shape).astype(_DTYPES[code].newbyteorder("="))
    if r.pos != len(buf):
        raise ValueError(f"{path}: trailing bytes after last section")
    try:
        state = ModelState(sections.pop("phi"), sections.pop("lam"), sections.pop("p"),
                           float(sections.pop("eta")[0]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing section {exc}") from None
    return (state, sections) if with_extra else state


# -- text formats -------------------------------------------------------------

def save_graph(graph, path):
    """Snapshot edge list: header ``# N T`` then ``i j t`` per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# N={graph.N} T={graph.T}\n")
        for t, i, j in graph.cells():
            fh.write(f"{i} {j} {t}\n")


def load_graph(path):
    """Read a file written by :func:`save_graph` (indices, not vertex names)."""
    N = T = None
    cells = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if s.startswith("#"):
                fields = dict(kv.split("=", 1) for kv in s[1:].split() if "=" in kv)
                if "N" in fields:
                    N, T = int(fields["N"]), int(fields["T"])
                continue
            if not s:
                continue
            parts = s.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'i j t'")
            i, j, t = (int(x) for x in parts)
            cells.append((t, i, j))
    if N is None:
        raise ValueError(f"{path}: missing '# N=.. T=..' header")
    cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
    if len(cells):
        cells[:, 1:] = np.sort(cells[:, 1:], axis=1)
    return TemporalGraph.from_cells(N, T, cells)


def write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in TRACE_COLUMNS])


def read_trace(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        trace = TraceLog()
        for row in r:
            vals = dict(zip(header, row))
            trace.append(**{c: (int(vals[c]) if c in ("iter", "active_k") else float(vals[c]))
                            for c in TRACE_COLUMNS})
    return trace


def write_predictions(entries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "i", "j", "prob", "label"))
        for e in entries:
            w.writerow((e.t, e.i, e.j, repr(float(e.score)), e.label))


def read_predictions(path):
    from .evaluation import ScoredEntry

    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames is None or list(r.fieldnames) != ["t", "i", "j", "prob", "label"]:
            raise ValueError(f"{path}: expected header t,i,j,prob,label")
        return [ScoredEntry(int(d["t"]), int(d["i"]), int(d["j"]), float(d["prob"]), int(d["label"]))
                for d in r]


def write_mask(mask, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# N={mask.N} fraction={mask.fraction!r} seed={mask.seed}\n")
        w = csv.writer(fh)
        w.writerow(("t", "i", "j", "label"))
        for (t, i, j), l in zip(mask.entries, mask.labels):
            w.writerow((t, i, j, l))


def read_mask(path):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing mask header")
        meta = dict(kv.split("=", 1) for kv in first[1:].split())
        r = csv.DictReader(fh)
        rows = [(int(d["t"]), int(d["i"]), int(d["j"]), int(d["label"])) for d in r]
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    return HeldOutMask(arr[:, :3], arr[:, 3], int(meta["N"]), float(meta.get("fraction", 0.0)), seed)
