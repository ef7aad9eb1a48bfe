"""ETH/UCY-style pedestrian tracks resampled into fixed-length windows.

Input files are whitespace tables with one observation per line. By default
columns are `frame ped_id x y` and frames advance at 25 fps, the usual
annotation rate of these datasets (10 frames = 0.4 s).
"""
import hashlib
import io
import json
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from coopforecast.errors import EmptyFile, InputError, ParseError

DEFAULT_FPS = 25.0
DEFAULT_COLUMNS = (0, 1, 2, 3)
CACHE_MAGIC = b"COOPWIN\x00"
CACHE_VERSION = 1


class DuplicateRecordWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RawRecord:
    frame: int
    ped: int
    x: float
    y: float


def _as_int(token, what, lineno, path):
    v = float(token)
    if v != int(v):
        raise ParseError(f"{what} must be integral, got {token!r}", line=lineno, path=path)
    return int(v)


def load_raw(path, columns=DEFAULT_COLUMNS):
    """Parse a whitespace table into records sorted by (pedestrian, frame).

    `columns` gives the zero-based positions of frame, id, x and y. When a
    (frame, id) pair repeats, the later line wins and a
    DuplicateRecordWarning is emitted.
    """
    if not os.path.exists(path):
        raise ParseError("file does not exist", path=path)
    fi, pi, xi, yi = columns
    need = max(columns) + 1
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) < need:
                raise ParseError(f"expected at least {need} columns", line=lineno, path=path)
            try:
                frame = _as_int(tokens[fi], "frame", lineno, path)
                ped = _as_int(tokens[pi], "pedestrian id", lineno, path)
                x, y = float(tokens[xi]), float(tokens[yi])
            except ValueError:
                raise ParseError(f"non-numeric cell in {line.strip()!r}", line=lineno, path=path) from None
            if frame < 0:
                raise ParseError("frame must be non-negative", line=lineno, path=path)
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ParseError("non-finite coordinate", line=lineno, path=path)
            key = (ped, frame)
            if key in table:
                warnings.warn(
                    f"{path}:{lineno}: duplicate (frame={frame}, ped={ped}); keeping the later row",
                    DuplicateRecordWarning,
                    stacklevel=2,
                )
            table[key] = RawRecord(frame, ped, x, y)
    if not table:
        raise EmptyFile(f"{path}: no records")
    return [table[k] for k in sorted(table)]


def group_tracks(records):
    """{ped: (frames, xy)} with frames strictly increasing."""
    tracks = {}
    for r in sorted(records, key=lambda r: (r.ped, r.frame)):
        tracks.setdefault(r.ped, []).append(r)
    out = {}
    for ped, rs in tracks.items():
        frames = np.array([r.frame for r in rs], dtype=float)
        xy = np.array([[r.x, r.y] for r in rs], dtype=float)
        out[ped] = (frames, xy)
    return out


def resample_track(times, xy, dt):
    """Linear interpolation onto t0 + k dt; velocities by central differences."""
    n = int(np.floor((times[-1] - times[0]) / dt + 1e-9)) + 1
    grid = times[0] + dt * np.arange(n)
    pos = np.column_stack([np.interp(grid, times, xy[:, 0]), np.interp(grid, times, xy[:, 1])])
    if n < 2:
        vel = np.zeros_like(pos)
    else:
        vel = np.gradient(pos, dt, axis=0)
    return grid, np.hstack([pos, vel])


@dataclass(frozen=True)
class WindowedDataset:
    """Windows of shape (M, past + future, 4) holding [x, y, u, v]."""

    windows: np.ndarray
    ped_ids: np.ndarray
    source: str = ""
    dt: float = 0.4
    past: int = 8
    future: int = 12
    skipped: int = 0
    provenance: tuple = field(default_factory=tuple)

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=float)
        if w.ndim != 3 or w.shape[1] != self.past + self.future or w.shape[2] != 4:
            raise InputError(f"windows must have shape (M, {self.past + self.future}, 4)")
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "ped_ids", np.asarray(self.ped_ids, dtype=np.int64))

    def __len__(self):
        return len(self.windows)

    @property
    def past_states(self):
        return self.windows[:, : self.past]

    @property
    def future_positions(self):
        return self.windows[:, self.past :, :2]

    @property
    def stats(self):
        """Per-feature mean and std over every sample of every window."""
        flat = self.windows.reshape(-1, 4)
        return flat.mean(axis=0), flat.std(axis=0)

    def subset(self, index):
        return WindowedDataset(self.windows[index], self.ped_ids[index], self.source, self.dt,
                               self.past, self.future, 0, self.provenance)


def window(records, dt=0.4, past=8, future=12, stride=1, fps=DEFAULT_FPS, source=""):
    """Cut every pedestrian's resampled track into overlapping windows.

    Tracks shorter than past + future samples after resampling are skipped
    and counted in `skipped`.
    """
    if stride < 1:
        raise InputError("stride must be >= 1")
    length = past + future
    windows, ids, skipped = [], [], 0
    for ped, (frames, xy) in group_tracks(records).items():
        _, states = resample_track(frames / fps, xy, dt)
        if len(states) < length:
            skipped += 1
            continue
        for s in range(0, len(states) - length + 1, stride):
            windows.append(states[s : s + length])
            ids.append(ped)
    arr = np.array(windows).reshape(-1, length, 4)
    return WindowedDataset(arr, np.array(ids, dtype=np.int64), source, dt, past, future, skipped)


def split(dataset, test_fraction, seed=0):
    """Partition by pedestrian id so that no track leaks across the split."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError("test_fraction must lie in (0, 1)")
    peds = np.unique(dataset.ped_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(peds)
    n_test = int(round(test_fraction * len(peds)))
    if len(peds) >= 2:
        n_test = min(max(n_test, 1), len(peds) - 1)
    test_ids = np.sort(order[:n_test])
    in_test = np.isin(dataset.ped_ids, test_ids)
    return dataset.subset(~in_test), dataset.subset(in_test)


def concat(datasets, source=""):
    """Merge datasets, offsetting pedestrian ids so they stay unique."""
    windows, ids, offset, skipped, prov = [], [], 0, 0, []
    for d in datasets:
        windows.append(d.windows)
        ids.append(d.ped_ids + offset)
        offset += int(d.ped_ids.max()) + 1 if len(d) else 0
        skipped += d.skipped
        prov.extend(d.provenance)
    first = datasets[0]
    return WindowedDataset(np.concatenate(windows), np.concatenate(ids), source, first.dt,
                           first.past, first.future, skipped, tuple(prov))


# cache ----------------------------------------------------------------------


def _payload(dataset):
    return (
        np.ascontiguousarray(dataset.windows, dtype="<f8").tobytes()
        + np.ascontiguousarray(dataset.ped_ids, dtype="<i8").tobytes()
    )


def cache_bytes(dataset):
    payload = _payload(dataset)
    header = {
        "n": len(dataset),
        "shape": list(dataset.windows.shape),
        "source": dataset.source,
        "dt": dataset.dt,
        "past": dataset.past,
        "future": dataset.future,
        "skipped": dataset.skipped,
        "provenance": list(dataset.provenance),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return CACHE_MAGIC + struct.pack("<II", CACHE_VERSION, len(hb)) + hb + payload


def save_cache(dataset, path):
    atomic_write_bytes(path, cache_bytes(dataset))


def load_cache(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read cache: {exc}", path=path) from exc
    if blob[:8] != CACHE_MAGIC:
        raise ParseError("not a window cache (bad magic)", path=path)
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CACHE_VERSION:
        raise ParseError(f"unsupported cache version {version}", path=path)
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    payload = blob[16 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ParseError("cache checksum mismatch", path=path)
    m, length, _ = header["shape"]
    nw = m * length * 4 * 8
    windows = np.frombuffer(payload[:nw], dtype="<f8").reshape(m, length, 4).copy()
    ids = np.frombuffer(payload[nw:], dtype="<i8").copy()
    return WindowedDataset(windows, ids, header["source"], header["dt"], header["past"],
                           header["future"], header["skipped"], tuple(header["provenance"]))


def atomic_write_bytes(path, data):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def records_to_text(records):
    buf = io.StringIO()
    for r in records:
        buf.write(f"{r.frame}\t{r.ped}\t{r.x:.6f}\t{r.y:.6f}\n")
    return buf.getvalue()
