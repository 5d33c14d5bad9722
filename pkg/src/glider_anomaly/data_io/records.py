"""Line-oriented text formats for glider records and plot series.

Every file is UTF-8 CSV with a version line first::

    #version glider-anomaly/dense 1
    #epoch 2023-03-01T00:00:00Z
    # free comment
    t,x,y,heading
    0.0,0.0,0.0,1.5707963267948966

Lines starting with ``#`` are comments unless they are one of the directives a
format understands (``#epoch``, ``#origin``, ``#meta``). Blank lines are
ignored. Floats are written with ``repr`` so that reading back is bit-exact
and ``write(read(write(x)))`` reproduces the same bytes.

Formats
-------
dense
    ``t,x,y,heading`` (metres) or ``t,lat,lon,heading`` (degrees, with an
    ``#origin lat lon`` directive defining the local frame).
sparse
    one row per dive segment: ``segment_start_t,segment_end_t,start_x,start_y,
    end_x,end_y,mean_heading,f_m_u,f_m_v,samples`` (or the ``_lat``/``_lon``
    variant). ``samples`` is empty or a ``;``-separated list of
    ``t x y heading`` intra-segment samples.
series
    any header of numeric columns; the first column must be ``t``. NaN and
    infinities are allowed.
events
    ``t,utc,kind,v_l,p_e,detail``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from ..errors import DomainError, FormatError, OrderingError
from .geodesy import LocalFrame, project, unproject

TAG = "glider-anomaly"
VERSION = "1"

DENSE_XY = ("t", "x", "y", "heading")
DENSE_LL = ("t", "lat", "lon", "heading")
SPARSE_XY = ("segment_start_t", "segment_end_t", "start_x", "start_y", "end_x", "end_y",
             "mean_heading", "f_m_u", "f_m_v", "samples")
SPARSE_LL = ("segment_start_t", "segment_end_t", "start_lat", "start_lon", "end_lat", "end_lon",
             "mean_heading", "f_m_u", "f_m_v", "samples")
EVENT_COLUMNS = ("t", "utc", "kind", "v_l", "p_e", "detail")

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")
_SPECIAL = re.compile(r"[+-]?(?:nan|inf)\Z")
_DIRECTIVE = re.compile(r"#([a-z_]+)[ \t]+(.*)\Z")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class DenseRecord(NamedTuple):
    t: float
    x: float
    y: float
    heading: float


@dataclass(frozen=True)
class SparseRecord:
    segment_start_t: float
    segment_end_t: float
    start_fix: tuple
    end_fix: tuple
    mean_heading: float
    f_m: tuple
    samples: tuple = ()

    @property
    def duration(self) -> float:
        return self.segment_end_t - self.segment_start_t


@dataclass
class DenseStream:
    records: list
    epoch: str | None = None
    frame: LocalFrame | None = None  # set when the file uses lat/lon columns

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def arrays(self):
        """``(t, xy, heading)`` as numpy arrays."""
        if not self.records:
            return np.empty(0), np.empty((0, 2)), np.empty(0)
        a = np.array(self.records, dtype=float)
        return a[:, 0], a[:, 1:3], a[:, 3]


@dataclass
class SparseStream:
    records: list
    epoch: str | None = None
    frame: LocalFrame | None = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


@dataclass
class Series:
    """Named numeric columns sharing a time axis (first column ``t``)."""

    columns: dict
    epoch: str | None = None
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.columns[name]

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self):
        return tuple(self.columns)


# -- low level --------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def parse_epoch(epoch: str) -> datetime:
    try:
        dt = datetime.fromisoformat(epoch.replace("Z", "+00:00"))
    except (ValueError, AttributeError) as exc:
        raise FormatError(f"bad epoch {epoch!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def to_utc(epoch: str | None, t: float) -> str:
    """ISO-8601 UTC timestamp of ``t`` seconds after ``epoch``."""
    base = parse_epoch(epoch) if epoch else datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (base + timedelta(seconds=float(t))).strftime("%Y-%m-%dT%H:%M:%SZ")


def _float(tok: str, lineno, path, allow_special=False) -> float:
    tok = tok.strip()
    if _NUMBER.match(tok):
        v = float(tok)
        if math.isfinite(v):
            return v
    elif allow_special and _SPECIAL.match(tok):
        return float(tok)
    raise FormatError(f"malformed number {tok[:40]!r}", lineno, path)


class _Table(NamedTuple):
    directives: list  # (lineno, name, value)
    header: tuple
    rows: list  # (lineno, [fields])


def _split_table(data, kind: str, allowed: Iterable[str], path=None) -> _Table:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"not UTF-8: {exc.reason} at byte {exc.start}", None, path) from None
    allowed = set(allowed)
    lines = data.split("\n")
    version_seen = False
    header = None
    directives = []
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if "\x00" in line:
            raise FormatError("NUL byte in line", lineno, path)
        if line.startswith("#"):
            m = _DIRECTIVE.match(line)
            if not version_seen:
                if not m or m.group(1) != "version":
                    raise FormatError("first line must be a #version directive", lineno, path)
                want = f"{TAG}/{kind} {VERSION}"
                if m.group(2).strip() != want:
                    raise FormatError(f"expected '#version {want}', got {line[:60]!r}", lineno, path)
                version_seen = True
            elif m and m.group(1) in allowed:
                if header is not None:
                    raise FormatError(f"directive #{m.group(1)} after the column header", lineno, path)
                directives.append((lineno, m.group(1), m.group(2).strip()))
            continue
        if not version_seen:
            raise FormatError("first line must be a #version directive", lineno, path)
        fields = line.split(",")
        if header is None:
            header = tuple(f.strip() for f in fields)
            continue
        if len(fields) != len(header):
            raise FormatError(f"expected {len(header)} fields, found {len(fields)}", lineno, path)
        rows.append((lineno, fields))
    if not version_seen:
        raise FormatError("empty file (missing #version line)", None, path)
    return _Table(directives, header, rows)


def _header_text(kind: str, epoch=None, frame=None, meta=None) -> list:
    out = [f"#version {TAG}/{kind} {VERSION}"]
    if epoch is not None:
        out.append(f"#epoch {epoch}")
    if frame is not None:
        out.append(f"#origin {_fmt(frame.lat0)} {_fmt(frame.lon0)}")
    for k, v in (meta or {}).items():
        out.append(f"#meta {k} {v}")
    return out


def _common_directives(table: _Table, path):
    epoch = None
    frame = None
    meta = {}
    for lineno, name, value in table.directives:
        if name == "epoch":
            parse_epoch(value)
            epoch = value
        elif name == "origin":
            parts = value.split()
            if len(parts) != 2:
                raise FormatError("#origin needs 'lat lon'", lineno, path)
            lat0, lon0 = (_float(p, lineno, path) for p in parts)
            try:
                frame = LocalFrame(lat0, lon0)
            except DomainError as exc:
                raise FormatError(str(exc), lineno, path) from None
        elif name == "meta":
            key, _, val = value.partition(" ")
            if not _NAME.match(key):
                raise FormatError(f"bad #meta key {key[:40]!r}", lineno, path)
            meta[key] = val.strip()
    return epoch, frame, meta


def _to_xy(frame, lat, lon, lineno, path):
    if abs(lat) > 90 or abs(lon) > 180:
        raise FormatError(f"lat/lon out of range ({lat}, {lon})", lineno, path)
    try:
        return project(frame, lat, lon)
    except DomainError as exc:
        raise FormatError(str(exc), lineno, path) from None


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _write(path, text: str):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# -- dense ------------------------------------------------------------------

def parse_dense(data, path=None) -> DenseStream:
    table = _split_table(data, "dense", ("epoch", "origin"), path)
    epoch, frame, _ = _common_directives(table, path)
    if table.header is None or table.header == DENSE_XY:
        geo = False
    elif table.header == DENSE_LL:
        geo = True
    else:
        raise FormatError(f"unknown dense header {','.join(table.header)[:80]!r}", None, path)
    records = []
    last_t = -math.inf
    for lineno, fields in table.rows:
        t, a, b, h = (_float(f, lineno, path) for f in fields)
        if t <= last_t:
            raise OrderingError(f"time {t!r} does not increase (previous {last_t!r})", lineno, path)
        last_t = t
        if geo:
            if frame is None:
                frame = LocalFrame(a, b) if abs(a) <= 85 and abs(b) <= 180 else None
                if frame is None:
                    raise FormatError("first fix unusable as frame origin", lineno, path)
            a, b = _to_xy(frame, a, b, lineno, path)
        records.append(DenseRecord(t, a, b, h))
    return DenseStream(records, epoch=epoch, frame=frame if geo else None)


def format_dense(stream: DenseStream) -> str:
    frame = stream.frame
    lines = _header_text("dense", stream.epoch, frame)
    lines.append(",".join(DENSE_LL if frame else DENSE_XY))
    for r in stream.records:
        a, b = (r.x, r.y) if frame is None else unproject(frame, r.x, r.y)
        lines.append(",".join((_fmt(r.t), _fmt(a), _fmt(b), _fmt(r.heading))))
    return "\n".join(lines) + "\n"


def read_dense(path) -> DenseStream:
    return parse_dense(_read(path), path=path)


def write_dense(path, stream: DenseStream):
    _write(path, format_dense(stream))


# -- sparse -----------------------------------------------------------------

def _parse_samples(tok: str, geo, frame, lineno, path, t0, t1):
    tok = tok.strip()
    if not tok:
        return ()
    out = []
    last = t0
    for item in tok.split(";"):
        parts = item.split()
        if len(parts) != 4:
            raise FormatError("intra-segment sample needs 't x y heading'", lineno, path)
        t, a, b, h = (_float(p, lineno, path) for p in parts)
        if not last < t < t1:
            raise OrderingError("intra-segment sample times must increase inside the segment", lineno, path)
        last = t
        if geo:
            a, b = _to_xy(frame, a, b, lineno, path)
        out.append(DenseRecord(t, a, b, h))
    return tuple(out)


def parse_sparse(data, path=None) -> SparseStream:
    table = _split_table(data, "sparse", ("epoch", "origin"), path)
    epoch, frame, _ = _common_directives(table, path)
    if table.header is None or table.header == SPARSE_XY:
        geo = False
    elif table.header == SPARSE_LL:
        geo = True
        if frame is None:
            raise FormatError("geodetic sparse files need an #origin directive", None, path)
    else:
        raise FormatError(f"unknown sparse header {','.join(table.header)[:80]!r}", None, path)
    records = []
    last_end = -math.inf
    for lineno, fields in table.rows:
        t0, t1, a0, b0, a1, b1, hdg, fu, fv = (_float(f, lineno, path) for f in fields[:9])
        if not t0 < t1:
            raise OrderingError("segment_start_t must precede segment_end_t", lineno, path)
        if t0 < last_end:
            raise OrderingError(f"segment starting at {t0!r} overlaps the previous one", lineno, path)
        last_end = t1
        if geo:
            a0, b0 = _to_xy(frame, a0, b0, lineno, path)
            a1, b1 = _to_xy(frame, a1, b1, lineno, path)
        samples = _parse_samples(fields[9], geo, frame, lineno, path, t0, t1)
        records.append(SparseRecord(t0, t1, (a0, b0), (a1, b1), hdg, (fu, fv), samples))
    return SparseStream(records, epoch=epoch, frame=frame if geo else None)


def format_sparse(stream: SparseStream) -> str:
    frame = stream.frame
    lines = _header_text("sparse", stream.epoch, frame)
    lines.append(",".join(SPARSE_LL if frame else SPARSE_XY))

    def fix(p):
        return p if frame is None else unproject(frame, p[0], p[1])

    for r in stream.records:
        samples = ";".join(
            " ".join(_fmt(v) for v in (s.t, *fix((s.x, s.y)), s.heading)) for s in r.samples
        )
        vals = (r.segment_start_t, r.segment_end_t, *fix(r.start_fix), *fix(r.end_fix),
                r.mean_heading, *r.f_m)
        lines.append(",".join([_fmt(v) for v in vals] + [samples]))
    return "\n".join(lines) + "\n"


def read_sparse(path) -> SparseStream:
    return parse_sparse(_read(path), path=path)


def write_sparse(path, stream: SparseStream):
    _write(path, format_sparse(stream))


# -- series -----------------------------------------------------------------

def parse_series(data, path=None) -> Series:
    table = _split_table(data, "series", ("epoch", "meta"), path)
    epoch, _, meta = _common_directives(table, path)
    header = table.header or ("t",)
    if header[0] != "t" or len(set(header)) != len(header):
        raise FormatError("series header must start with 't' and have unique names", None, path)
    if not all(_NAME.match(h) for h in header):
        raise FormatError("series column names must be identifiers", None, path)
    data = np.empty((len(table.rows), len(header)))
    last_t = -math.inf
    for i, (lineno, fields) in enumerate(table.rows):
        row = [_float(f, lineno, path, allow_special=True) for f in fields]
        if not row[0] > last_t or not math.isfinite(row[0]):
            raise OrderingError(f"time {row[0]!r} does not increase", lineno, path)
        last_t = row[0]
        data[i] = row
    return Series({h: data[:, j].copy() for j, h in enumerate(header)}, epoch=epoch, meta=meta)


def format_series(series: Series) -> str:
    lines = _header_text("series", series.epoch, None, series.meta)
    names = list(series.columns)
    lines.append(",".join(names))
    cols = [np.asarray(series.columns[n], dtype=float).tolist() for n in names]
    for row in zip(*cols):
        lines.append(",".join(map(repr, row)))
    return "\n".join(lines) + "\n"


def read_series(path) -> Series:
    return parse_series(_read(path), path=path)


def write_series(path, series: Series):
    _write(path, format_series(series))


# -- events -----------------------------------------------------------------

def format_events(events, epoch=None) -> str:
    lines = _header_text("events", epoch)
    lines.append(",".join(EVENT_COLUMNS))
    for ev in events:
        detail = ev.detail.replace(",", ";").replace("\n", " ").replace("\r", " ")
        lines.append(",".join((_fmt(ev.t), to_utc(epoch, ev.t), ev.kind, _fmt(ev.v_l), _fmt(ev.p_e), detail)))
    return "\n".join(lines) + "\n"


def parse_events(data, path=None):
    from ..detector import EVENT_KINDS, DetectionEvent

    table = _split_table(data, "events", ("epoch",), path)
    epoch, _, _ = _common_directives(table, path)
    if table.header not in (None, EVENT_COLUMNS):
        raise FormatError("unknown events header", None, path)
    out = []
    for lineno, fields in table.rows:
        t = _float(fields[0], lineno, path)
        kind = fields[2].strip()
        if kind not in EVENT_KINDS:
            raise FormatError(f"unknown event kind {kind[:30]!r}", lineno, path)
        v_l = _float(fields[3], lineno, path, allow_special=True)
        p_e = _float(fields[4], lineno, path, allow_special=True)
        out.append(DetectionEvent(t, kind, v_l, p_e, fields[5]))
    return out, epoch


def read_events(path):
    return parse_events(_read(path), path=path)


def write_events(path, events, epoch=None):
    _write(path, format_events(events, epoch))
