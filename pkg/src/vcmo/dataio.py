"""File formats: CSV tables, one-port Touchstone, and atomic writes."""

from __future__ import annotations

import contextlib
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError
from .fitting import AdmittanceDataset

FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
FORMATS = ("ma", "db", "ri")


def format_value(v) -> str:
    """Deterministic full-precision text for one CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if v is None:
        return ""
    return str(v)


@contextlib.contextmanager
def atomic_open(path, mode: str = "w", encoding: str | None = "utf-8"):
    """Write to a temp file beside ``path`` and rename it into place on success.

    If the body raises, the temp file is removed and ``path`` is untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        kwargs = {"newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, encoding=None if "b" in mode else encoding, **kwargs) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()):
    """Atomically write a CSV: optional ``#`` comment lines, one header, data rows."""
    with atomic_open(path) as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string rows of a CSV written by :func:`write_csv`."""
    header = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            cells = [c.strip() for c in s.split(",")]
            if header is None:
                header = cells
            else:
                rows.append(cells)
    if header is None:
        raise DataFormatError(f"{path}: no header line")
    return header, rows


def write_admittance_csv(path, d: AdmittanceDataset):
    write_csv(path, ("f_Hz", "re_Y_S", "im_Y_S"),
              ((f, y.real, y.imag) for f, y in zip(d.f, d.y)),
              comments=[f"source: {d.source}"] if d.source else ())


def _read_admittance_csv(path) -> tuple[np.ndarray, np.ndarray]:
    f, y = [], []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            cells = [c.strip() for c in s.split(",")]
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                if not f:  # header line
                    continue
                raise DataFormatError(f"non-numeric value in {cells!r}", line=n) from None
            if len(vals) != 3:
                raise DataFormatError(f"expected 3 columns (f_Hz, re_Y, im_Y), got {len(vals)}", line=n)
            f.append(vals[0])
            y.append(complex(vals[1], vals[2]))
    return _checked(np.array(f), np.array(y, dtype=complex), path)


def _checked(f, y, path):
    if f.size and np.any(np.diff(f) <= 0.0):
        k = int(np.flatnonzero(np.diff(f) <= 0.0)[0]) + 2
        raise DataFormatError(f"{path}: frequencies not strictly ascending at data row {k}")
    return f, y


@dataclass
class TouchstoneOnePort:
    """Parsed one-port Touchstone file (frequencies in Hz, values complex)."""

    freq_unit: str = "ghz"
    parameter: str = "s"
    fmt: str = "ma"
    z0: float = 50.0
    f: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    rows: list[int] = field(default_factory=list)  # source line numbers


def _pair_to_complex(a: float, b: float, fmt: str) -> complex:
    if fmt == "ri":
        return complex(a, b)
    mag = a if fmt == "ma" else 10.0 ** (a / 20.0)
    ang = math.radians(b)
    return complex(mag * math.cos(ang), mag * math.sin(ang))


def parse_touchstone(text: str, name: str = "<touchstone>") -> TouchstoneOnePort:
    """Parse the one-port subset: ``!`` comments, one ``#`` option line, data rows."""
    ts = TouchstoneOnePort()
    seen_option = False
    f, v, rows = [], [], []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            if seen_option:
                raise DataFormatError("more than one option line", line=n)
            if f:
                raise DataFormatError("option line must precede data", line=n)
            seen_option = True
            toks = line[1:].lower().split()
            i = 0
            while i < len(toks):
                t = toks[i]
                if t in FREQ_UNITS:
                    ts.freq_unit = t
                elif t in ("s", "y", "z", "h", "g"):
                    if t not in ("s", "y"):
                        raise DataFormatError(f"parameter type {t.upper()} not supported", line=n)
                    ts.parameter = t
                elif t in FORMATS:
                    ts.fmt = t
                elif t == "r":
                    if i + 1 >= len(toks):
                        raise DataFormatError("R without reference impedance", line=n)
                    try:
                        ts.z0 = float(toks[i + 1])
                    except ValueError:
                        raise DataFormatError(f"bad reference impedance {toks[i + 1]!r}", line=n) from None
                    if not ts.z0 > 0.0:
                        raise DataFormatError("reference impedance must be positive", line=n)
                    i += 1
                else:
                    raise DataFormatError(f"unknown option {t!r}", line=n)
                i += 1
            continue
        toks = line.split()
        if len(toks) != 3:
            raise DataFormatError(f"one-port data row needs 3 values, got {len(toks)}", line=n)
        try:
            a, b, c = (float(t) for t in toks)
        except ValueError:
            raise DataFormatError(f"non-numeric data {line!r}", line=n) from None
        f.append(a * FREQ_UNITS[ts.freq_unit])
        v.append(_pair_to_complex(b, c, ts.fmt))
        rows.append(n)
    ts.f = np.array(f, dtype=float)
    ts.values = np.array(v, dtype=complex)
    ts.rows = rows
    if ts.f.size and np.any(np.diff(ts.f) <= 0.0):
        k = int(np.flatnonzero(np.diff(ts.f) <= 0.0)[0]) + 1
        raise DataFormatError(f"{name}: frequencies not strictly ascending", line=rows[k])
    return ts


def touchstone_admittance(ts: TouchstoneOnePort) -> np.ndarray:
    """Admittance in S. S data: Y = (1 - S)/(Z0 (1 + S)); Y data is normalised to 1/Z0."""
    if ts.parameter == "y":
        return ts.values / ts.z0
    s = ts.values
    bad = np.flatnonzero(np.abs(1.0 + s) < 1e-15)
    if bad.size:
        raise DataFormatError("S = -1 (short circuit) cannot be converted to admittance",
                              line=ts.rows[int(bad[0])])
    return (1.0 - s) / (ts.z0 * (1.0 + s))


def write_touchstone(path, d: AdmittanceDataset, parameter: str = "s", fmt: str = "ri",
                     z0: float = 50.0, freq_unit: str = "hz"):
    """One-port Touchstone export of an admittance dataset."""
    parameter, fmt, freq_unit = parameter.lower(), fmt.lower(), freq_unit.lower()
    scale = FREQ_UNITS[freq_unit]
    if parameter == "s":
        vals = (1.0 - z0 * d.y) / (1.0 + z0 * d.y)
    elif parameter == "y":
        vals = d.y * z0
    else:
        raise DataFormatError(f"parameter {parameter!r} not supported")
    with atomic_open(path) as fh:
        if d.source:
            fh.write(f"! source: {d.source}\n")
        fh.write(f"# {freq_unit.upper()} {parameter.upper()} {fmt.upper()} R {format_value(float(z0))}\n")
        for f, v in zip(d.f, vals):
            if fmt == "ri":
                a, b = v.real, v.imag
            elif fmt == "ma":
                a, b = abs(v), math.degrees(np.angle(v))
            else:
                a, b = 20.0 * math.log10(abs(v)), math.degrees(np.angle(v))
            fh.write(f"{format_value(f / scale)} {format_value(float(a))} {format_value(float(b))}\n")


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".s1p", ".y1p", ".ts"):
        return "touchstone"
    return "csv"


def load_admittance(path, format_hint: str | None = None) -> AdmittanceDataset:
    """Read a CSV (f_Hz, re_Y, im_Y) or one-port Touchstone file as admittance.

    Raises:
        DataFormatError: malformed rows, non-ascending frequencies, or S = -1.
        DomainError: fewer than 16 points.
    """
    kind = (format_hint or guess_format(path)).lower()
    if kind == "csv":
        f, y = _read_admittance_csv(path)
    elif kind in ("touchstone", "s1p", "ts"):
        with open(path, encoding="utf-8") as fh:
            ts = parse_touchstone(fh.read(), str(path))
        f, y = ts.f, touchstone_admittance(ts)
    else:
        raise DataFormatError(f"unknown format hint {format_hint!r}; use 'csv' or 'touchstone'")
    return AdmittanceDataset(f, y, source=str(path))
