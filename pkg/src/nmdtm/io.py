"""Readers and writers for the on-disk formats used by the experiments.

Every reader either returns a complete, finite matrix or raises a
:class:`DataFormatError` that says where in the file the problem is.
"""
import csv
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
# refuse headers that would describe more than this many payload bytes
IDX_MAX_BYTES = 1 << 34

TRACE_HEADER = ("k", "seconds", "rel_error", "objective")


class DataFormatError(ValueError):
    """Malformed input file.

    ``position`` is a byte offset for binary formats and a 1-based line
    number for text formats.
    """

    def __init__(self, msg, path=None, position=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if position is not None:
                where += f":{position}"
            where += ": "
        super().__init__(where + msg)
        self.path = path
        self.position = position


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class DimensionOverflowError(DataFormatError):
    pass


def _read_idx_payload(path, magic, ndim_min):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError("file shorter than the IDX magic number", path, len(raw))
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagicError(f"bad IDX magic 0x{got:08x}, expected 0x{magic:08x}", path, 0)
    ndim = got & 0xFF
    if ndim < ndim_min:
        raise BadMagicError(f"IDX file has {ndim} dimensions", path, 3)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError("truncated IDX dimension header", path, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = math.prod(dims)
    if total > IDX_MAX_BYTES:
        raise DimensionOverflowError(f"IDX dimensions {dims} describe {total} bytes", path, 4)
    if len(raw) < header + total:
        raise TruncatedFileError(
            f"IDX payload has {len(raw) - header} bytes, header declares {total}",
            path, len(raw))
    if len(raw) > header + total:
        raise DataFormatError(f"{len(raw) - header - total} trailing bytes after IDX payload",
                              path, header + total)
    return dims, np.frombuffer(raw, dtype=np.uint8, count=total, offset=header)


def read_idx(path, normalization="unit_scale"):
    """Read an IDX3 image file into an ``(n_images, rows*cols)`` matrix.

    Each image is flattened row-major. With ``normalization="unit_scale"``
    pixel bytes are divided by 255; ``"raw"`` keeps them as 0..255.
    """
    if normalization not in ("unit_scale", "raw"):
        raise ValueError(f"unknown normalization {normalization!r}")
    dims, data = _read_idx_payload(path, IDX_IMAGES_MAGIC, 3)
    n = dims[0]
    out = np.asfortranarray(data.reshape(n, math.prod(dims[1:])).astype(np.float64))
    if normalization == "unit_scale":
        out /= 255.0
    return out


def read_idx_labels(path):
    """Read an IDX1 label file into an int array."""
    _, data = _read_idx_payload(path, IDX_LABELS_MAGIC, 1)
    return data.astype(np.int64)


def subset_per_class(m, labels, per_class, offset=0):
    """Keep the first `per_class` rows of every label, labels in ascending order.

    Row order within a class is preserved. `offset` skips that many rows of
    each class first, which gives disjoint subsets of the same size.
    """
    m = np.asarray(m)
    labels = np.asarray(labels)
    if labels.shape != (m.shape[0],):
        raise ValueError(f"{labels.shape[0]} labels for {m.shape[0]} rows")
    if per_class < 0 or offset < 0:
        raise ValueError("per_class and offset must be nonnegative")
    picks = []
    for label in np.unique(labels):
        rows = np.flatnonzero(labels == label)
        if len(rows) < offset + per_class:
            raise ValueError(f"class {label} has {len(rows)} samples, "
                             f"{offset + per_class} needed")
        picks.append(rows[offset:offset + per_class])
    idx = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
    return np.asfortranarray(m[idx])


def _parse_float(tok, path, line):
    try:
        val = float(tok)
    except ValueError:
        raise DataFormatError(f"not a number: {tok!r}", path, line) from None
    if not math.isfinite(val):
        raise DataFormatError(f"non-finite value {tok!r}", path, line)
    return val


def read_matrix_market(path):
    """Read a real (or integer) general MatrixMarket file, array or coordinate."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty file", path, 1)
    head = lines[0].split()
    if len(head) != 5 or head[0].lower() != "%%matrixmarket" or head[1].lower() != "matrix":
        raise DataFormatError(f"malformed MatrixMarket header {lines[0]!r}", path, 1)
    layout, field, symmetry = (h.lower() for h in head[2:])
    if layout not in ("array", "coordinate"):
        raise DataFormatError(f"unsupported layout {layout!r}", path, 1)
    if field not in ("real", "integer", "double"):
        raise DataFormatError(f"unsupported field {field!r}", path, 1)
    if symmetry != "general":
        raise DataFormatError(f"unsupported symmetry {symmetry!r}", path, 1)

    body = [(no, ln) for no, ln in enumerate(lines[1:], start=2)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise DataFormatError("missing size line", path, len(lines))
    size_no, size_line = body[0]
    try:
        sizes = [int(t) for t in size_line.split()]
    except ValueError:
        raise DataFormatError(f"malformed size line {size_line!r}", path, size_no) from None
    entries = body[1:]

    if layout == "array":
        if len(sizes) != 2 or min(sizes) < 0:
            raise DataFormatError(f"array size line needs 'rows cols', got {size_line!r}",
                                  path, size_no)
        rows, cols = sizes
        if len(entries) != rows * cols:
            no = entries[-1][0] if entries else size_no
            raise DataFormatError(f"expected {rows * cols} values, found {len(entries)}",
                                  path, no)
        vals = []
        for no, ln in entries:
            toks = ln.split()
            if len(toks) != 1:
                raise DataFormatError(f"expected one value, got {ln!r}", path, no)
            vals.append(_parse_float(toks[0], path, no))
        return np.asfortranarray(np.array(vals, dtype=np.float64).reshape((rows, cols), order="F"))

    if len(sizes) != 3 or min(sizes) < 0:
        raise DataFormatError(f"coordinate size line needs 'rows cols nnz', got {size_line!r}",
                              path, size_no)
    rows, cols, nnz = sizes
    if len(entries) != nnz:
        no = entries[-1][0] if entries else size_no
        raise DataFormatError(f"expected {nnz} entries, found {len(entries)}", path, no)
    out = np.zeros((rows, cols), order="F")
    for no, ln in entries:
        toks = ln.split()
        if len(toks) != 3:
            raise DataFormatError(f"expected 'i j value', got {ln!r}", path, no)
        try:
            i, j = int(toks[0]), int(toks[1])
        except ValueError:
            raise DataFormatError(f"bad indices in {ln!r}", path, no) from None
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise DataFormatError(f"index ({i}, {j}) outside {rows}x{cols}", path, no)
        out[i - 1, j - 1] = _parse_float(toks[2], path, no)
    return out


def write_matrix_market(path, m, layout="array"):
    """Write `m` as MatrixMarket with 17 significant digits."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = m.shape
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix {layout} real general\n")
        if layout == "array":
            fh.write(f"{rows} {cols}\n")
            for val in m.ravel(order="F"):
                fh.write(f"{val:.17g}\n")
        elif layout == "coordinate":
            jj, ii = np.nonzero(m.T)
            fh.write(f"{rows} {cols} {len(ii)}\n")
            for i, j in zip(ii, jj):
                fh.write(f"{i + 1} {j + 1} {m[i, j]:.17g}\n")
        else:
            raise ValueError(f"unknown layout {layout!r}")


def read_csv(path, skip_header=False):
    """Read a headerless, comma-separated numeric matrix."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for line_no, rec in enumerate(csv.reader(fh), start=1):
            if skip_header and line_no == 1:
                continue
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise DataFormatError(f"ragged row: {len(rec)} fields, expected {width}",
                                      path, line_no)
            row = []
            for col_no, tok in enumerate(rec, start=1):
                try:
                    val = float(tok)
                except ValueError:
                    val = math.nan
                if not math.isfinite(val):
                    raise DataFormatError(f"column {col_no}: bad value {tok!r}",
                                          path, line_no)
                row.append(val)
            rows.append(row)
    if not rows:
        raise DataFormatError("no data rows", path, 1)
    return np.asfortranarray(np.array(rows, dtype=np.float64))


def write_csv(path, m):
    m = np.asarray(m, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        for row in m:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_trace_csv(path, trace):
    """Write a convergence trace as ``k,seconds,rel_error,objective``."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        for rec in trace:
            fh.write(f"{rec.k},{rec.seconds:.6f},{rec.rel_error:.12g},{rec.objective:.12g}\n")


def read_trace_csv(path):
    """Read a trace CSV back as a dict of numpy columns.

    The four standard columns are required; any extra columns are kept.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty trace file", path, 1) from None
        missing = [h for h in TRACE_HEADER if h not in header]
        if missing:
            raise DataFormatError(f"trace header lacks {missing}", path, 1)
        cols = {h: [] for h in header}
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataFormatError(f"{len(rec)} fields, expected {len(header)}",
                                      path, line_no)
            for h, tok in zip(header, rec):
                cols[h].append(_parse_float(tok, path, line_no))
    return {h: np.array(v, dtype=np.float64) for h, v in cols.items()}


def write_pgm(path, image):
    """Write an 8-bit grayscale image as binary PGM (P5, maxval 255)."""
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a nonempty 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255 or not np.all(img == np.round(img)):
            raise ValueError("image values must be integers in [0, 255]")
        img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


FORMATS = ("idx", "mtx", "csv")


@dataclass(frozen=True)
class DatasetHandle:
    """Where a data matrix lives and how to turn it into ``M``.

    ``orientation="samples_as_cols"`` transposes what the reader returns
    (readers return samples as rows).
    """

    path: str
    format: str
    orientation: str = "samples_as_rows"
    normalization: str = "unit_scale"

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}")
        if self.orientation not in ("samples_as_rows", "samples_as_cols"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.normalization not in ("raw", "unit_scale"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def sniff_format(path):
    """Guess a file's format from magic bytes, falling back to the extension."""
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head.startswith(b"%%MatrixMarket"):
        return "mtx"
    if len(head) >= 4 and head[:3] == b"\x00\x00\x08":
        return "idx"
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mtx":
        return "mtx"
    if "ubyte" in os.path.basename(path) or ext == ".idx":
        return "idx"
    return "csv"


def load_matrix(handle):
    fmt = sniff_format(handle.path)
    if fmt != handle.format:
        raise DataFormatError(f"declared format {handle.format!r} but file looks like {fmt!r}",
                              handle.path, 0)
    if fmt == "idx":
        m = read_idx(handle.path, handle.normalization)
    elif fmt == "mtx":
        m = read_matrix_market(handle.path)
    else:
        m = read_csv(handle.path)
    if handle.orientation == "samples_as_cols":
        m = np.asfortranarray(m.T)
    return m
