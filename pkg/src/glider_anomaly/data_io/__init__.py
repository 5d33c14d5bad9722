"""File formats, configuration loading and the local tangent-plane projection."""
from .geodesy import LocalFrame, project, unproject
from .records import (
    DenseRecord,
    DenseStream,
    Series,
    SparseRecord,
    SparseStream,
    format_dense,
    format_series,
    format_sparse,
    parse_dense,
    parse_series,
    parse_sparse,
    read_dense,
    read_events,
    read_series,
    read_sparse,
    to_utc,
    write_dense,
    write_events,
    write_series,
    write_sparse,
)
