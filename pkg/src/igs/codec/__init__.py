"""Storage: the IGSS stream container, PLY interchange and quality metrics."""

from .metrics import PSNR_CAP, MetricsReport, dssim, psnr, ssim
from .ply import PlyFormatError, export_ply, import_ply
from .stream_format import (
    CAND,
    IGSS_MAGIC,
    IGSS_VERSION,
    KEY,
    MOVED_POINT_BYTES,
    Chunk,
    StreamFile,
    StreamFormatError,
    candidate_size,
    container_overhead,
    decode_stream,
    encode_stream,
    read_stream,
    storage_report,
    stream_from_result,
    write_stream,
)

__all__ = [
    "CAND", "IGSS_MAGIC", "IGSS_VERSION", "KEY", "MOVED_POINT_BYTES", "PSNR_CAP", "Chunk", "MetricsReport",
    "PlyFormatError", "StreamFile", "StreamFormatError", "candidate_size", "container_overhead", "decode_stream",
    "dssim", "encode_stream", "export_ply", "import_ply", "psnr", "read_stream", "ssim", "storage_report",
    "stream_from_result", "write_stream",
]
