"""Spatially directional predictive coding for block compressive sensing of grayscale images."""
from .bitstream import EncodedStream, ModePolicy, StreamHeader, estimate_rate, read_stream, write_stream
from .codec import CodecConfig, Mode, Quantizer, decode_measurements, encode
from .image_io import BlockLattice, Image, ScanOrder, from_blocks, load_pgm, to_blocks
from .recovery import RecoveryConfig, psnr, recover
from .sensing import MeasurementGrid, SensingMatrix, generate_matrix, measure, measure_image

__all__ = [
    "BlockLattice", "CodecConfig", "EncodedStream", "Image", "MeasurementGrid", "Mode", "ModePolicy",
    "Quantizer", "RecoveryConfig", "ScanOrder", "SensingMatrix", "StreamHeader", "decode_measurements",
    "encode", "estimate_rate", "from_blocks", "generate_matrix", "load_pgm", "measure", "measure_image",
    "psnr", "read_stream", "recover", "to_blocks", "write_stream",
]
__version__ = "0.1.0"
