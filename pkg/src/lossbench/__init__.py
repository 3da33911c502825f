"""Lossy compression benchmarking and cosmology analysis toolkit."""

from .codec import compress, decompress
from .datamodel import (Codec, CompressedStream, CompressionConfig, ConfigError, DomainError,
                        Field, FormatError, Mode, ParticleSet, bitrate, compression_ratio,
                        read_field, write_field)

__version__ = "0.1.0"

__all__ = ["compress", "decompress", "Codec", "CompressedStream", "CompressionConfig",
           "ConfigError", "DomainError", "Field", "FormatError", "Mode", "ParticleSet",
           "bitrate", "compression_ratio", "read_field", "write_field"]
