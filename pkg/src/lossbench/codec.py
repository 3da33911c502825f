"""Config-driven front door to both codecs.

The ``*_stages`` generators yield the stage names ``setup``, ``kernel``,
``serialize`` and ``teardown`` as each stage finishes and return their result
through ``StopIteration``; the bench harness times the gaps between yields.
"""

from __future__ import annotations

from typing import Iterator

from . import codec_block, codec_pred
from .datamodel import Codec, CompressedStream, CompressionConfig, Field, FormatError, Mode

STAGES = ("setup", "kernel", "serialize", "teardown")


def _with_teardown(gen) -> Iterator[str]:
    result = yield from gen
    del gen
    yield "teardown"
    return result


def compress_stages(f: Field, config: CompressionConfig, threads: int = 1,
                    block_edge: int = 6, quant_cap: int = 65536) -> Iterator[str]:
    if config.codec is Codec.PRED:
        if config.mode is Mode.ABS:
            p = codec_pred.PredParams(config.param, block_edge, quant_cap)
            gen = codec_pred.compress_stages(f, p, threads=threads)
        else:
            p = codec_pred.PredParams(1.0, block_edge, quant_cap)
            gen = codec_pred.compress_stages(f, p, mode=Mode.PW_REL, rel_bound=config.param,
                                             threads=threads)
    else:
        gen = codec_block.compress_stages(f, codec_block.BlockParams(config.param), threads=threads)
    return (yield from _with_teardown(gen))


def decompress_stages(s: CompressedStream, name: str = "decompressed",
                      threads: int = 1) -> Iterator[str]:
    if s.codec is Codec.PRED:
        gen = codec_pred.decompress_stages(s, name, threads=threads)
    elif s.codec is Codec.BLOCK:
        gen = codec_block.decompress_stages(s, name, threads=threads)
    else:
        raise FormatError(f"unknown codec {s.codec}")
    return (yield from _with_teardown(gen))


def drain(gen):
    """Run a staged generator to completion and return its result."""
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def compress(f: Field, config: CompressionConfig, threads: int = 1) -> CompressedStream:
    return drain(compress_stages(f, config, threads))


def decompress(s: CompressedStream, name: str = "decompressed", threads: int = 1) -> Field:
    return drain(decompress_stages(s, name, threads))
