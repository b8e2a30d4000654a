from .bitstream import Bitstream, parse_bitstream, serialize_bitstream
from .cdf import CdfTable, CodingTables, build_cdf_tables
from .codec import compress_image, decompress_image
from .rangecoder import RangeDecoder, RangeEncoder, decode_symbols, encode_symbols

__all__ = [
    "Bitstream",
    "CdfTable",
    "CodingTables",
    "RangeDecoder",
    "RangeEncoder",
    "build_cdf_tables",
    "compress_image",
    "decompress_image",
    "decode_symbols",
    "encode_symbols",
    "parse_bitstream",
    "serialize_bitstream",
]
