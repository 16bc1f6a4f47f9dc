"""Portable forensics trace engine.

Event taxonomy and trace codec, a user-space simulation of an in-kernel
recording pipeline, and the analysis passes that consume traces: process
forest reconstruction, environment-fingerprint detection, differential
trace comparison, intrusion command scanning, and an I/O overhead
benchmark.
"""

from .codec import Trace, TraceHeader, decode_line, encode_record, read_trace, write_trace
from .events import EventRecord, IoMode, op_label, validate_record
from .irp import IrpCode, parse_irp_code

__all__ = [
    "EventRecord",
    "IoMode",
    "IrpCode",
    "Trace",
    "TraceHeader",
    "decode_line",
    "encode_record",
    "op_label",
    "parse_irp_code",
    "read_trace",
    "validate_record",
    "write_trace",
]

__version__ = "0.1.0"
