"""Exit-side stream classification from the first bytes relayed on a new stream."""

from __future__ import annotations

import re

from src.shell.contract import StreamClass
from src.wire.handshake import has_handshake_header
from src.wire.tracker import parse_query

TAP_BYTES = 512

_REQUEST_LINE = re.compile(
    rb"(GET|POST|HEAD|PUT|DELETE|OPTIONS|PATCH|CONNECT) (\S+) HTTP/1\.[01](?:\r?\n|\Z)"
)


def classify_stream(payload_prefix: bytes, dst_port: int) -> StreamClass:
    """Classify a stream. Payload rules decide; ``dst_port`` is only a tie-breaker for
    request lines cut off by the tap window on the HTTP ports."""
    prefix = payload_prefix[:TAP_BYTES]
    if has_handshake_header(prefix):
        return StreamClass.BT_HANDSHAKE
    match = _REQUEST_LINE.match(prefix)
    if match is None:
        if dst_port in (80, 8080) and re.match(rb"(GET|POST|HEAD) /", prefix):
            return StreamClass.HTTP
        return StreamClass.OTHER
    if match.group(1) == b"GET":
        params = parse_query(match.group(2))
        if "info_hash" in params and "port" in params:
            return StreamClass.TRACKER_ANNOUNCE
    return StreamClass.HTTP
