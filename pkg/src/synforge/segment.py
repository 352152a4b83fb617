"""Simulated TCP segments and IPv4 address helpers."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass

FIN = 0x01
SYN = 0x02
RST = 0x04
ACK = 0x10

_KNOWN_FLAGS = FIN | SYN | RST | ACK
_FLAG_NAMES = ((SYN, "SYN"), (ACK, "ACK"), (RST, "RST"), (FIN, "FIN"))

MASK32 = 0xFFFFFFFF


def ip_to_int(dotted: str) -> int:
    return int(ipaddress.IPv4Address(dotted))

def int_to_ip(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


@dataclass(slots=True)
class Segment:
    src_addr: int
    src_port: int
    dst_addr: int
    dst_port: int
    flags: int
    seq: int = 0
    ack: int = 0
    payload: bytes = b""
    mss_option: int | None = None

    def __post_init__(self) -> None:
        if self.flags & ~_KNOWN_FLAGS:
            raise ValueError(f"unknown flag bits 0x{self.flags:02x}")
        if self.flags & SYN and self.flags & RST:
            raise ValueError("SYN and RST are mutually exclusive")
        if self.mss_option is not None and not self.flags & SYN:
            raise ValueError("MSS option is only valid on SYN segments")

    def flag_names(self) -> str:
        return "|".join(name for bit, name in _FLAG_NAMES if self.flags & bit) or "none"

    def describe(self) -> str:
        """Stable one-line summary used in traces."""
        parts = [
            f"{int_to_ip(self.src_addr)}:{self.src_port}",
            f"{int_to_ip(self.dst_addr)}:{self.dst_port}",
            self.flag_names(),
            f"seq={self.seq}",
            f"ack={self.ack}",
            f"len={len(self.payload)}",
        ]
        if self.mss_option is not None:
            parts.append(f"mss={self.mss_option}")
        return " ".join(parts)
