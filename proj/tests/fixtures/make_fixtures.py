"""Writes the hand-assembled MIDI fixtures used by the test suite."""
import struct
from pathlib import Path

HERE = Path(__file__).parent


def vlq(n):
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append(0x80 | (n & 0x7F))
        n >>= 7
    return bytes(reversed(out))


def track(events):
    body = b"".join(vlq(d) + e for d, e in events) + vlq(0) + b"\xff\x2f\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + body


def smf(fmt, ppq, tracks):
    return b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), ppq) + b"".join(tracks)


# C major triad (C4 E4 G4) held for one 4/4 bar at 480 ppq, format 1 with a tempo track.
tempo = track([(0, b"\xff\x51\x03\x07\xa1\x20"), (0, b"\xff\x58\x04\x04\x02\x18\x08")])
piano = track([
    (0, b"\xc0\x00"),
    (0, b"\x90\x3c\x64"), (0, b"\x40\x64"), (0, b"\x43\x64"),  # running status
    (1920, b"\x80\x3c\x40"), (0, b"\x80\x40\x40"), (0, b"\x80\x43\x40"),
])
(HERE / "c_major_bar.mid").write_bytes(smf(1, 480, [tempo, piano]))

# Two tracks: program 0 plays A4, program 40 plays a long run of E5.
violin = track([(0, b"\xc1\x28")] + [(0 if i == 0 else 120, b"\x91\x4c\x50") if i % 2 == 0 else (120, b"\x81\x4c\x00")
                                     for i in range(40)])
grand = track([(0, b"\xc0\x00"), (0, b"\x90\x45\x50"), (480, b"\x90\x45\x00")])
(HERE / "two_programs.mid").write_bytes(smf(1, 480, [grand, violin]))

# SMPTE division (negative frame rate in the high byte).
(HERE / "smpte.mid").write_bytes(b"MThd" + struct.pack(">IHHh", 6, 0, 1, -(25 << 8) | 40) + track([]))
