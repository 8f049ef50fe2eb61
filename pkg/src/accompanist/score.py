"""Standard MIDI File reading/writing and the quantized score representation.

Everything downstream works on a 24-ticks-per-quarter grid (fine enough for
both triplets and 32nd notes). Parsing converts from the source PPQ by
nearest-integer rounding; velocity and tempo are discarded on read and fixed
on write.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

TICKS_PER_QUARTER = 24
MAX_DURATION_TICKS = 192  # two whole notes; longer notes are clipped

# Measure lengths representable at 24 ticks/quarter (1/4 .. 3/2 meters).
ALLOWED_MEASURE_TICKS = (24, 36, 48, 60, 72, 84, 96, 108, 120, 144)

# measure length -> (numerator, log2 denominator) for the time-signature meta
_LENGTH_TO_TIMESIG = {
    24: (1, 2), 36: (3, 3), 48: (2, 2), 60: (5, 3), 72: (3, 2),
    84: (7, 3), 96: (4, 2), 108: (9, 3), 120: (5, 2), 144: (6, 2),
}

_DEFAULT_TEMPO_BPM = 120
_WRITE_VELOCITY = 80


class SmfParseError(ValueError):
    """Malformed SMF input; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Note:
    onset_tick: int
    duration_ticks: int
    pitch: int

    def __post_init__(self):
        if self.onset_tick < 0:
            raise ValueError(f"negative onset {self.onset_tick}")
        if not 1 <= self.duration_ticks <= MAX_DURATION_TICKS:
            raise ValueError(f"duration {self.duration_ticks} outside 1..{MAX_DURATION_TICKS}")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")

    @property
    def end_tick(self) -> int:
        return self.onset_tick + self.duration_ticks


@dataclass(frozen=True)
class Track:
    """One instrument's notes; 0 = melody/voice, 1 = piano by convention."""

    instrument_id: int
    notes: tuple[Note, ...]

    def __post_init__(self):
        if self.instrument_id < 0:
            raise ValueError(f"negative instrument id {self.instrument_id}")
        keys = [(n.onset_tick, n.pitch) for n in self.notes]
        if keys != sorted(keys):
            raise ValueError("notes must be sorted by (onset_tick, pitch)")
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (onset_tick, pitch) pair")


@dataclass(frozen=True)
class Measure:
    index: int
    start_tick: int
    length_ticks: int


@dataclass(frozen=True)
class MeasureMap:
    measures: tuple[Measure, ...]

    def __post_init__(self):
        start = 0
        for i, m in enumerate(self.measures):
            if m.index != i or m.start_tick != start:
                raise ValueError(f"measure map not contiguous at index {i}")
            if m.length_ticks not in ALLOWED_MEASURE_TICKS:
                raise ValueError(f"measure length {m.length_ticks} not representable")
            start += m.length_ticks

    @classmethod
    def from_lengths(cls, lengths: Sequence[int]) -> "MeasureMap":
        measures = []
        start = 0
        for i, length in enumerate(lengths):
            measures.append(Measure(i, start, length))
            start += length
        return cls(tuple(measures))

    def __len__(self) -> int:
        return len(self.measures)

    def __getitem__(self, i: int) -> Measure:
        return self.measures[i]

    @property
    def total_ticks(self) -> int:
        if not self.measures:
            return 0
        last = self.measures[-1]
        return last.start_tick + last.length_ticks

    def measure_of_tick(self, tick: int) -> int:
        """Index of the measure containing `tick`."""
        if not 0 <= tick < self.total_ticks:
            raise ValueError(f"tick {tick} outside score span")
        lo, hi = 0, len(self.measures) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.measures[mid].start_tick <= tick:
                lo = mid
            else:
                hi = mid - 1
        return lo


@dataclass(frozen=True)
class Score:
    measure_map: MeasureMap
    tracks: tuple[Track, ...]
    ticks_per_quarter: int = TICKS_PER_QUARTER
    # parse/decode diagnostics ride along but do not affect equality
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.ticks_per_quarter != TICKS_PER_QUARTER:
            raise ValueError(f"ticks_per_quarter is fixed at {TICKS_PER_QUARTER}")
        span = self.measure_map.total_ticks
        for track in self.tracks:
            for note in track.notes:
                if note.end_tick > span:
                    raise ValueError(
                        f"note at tick {note.onset_tick} (pitch {note.pitch}) extends past "
                        f"the measure map span {span}"
                    )

    @property
    def n_measures(self) -> int:
        return len(self.measure_map)


def _round_div(numer: int, denom: int) -> int:
    """Nearest-integer division, halves away from zero (numer >= 0)."""
    return (2 * numer + denom) // (2 * denom)


def _snap_measure_length(length: int) -> int:
    return min(ALLOWED_MEASURE_TICKS, key=lambda a: (abs(a - length), -a))


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SmfParseError(f"truncated file, wanted {n} bytes", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def vlq(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise SmfParseError("variable-length quantity longer than 4 bytes", self.pos)


def _parse_track_events(chunk: bytes, chunk_offset: int):
    """Yield (tick, kind, payload) events from one MTrk chunk body.

    kinds: "on"/"off" -> (channel, pitch), "timesig" -> (numerator, denom_log2),
    "eot" -> None. Running status is honored; unknown events are skipped.
    """
    r = _Reader(chunk)
    tick = 0
    status = 0
    events = []
    while r.pos < len(chunk):
        tick += r.vlq()
        b = r.u8()
        if b == 0xFF:  # meta
            meta_type = r.u8()
            length = r.vlq()
            body = r.take(length)
            if meta_type == 0x2F:
                events.append((tick, "eot", None))
                break
            if meta_type == 0x58 and length >= 2:
                events.append((tick, "timesig", (body[0], body[1])))
            continue
        if b in (0xF0, 0xF7):  # sysex
            r.take(r.vlq())
            continue
        if b & 0x80:
            status = b
            data1 = r.u8()
        else:
            if not status & 0x80:
                raise SmfParseError("data byte with no running status", chunk_offset + r.pos)
            data1 = b
        if data1 & 0x80:
            raise SmfParseError(f"data byte 0x{data1:02x} has the status bit set", chunk_offset + r.pos)
        kind = status & 0xF0
        channel = status & 0x0F
        if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
            data2 = r.u8()
            if data2 & 0x80:
                raise SmfParseError(f"data byte 0x{data2:02x} has the status bit set", chunk_offset + r.pos)
            if kind == 0x90:
                events.append((tick, "on" if data2 > 0 else "off", (channel, data1)))
            elif kind == 0x80:
                events.append((tick, "off", (channel, data1)))
        elif kind in (0xC0, 0xD0):
            pass  # one data byte, already consumed
        else:
            raise SmfParseError(f"unexpected status byte 0x{status:02x}", chunk_offset + r.pos)
    else:
        events.append((tick, "eot", None))
    return events


def parse_smf(data: bytes, instrument_order: Sequence[int] | None = None) -> Score:
    """Parse SMF format 0/1 bytes into a quantized Score.

    Note-bearing tracks become Score tracks in file order and are assigned
    instrument ids 0, 1, ... (first = melody, second = piano) unless
    `instrument_order` overrides the assignment.
    """
    r = _Reader(data)
    if r.take(4) != b"MThd":
        raise SmfParseError("not an SMF file (missing MThd)", 0)
    header_len = r.u32()
    if header_len < 6:
        raise SmfParseError(f"bad header length {header_len}", r.pos - 4)
    fmt = r.u16()
    if fmt not in (0, 1):
        raise SmfParseError(f"unsupported SMF format {fmt}", r.pos - 2)
    n_chunks = r.u16()
    division = r.u16()
    if division & 0x8000:
        raise SmfParseError("SMPTE time division is not supported", r.pos - 2)
    if division == 0:
        raise SmfParseError("zero ticks-per-quarter", r.pos - 2)
    r.take(header_len - 6)

    warnings: list[str] = []
    timesigs: list[tuple[int, int, int]] = []  # (src_tick, numerator, denom_log2)
    raw_tracks: list[list[tuple[int, int, int]]] = []  # per track: (onset, end, pitch)
    eot_ticks: list[int] = []

    for track_no in range(n_chunks):
        if r.pos >= len(data):
            raise SmfParseError(f"expected {n_chunks} track chunks, found {track_no}", r.pos)
        tag = r.take(4)
        length = r.u32()
        chunk_offset = r.pos
        chunk = r.take(length)
        if tag != b"MTrk":
            continue  # alien chunk, skip
        events = _parse_track_events(chunk, chunk_offset)

        open_notes: dict[tuple[int, int], list[int]] = {}
        notes: list[tuple[int, int, int]] = []
        end_tick = 0
        for tick, kind, payload in events:
            end_tick = max(end_tick, tick)
            if kind == "timesig":
                timesigs.append((tick, payload[0], payload[1]))
            elif kind == "on":
                open_notes.setdefault(payload, []).append(tick)
            elif kind == "off":
                starts = open_notes.get(payload)
                if starts:
                    notes.append((starts.pop(0), tick, payload[1]))
        for (_, pitch), starts in open_notes.items():
            for start in starts:
                warnings.append(
                    f"track {track_no}: unmatched note-on (pitch {pitch}) closed at track end"
                )
                notes.append((start, end_tick, pitch))
        eot_ticks.append(end_tick)
        if notes:
            notes.sort(key=lambda n: n[0])
            raw_tracks.append(notes)

    # Quantize to the 24-tick grid.
    quantized_tracks: list[list[Note]] = []
    max_end = 0
    for notes in raw_tracks:
        seen: set[tuple[int, int]] = set()
        out: list[Note] = []
        for onset, end, pitch in notes:
            q_onset = _round_div(onset * TICKS_PER_QUARTER, division)
            q_dur = _round_div((end - onset) * TICKS_PER_QUARTER, division)
            q_dur = min(max(q_dur, 1), MAX_DURATION_TICKS)
            if (q_onset, pitch) in seen:
                warnings.append(f"duplicate note (tick {q_onset}, pitch {pitch}) dropped")
                continue
            seen.add((q_onset, pitch))
            out.append(Note(q_onset, q_dur, pitch))
            max_end = max(max_end, q_onset + q_dur)
        out.sort(key=lambda n: (n.onset_tick, n.pitch))
        quantized_tracks.append(out)

    q_sigs: dict[int, int] = {}  # quantized tick -> measure length (last wins)
    for tick, numer, denom_log2 in sorted(timesigs):
        q_tick = _round_div(tick * TICKS_PER_QUARTER, division)
        length = numer * 96 // (1 << denom_log2) if denom_log2 <= 5 else 0
        if length not in ALLOWED_MEASURE_TICKS:
            snapped = _snap_measure_length(length)
            warnings.append(f"time signature {numer}/{1 << denom_log2} snapped to {snapped} ticks")
            length = snapped
        q_sigs[q_tick] = length

    span = max(
        [max_end]
        + [_round_div(t * TICKS_PER_QUARTER, division) for t in eot_ticks]
        + [t + 1 for t in q_sigs],
        default=0,
    )

    sig_changes = sorted(q_sigs.items())
    lengths: list[int] = []
    start = 0
    current = 96
    while start < span:
        while sig_changes and sig_changes[0][0] <= start:
            current = sig_changes.pop(0)[1]
        lengths.append(current)
        start += current

    tracks = []
    for i, notes in enumerate(quantized_tracks):
        instrument = instrument_order[i] if instrument_order is not None else i
        tracks.append(Track(instrument, tuple(notes)))
    return Score(MeasureMap.from_lengths(lengths), tuple(tracks), warnings=tuple(warnings))


def _write_vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _encode_events(events: list[tuple[int, int, bytes]]) -> bytes:
    """Delta-encode (tick, sort_class, payload) events into an MTrk body."""
    events.sort(key=lambda e: (e[0], e[1]))
    out = bytearray()
    last = 0
    for tick, _, payload in events:
        out += _write_vlq(tick - last)
        out += payload
        last = tick
    return bytes(out)


def write_smf(score: Score, tempo_bpm: int = _DEFAULT_TEMPO_BPM) -> bytes:
    """Serialize a Score as SMF format 1 at PPQ 24, fixed velocity 80.

    Tempo and time-signature meta events ride on the first track chunk; a
    meta-only chunk is emitted for scores with no tracks so the measure map
    survives a round trip.
    """
    span = score.measure_map.total_ticks
    n_chunks = max(1, len(score.tracks))
    chunks = []
    for i in range(n_chunks):
        events: list[tuple[int, int, bytes]] = []
        if i == 0:
            tempo = round(60_000_000 / tempo_bpm)
            events.append((0, 1, bytes([0xFF, 0x51, 0x03]) + tempo.to_bytes(3, "big")))
            prev_len = None
            for measure in score.measure_map.measures:
                if measure.length_ticks != prev_len:
                    numer, denom_log2 = _LENGTH_TO_TIMESIG[measure.length_ticks]
                    events.append(
                        (measure.start_tick, 0,
                         bytes([0xFF, 0x58, 0x04, numer, denom_log2, 24, 8]))
                    )
                    prev_len = measure.length_ticks
        if i < len(score.tracks):
            channel = min(i if i < 9 else i + 1, 15)  # skip the percussion channel
            for note in score.tracks[i].notes:
                events.append((note.onset_tick, 3, bytes([0x90 | channel, note.pitch, _WRITE_VELOCITY])))
                events.append((note.end_tick, 2, bytes([0x80 | channel, note.pitch, 0])))
        events.append((max(span, max((t for t, _, _ in events), default=0)), 9,
                       bytes([0xFF, 0x2F, 0x00])))
        chunks.append(_encode_events(events))

    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, 1, n_chunks, TICKS_PER_QUARTER)
    for body in chunks:
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return bytes(out)


def slice_measures(score: Score, start_bar: int, end_bar: int) -> Score:
    """Extract measures [start_bar, end_bar), re-based to tick 0.

    Notes whose onset falls inside the slice are kept; notes sustaining across
    the right boundary are clipped to it.
    """
    if not 0 <= start_bar < end_bar <= score.n_measures:
        raise ValueError(
            f"bar range [{start_bar}, {end_bar}) invalid for {score.n_measures} measures"
        )
    start_tick = score.measure_map[start_bar].start_tick
    end_measure = score.measure_map[end_bar - 1]
    end_tick = end_measure.start_tick + end_measure.length_ticks

    lengths = [m.length_ticks for m in score.measure_map.measures[start_bar:end_bar]]
    tracks = []
    for track in score.tracks:
        notes = []
        for note in track.notes:
            if start_tick <= note.onset_tick < end_tick:
                duration = min(note.duration_ticks, end_tick - note.onset_tick)
                notes.append(Note(note.onset_tick - start_tick, duration, note.pitch))
        tracks.append(Track(track.instrument_id, tuple(notes)))
    return Score(MeasureMap.from_lengths(lengths), tuple(tracks))
