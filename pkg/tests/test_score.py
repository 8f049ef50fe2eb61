import random
import struct

import pytest

from accompanist.score import (
    ALLOWED_MEASURE_TICKS,
    MeasureMap,
    Note,
    Score,
    SmfParseError,
    Track,
    parse_smf,
    slice_measures,
    write_smf,
)
from accompanist.synthetic import random_score


def make_score(lengths, notes_by_track):
    tracks = tuple(
        Track(i, tuple(sorted(notes, key=lambda n: (n.onset_tick, n.pitch))))
        for i, notes in enumerate(notes_by_track)
    )
    return Score(MeasureMap.from_lengths(lengths), tracks)


class TestNoteInvariants:
    def test_rejects_negative_onset(self):
        with pytest.raises(ValueError):
            Note(-1, 24, 60)

    def test_rejects_bad_duration(self):
        with pytest.raises(ValueError):
            Note(0, 0, 60)
        with pytest.raises(ValueError):
            Note(0, 193, 60)

    def test_rejects_bad_pitch(self):
        with pytest.raises(ValueError):
            Note(0, 24, 128)

    def test_track_requires_sorted_unique(self):
        with pytest.raises(ValueError):
            Track(0, (Note(24, 12, 60), Note(0, 12, 60)))
        with pytest.raises(ValueError):
            Track(0, (Note(0, 12, 60), Note(0, 24, 60)))

    def test_score_rejects_note_past_span(self):
        with pytest.raises(ValueError):
            make_score([24], [[Note(0, 48, 60)]])


class TestParse:
    def test_minimal_file_converts_ppq(self):
        vlq_track = bytearray()
        vlq_track += bytes([0x00, 0x90, 60, 100])
        vlq_track += bytes([0x83, 0x60, 0x80, 60, 0])  # delta 480 as VLQ
        vlq_track += bytes([0x00, 0xFF, 0x2F, 0x00])
        data = (
            b"MThd" + struct.pack(">IHHH", 6, 0, 1, 480)
            + b"MTrk" + struct.pack(">I", len(vlq_track)) + bytes(vlq_track)
        )
        score = parse_smf(data)
        assert score.tracks == (Track(0, (Note(0, 24, 60),)),)

    def test_rejects_non_midi(self):
        with pytest.raises(SmfParseError) as err:
            parse_smf(b"RIFFxxxx")
        assert err.value.offset == 0

    def test_rejects_format_2(self):
        data = b"MThd" + struct.pack(">IHHH", 6, 2, 0, 24)
        with pytest.raises(SmfParseError):
            parse_smf(data)

    def test_rejects_truncated_chunk(self):
        good = write_smf(make_score([96], [[Note(0, 24, 60)]]))
        with pytest.raises(SmfParseError):
            parse_smf(good[:-3])

    def test_unmatched_note_on_closes_at_track_end(self):
        track = bytes([0x00, 0x90, 60, 100, 0x60, 0xFF, 0x2F, 0x00])  # EOT 96 ticks later
        data = (
            b"MThd" + struct.pack(">IHHH", 6, 0, 1, 24)
            + b"MTrk" + struct.pack(">I", len(track)) + track
        )
        score = parse_smf(data)
        assert score.tracks[0].notes == (Note(0, 96, 60),)
        assert any("unmatched" in w for w in score.warnings)

    def test_running_status(self):
        track = bytes([
            0x00, 0x90, 60, 100,
            0x00, 64, 100,        # running status note-on
            0x18, 0x80, 60, 0,
            0x00, 64, 0,          # running status note-off
            0x00, 0xFF, 0x2F, 0x00,
        ])
        data = (
            b"MThd" + struct.pack(">IHHH", 6, 0, 1, 24)
            + b"MTrk" + struct.pack(">I", len(track)) + track
        )
        score = parse_smf(data)
        assert [n.pitch for n in score.tracks[0].notes] == [60, 64]

    def test_instrument_override(self):
        data = write_smf(make_score([96], [[Note(0, 24, 60)], [Note(0, 24, 40)]]))
        score = parse_smf(data, instrument_order=[5, 3])
        assert [t.instrument_id for t in score.tracks] == [5, 3]


class TestWrite:
    def test_empty_score_has_two_tracks_no_notes(self):
        score = make_score([96, 96, 96, 96], [[], []])
        data = write_smf(score)
        assert data.count(b"MTrk") == 2
        assert b"\x90" not in data.split(b"MTrk")[1]
        reparsed = parse_smf(data)
        assert reparsed.measure_map == score.measure_map

    def test_single_note_events(self):
        data = write_smf(make_score([96], [[Note(0, 24, 60)]]))
        body = data.split(b"MTrk")[1]
        assert body.count(bytes([0x90, 60, 80])) == 1
        assert body.count(bytes([0x80, 60, 0])) == 1

    def test_time_signature_change_survives(self):
        score = make_score([96, 72, 72], [[Note(0, 24, 60), Note(96, 24, 62), Note(168, 24, 64)]])
        assert parse_smf(write_smf(score)) == score


class TestRoundTrip:
    def test_100_random_scores(self):
        rng = random.Random(1234)
        for _ in range(100):
            score = random_score(rng)
            assert parse_smf(write_smf(score)) == score

    def test_write_parse_write_stable(self):
        rng = random.Random(99)
        for _ in range(20):
            score = random_score(rng)
            once = write_smf(score)
            assert write_smf(parse_smf(once)) == once


class TestSlice:
    def test_full_range_is_identity(self):
        rng = random.Random(7)
        score = random_score(rng)
        assert slice_measures(score, 0, score.n_measures) == score

    def test_rebases_onsets(self):
        score = make_score([96, 96], [[Note(100, 8, 60)]])
        sliced = slice_measures(score, 1, 2)
        assert sliced.tracks[0].notes == (Note(4, 8, 60),)

    def test_clips_at_right_boundary(self):
        score = make_score([96, 96], [[Note(90, 20, 60)]])
        sliced = slice_measures(score, 0, 1)
        assert sliced.tracks[0].notes == (Note(90, 6, 60),)

    def test_out_of_range_raises(self):
        score = make_score([96], [[]])
        with pytest.raises(ValueError):
            slice_measures(score, 0, 2)
        with pytest.raises(ValueError):
            slice_measures(score, 1, 1)

    def test_composition(self):
        rng = random.Random(21)
        for _ in range(20):
            score = random_score(rng, min_measures=4, max_measures=8)
            n = score.n_measures
            a, b, c = 1, n // 2 + 1, n
            assert slice_measures(slice_measures(score, a, c), 0, b - a) == slice_measures(score, a, b)


def test_parsed_notes_satisfy_invariants_fuzz():
    # random valid files via the writer, then byte-level sanity of the parse
    rng = random.Random(5)
    for _ in range(50):
        score = random_score(rng)
        parsed = parse_smf(write_smf(score))
        for track in parsed.tracks:
            keys = [(n.onset_tick, n.pitch) for n in track.notes]
            assert keys == sorted(keys) and len(set(keys)) == len(keys)
            for note in track.notes:
                assert 1 <= note.duration_ticks <= 192
                assert note.end_tick <= parsed.measure_map.total_ticks


def test_byte_mutation_fuzz_never_escapes_parse_error():
    # corrupted files either parse into a valid Score or raise SmfParseError
    rng = random.Random(17)
    for _ in range(500):
        data = bytearray(write_smf(random_score(rng, max_measures=3)))
        for _ in range(rng.randint(1, 6)):
            op = rng.random()
            if op < 0.4 and len(data) > 1:
                data[rng.randrange(len(data))] = rng.randrange(256)
            elif op < 0.7 and len(data) > 20:
                del data[rng.randrange(len(data))]
            else:
                data.insert(rng.randrange(len(data) + 1), rng.randrange(256))
        try:
            parsed = parse_smf(bytes(data))
        except SmfParseError:
            continue
        for track in parsed.tracks:
            for note in track.notes:
                assert 0 <= note.pitch <= 127
                assert 1 <= note.duration_ticks <= 192


def test_data_byte_with_status_bit_rejected():
    track = bytes([0x00, 0x90, 0x85, 100, 0x00, 0xFF, 0x2F, 0x00])  # pitch byte 0x85
    data = (
        b"MThd" + struct.pack(">IHHH", 6, 0, 1, 24)
        + b"MTrk" + struct.pack(">I", len(track)) + track
    )
    with pytest.raises(SmfParseError):
        parse_smf(data)
