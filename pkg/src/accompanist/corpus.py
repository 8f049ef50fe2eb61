"""Song dataset loading: per-song folders with MIDI plus sidecar text files.

Layout: `<root>/<song_id>/{song.mid, metadata.txt, onsets_1.txt, onsets_2.txt,
lyrics.txt}`. Metadata is `key: value` lines; onsets files are
whitespace-separated bar indices marking section boundaries. Only the MIDI is
parsed into a Score; other formats in a folder are ignored.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .score import Score, SmfParseError, parse_smf

log = logging.getLogger(__name__)

MIDI_FILENAME = "song.mid"
METADATA_FILENAME = "metadata.txt"
ONSET_GLOB = "onsets_*.txt"


@dataclass(frozen=True)
class Metadata:
    tempo: int | None = None
    lyricist: str | None = None
    mood_binary: str | None = None  # happy | sad
    mood_adjective: str | None = None
    style: str | None = None
    extra: tuple[tuple[str, str], ...] = ()  # unknown keys, preserved verbatim


@dataclass(frozen=True)
class OnsetAnnotation:
    annotator_id: int
    boundaries: tuple[int, ...]  # strictly increasing bar indices


@dataclass(frozen=True)
class SongEntry:
    song_id: str
    score: Score
    metadata: Metadata
    onsets: tuple[OnsetAnnotation, ...]
    provenance: str = field(default="")

    def __post_init__(self):
        if not self.provenance:
            object.__setattr__(self, "provenance", self.song_id)


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    excluded: tuple[tuple[str, str], ...] = ()  # (id, reason)

    def __post_init__(self):
        train, validation = set(self.train), set(self.validation)
        excluded = {song_id for song_id, _ in self.excluded}
        if train & validation or train & excluded or validation & excluded:
            raise ValueError("split partitions overlap")


def parse_metadata(text: str) -> Metadata:
    """Parse `key: value` lines; unknown keys are preserved, bad lines skipped."""
    known: dict[str, object] = {}
    extra: list[tuple[str, str]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            log.warning("metadata line %d has no key: %r", line_no, line)
            continue
        key, _, value = line.partition(":")
        key, value = key.strip().lower(), value.strip()
        if key == "tempo":
            try:
                tempo = int(value)
            except ValueError:
                log.warning("metadata line %d: non-integer tempo %r", line_no, value)
                continue
            if tempo <= 0:
                log.warning("metadata line %d: non-positive tempo %d", line_no, tempo)
                continue
            known["tempo"] = tempo
        elif key == "lyricist":
            known["lyricist"] = value
        elif key == "mood":
            if value not in ("happy", "sad"):
                log.warning("metadata line %d: mood %r not happy/sad", line_no, value)
                continue
            known["mood_binary"] = value
        elif key == "mood_adjective":
            known["mood_adjective"] = value
        elif key == "style":
            known["style"] = value
        else:
            extra.append((key, value))
    return Metadata(extra=tuple(extra), **known)


def parse_onsets(text: str, annotator_id: int = 0) -> OnsetAnnotation:
    """Whitespace-separated bar indices; sorted, deduplicated, bad tokens skipped."""
    boundaries: set[int] = set()
    for token in text.split():
        try:
            boundaries.add(int(token))
        except ValueError:
            log.warning("onsets token %r is not an integer, skipped", token)
    return OnsetAnnotation(annotator_id, tuple(sorted(boundaries)))


def load_dataset(root: Path | str) -> list[SongEntry]:
    """Load every song folder under `root` in lexicographic id order.

    Folders without a readable MIDI are reported and skipped; missing or
    malformed sidecars degrade to empty fields with a diagnostic.
    """
    root = Path(root)
    entries: list[SongEntry] = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        midi_path = folder / MIDI_FILENAME
        if not midi_path.is_file():
            log.warning("folder %s has no %s, skipped", folder.name, MIDI_FILENAME)
            continue
        try:
            score = parse_smf(midi_path.read_bytes())
        except SmfParseError as err:
            log.warning("folder %s: unreadable MIDI (%s), skipped", folder.name, err)
            continue

        metadata = Metadata()
        metadata_path = folder / METADATA_FILENAME
        if metadata_path.is_file():
            metadata = parse_metadata(metadata_path.read_text())

        onsets = []
        for onset_path in sorted(folder.glob(ONSET_GLOB)):
            stem = onset_path.stem  # onsets_<annotator>
            try:
                annotator = int(stem.rsplit("_", 1)[1])
            except (IndexError, ValueError):
                log.warning("onsets file %s has no annotator id, using 0", onset_path.name)
                annotator = 0
            annotation = parse_onsets(onset_path.read_text(), annotator)
            bad = [b for b in annotation.boundaries if not 0 <= b <= score.n_measures]
            if bad:
                log.warning("folder %s: onsets %s outside 0..%d dropped",
                            folder.name, bad, score.n_measures)
                annotation = OnsetAnnotation(
                    annotator,
                    tuple(b for b in annotation.boundaries if 0 <= b <= score.n_measures),
                )
            onsets.append(annotation)

        entries.append(SongEntry(folder.name, score, metadata, tuple(onsets)))
    return entries


def make_split(entries: Sequence[SongEntry], validation_count: int, seed: int) -> Split:
    """Seeded uniform validation sample; the rest train."""
    if validation_count >= len(entries):
        raise ValueError(
            f"validation_count {validation_count} must be below the corpus size {len(entries)}"
        )
    ids = [e.song_id for e in entries]
    rng = random.Random(seed)
    validation = sorted(rng.sample(ids, validation_count))
    validation_set = set(validation)
    train = tuple(i for i in ids if i not in validation_set)
    return Split(train, tuple(validation))


def leave_one_out(entries: Sequence[SongEntry], song_id: str) -> Split:
    """Everything trains except the named song, which is excluded entirely."""
    ids = [e.song_id for e in entries]
    if song_id not in ids:
        raise KeyError(f"unknown song id {song_id!r}")
    train = tuple(i for i in ids if i != song_id)
    return Split(train, (), ((song_id, "leave-one-out target"),))


def corpus_manifest(entries: Sequence[SongEntry]) -> str:
    """CLI-facing summary table: id, bars, tracks, has_onsets."""
    lines = ["id,bars,tracks,has_onsets"]
    lines += [
        f"{e.song_id},{e.score.n_measures},{len(e.score.tracks)},{int(bool(e.onsets))}"
        for e in entries
    ]
    return "\n".join(lines) + "\n"


def training_songs(entries: Sequence[SongEntry], split_ids: Sequence[str]) -> list[tuple[str, Score]]:
    """(id, score) pairs for the given split ids, in split order."""
    by_id = {e.song_id: e for e in entries}
    return [(song_id, by_id[song_id].score) for song_id in split_ids]
