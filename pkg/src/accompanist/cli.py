"""Single command-line entry point for the whole pipeline.

Every command writes a run manifest (resolved flags, seeds, input hashes,
outputs, wall time) at the root of its --out directory, sufficient to re-run
identically. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import corpus as corpus_mod
from .codec import MaskSpec, build_target, encode_prompt, tokens_to_text
from .metrics import checkpoint_curves
from .model import (
    DEFAULT_FINETUNE_LR,
    DEFAULT_PRETRAIN_LR,
    ModelConfig,
    SeqModel,
    TrainPlan,
    finetune,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .sampling import SamplerConfig, generate_accompaniment, traces_to_csv
from .score import Score, parse_smf, slice_measures, write_smf
from .experiment import (
    ExperimentStore,
    SampleRecord,
    build_pairs,
    export_results,
    results_csv,
)
from .service import ExperimentService, MidiStore, ServiceConfig, create_app
from .synthetic import write_synthetic_corpus


class _Manifest:
    def __init__(self, args: argparse.Namespace, out_dir: Path | None):
        self.command = args.command
        self.out_dir = out_dir
        self.started = time.time()
        self.config = {
            k: v for k, v in vars(args).items()
            if not k.startswith("_") and k not in ("func", "command") and not callable(v)
        }
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def add_input(self, path: Path | str) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = hashlib.sha256(path.read_bytes()).hexdigest()
        elif path.is_dir():
            for child in sorted(path.rglob("*")):
                if child.is_file():
                    self.inputs[str(child)] = hashlib.sha256(child.read_bytes()).hexdigest()

    def add_output(self, path: Path | str) -> None:
        self.outputs.append(str(path))

    def write(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "command": self.command,
            "config": {k: str(v) if isinstance(v, Path) else v for k, v in self.config.items()},
            "seeds": {k: v for k, v in self.config.items() if "seed" in k},
            "input_hashes": self.inputs,
            "outputs": self.outputs,
            "wall_ms": round((time.time() - self.started) * 1000, 1),
            "started_at": self.started,
        }
        (self.out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _apply_config_file(args: argparse.Namespace) -> None:
    """Config-file values fill in flags the user left at their defaults."""
    config_path = getattr(args, "config", None)
    if not config_path:
        return
    data = json.loads(Path(config_path).read_text())
    parser: argparse.ArgumentParser = args._parser
    for key, value in data.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValueError(f"config file key {key!r} is not a flag of this command")
        if getattr(args, dest) == parser.get_default(dest):
            setattr(args, dest, value)


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        encoder_layers=args.layers,
        decoder_layers=args.layers,
        heads=args.heads,
        model_dim=args.dim,
        feedforward_dim=args.ffn,
        max_prompt_len=args.max_prompt,
        max_target_len=args.max_target,
        dropout=args.dropout,
    )


def _train_plan(args: argparse.Namespace, default_lr: float) -> TrainPlan:
    return TrainPlan(
        epochs=args.epochs,
        effective_batch_size=args.batch_size,
        micro_batch_size=args.micro_batch,
        checkpoint_every=args.checkpoint_every,
        learning_rate=args.lr if args.lr is not None else default_lr,
        seed=args.seed,
        examples_per_epoch=args.examples_per_epoch,
        control_probability=args.control_probability,
    )


def _sampler_config(args: argparse.Namespace) -> SamplerConfig:
    return SamplerConfig(
        nucleus_p=args.nucleus_p,
        temperature=args.temperature,
        rhythmic_temperature=args.rhythmic_temperature,
        seed=args.seed,
        max_tokens=args.max_tokens,
    )


def _save_checkpoints(checkpoints, out_dir: Path, manifest: _Manifest, log_text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for ck in checkpoints:
        path = out_dir / f"checkpoint-{ck.epoch:04d}.ckpt"
        save_checkpoint(ck, path)
        manifest.add_output(path)
    log_path = out_dir / "training_log.csv"
    log_path.write_text(log_text)
    manifest.add_output(log_path)


def cmd_synth_corpus(args) -> int:
    manifest = _Manifest(args, Path(args.out))
    ids = write_synthetic_corpus(args.out, n_songs=args.songs, seed=args.seed,
                                 n_measures=args.measures)
    for song_id in ids:
        manifest.add_output(Path(args.out) / song_id)
    manifest.write()
    print(f"wrote {len(ids)} synthetic songs under {args.out}")
    return 0


def cmd_corpus_scan(args) -> int:
    entries = corpus_mod.load_dataset(args.root)
    table = corpus_mod.corpus_manifest(entries)
    print(table, end="")
    if args.out:
        manifest = _Manifest(args, Path(args.out))
        manifest.add_input(args.root)
        out_path = Path(args.out) / "corpus_manifest.csv"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(table)
        manifest.add_output(out_path)
        manifest.write()
    return 0


def cmd_tokenize(args) -> int:
    entries = corpus_mod.load_dataset(args.root)
    by_id = {e.song_id: e for e in entries}
    if args.song not in by_id:
        raise KeyError(f"unknown song id {args.song!r}")
    score = by_id[args.song].score
    end = args.end if args.end is not None else score.n_measures
    piece = slice_measures(score, args.start, end)
    cells = []
    for spec in args.mask or []:
        track_str, measure_str = spec.split(":")
        cells.append((int(track_str), int(measure_str)))
    masks = MaskSpec.of(cells)
    prompt = encode_prompt(piece, masks)
    print(tokens_to_text(prompt))
    if cells:
        print(tokens_to_text(build_target(piece, masks)))
    return 0


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    manifest = _Manifest(args, out_dir)
    manifest.add_input(args.root)
    entries = corpus_mod.load_dataset(args.root)
    if args.validation_count:
        split = corpus_mod.make_split(entries, args.validation_count, args.split_seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "split.json").write_text(json.dumps(asdict(split), indent=2) + "\n")
        manifest.add_output(out_dir / "split.json")
    else:
        split = corpus_mod.Split(tuple(e.song_id for e in entries), ())
    songs = corpus_mod.training_songs(entries, split.train)
    import io

    log = io.StringIO()
    checkpoints = train(songs, _model_config(args), _train_plan(args, DEFAULT_PRETRAIN_LR), log=log)
    _save_checkpoints(checkpoints, out_dir, manifest, log.getvalue())
    manifest.write()
    print(f"wrote {len(checkpoints)} checkpoints to {out_dir}")
    return 0


def cmd_finetune(args) -> int:
    out_dir = Path(args.out)
    manifest = _Manifest(args, out_dir)
    manifest.add_input(args.root)
    manifest.add_input(args.base)
    base = load_checkpoint(args.base)
    entries = corpus_mod.load_dataset(args.root)
    excluded = set(args.exclude or [])
    songs = [(e.song_id, e.score) for e in entries if e.song_id not in excluded]
    import io

    log = io.StringIO()
    checkpoints = finetune(base, songs, _train_plan(args, DEFAULT_FINETUNE_LR), log=log)
    _save_checkpoints(checkpoints, out_dir, manifest, log.getvalue())
    manifest.write()
    print(f"wrote {len(checkpoints)} checkpoints to {out_dir}")
    return 0


def cmd_curves(args) -> int:
    out_dir = Path(args.out)
    manifest = _Manifest(args, out_dir)
    manifest.add_input(args.root)
    checkpoints = []
    for path in args.checkpoints:
        manifest.add_input(path)
        checkpoints.append(load_checkpoint(path))
    checkpoints.sort(key=lambda c: c.epoch)
    entries = corpus_mod.load_dataset(args.root)
    songs = [(e.song_id, e.score) for e in entries]
    report = checkpoint_curves(
        checkpoints,
        songs,
        _sampler_config(args),
        snippet_bars=args.snippet_bars,
        n_snippets=args.snippets,
        seed=args.snippet_seed,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "curves.csv").write_text(report.curve_csv())
    (out_dir / "snippets.csv").write_text(report.snippet_csv())
    manifest.add_output(out_dir / "curves.csv")
    manifest.add_output(out_dir / "snippets.csv")
    manifest.write()
    print(report.curve_csv(), end="")
    return 0


def _append_sample_manifest(path: Path, records) -> None:
    with open(path, "a") as fh:
        for record in records:
            fh.write(json.dumps({"kind": "sample", **asdict(record)}, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    manifest = _Manifest(args, out_dir)
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.melody)
    checkpoint = load_checkpoint(args.checkpoint)
    model = SeqModel(checkpoint)
    melody_score = parse_smf(Path(args.melody).read_bytes())
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _sampler_config(args)
    records = []
    for i in range(args.n):
        result = generate_accompaniment(
            model, melody_score, replace(config, seed=config.seed + i),
            melody_track=args.melody_track,
        )
        path = out_dir / f"accompaniment-{i}.mid"
        path.write_bytes(write_smf(result.score))
        manifest.add_output(path)
        traces = [t for window in result.window_results for t in window.traces]
        trace_path = out_dir / f"accompaniment-{i}-traces.csv"
        trace_path.write_text(traces_to_csv(traces))
        manifest.add_output(trace_path)
        if args.samples_manifest:
            records.append(
                SampleRecord(
                    sample_id=f"{args.melody_id}:{args.model_tag}:{i}",
                    melody_id=args.melody_id,
                    melody_type=args.melody_type,
                    model_tag=args.model_tag,
                    generation_seed=config.seed + i,
                    midi_ref=str(path),
                )
            )
    if args.samples_manifest:
        _append_sample_manifest(Path(args.samples_manifest), records)
        manifest.add_output(args.samples_manifest)
    manifest.write()
    print(f"wrote {args.n} accompaniments to {out_dir}")
    return 0


def cmd_loo_generate(args) -> int:
    out_dir = Path(args.out)
    manifest = _Manifest(args, out_dir)
    manifest.add_input(args.root)
    manifest.add_input(args.base)
    if args.baseline:
        manifest.add_input(args.baseline)
    entries = corpus_mod.load_dataset(args.root)
    if not entries:
        raise RuntimeError(f"no songs under {args.root}")
    base = load_checkpoint(args.base)
    baseline = load_checkpoint(args.baseline) if args.baseline else base
    baseline_model = SeqModel(baseline)
    targets = entries[: args.melodies]
    midi_store = MidiStore(out_dir / "midi")
    sampler = _sampler_config(args)

    samples: list[SampleRecord] = []
    melody_refs: dict[str, str] = {}
    for entry in targets:
        split = corpus_mod.leave_one_out(entries, entry.song_id)
        songs = corpus_mod.training_songs(entries, split.train)
        plan = _train_plan(args, DEFAULT_FINETUNE_LR)
        checkpoints = finetune(base, songs, plan)
        fp_model = SeqModel(checkpoints[-1])

        melody = entry.score.tracks[args.melody_track]
        melody_score = Score(entry.score.measure_map, (melody,))
        melody_refs[entry.song_id] = midi_store.put(write_smf(melody_score))
        for tag, model in (("fp", fp_model), ("baseline", baseline_model)):
            for g in range(args.per_melody):
                result = generate_accompaniment(
                    model, melody_score, replace(sampler, seed=sampler.seed + g)
                )
                piano_only = Score(result.score.measure_map, (result.score.tracks[1],))
                ref = midi_store.put(write_smf(piano_only))
                samples.append(
                    SampleRecord(
                        sample_id=f"{entry.song_id}:{tag}:{g}",
                        melody_id=entry.song_id,
                        melody_type=args.melody_type,
                        model_tag=tag,
                        generation_seed=sampler.seed + g,
                        midi_ref=ref,
                    )
                )

    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / "samples.jsonl"
    samples_path.write_text("")
    _append_sample_manifest(samples_path, samples)
    (out_dir / "melodies.json").write_text(json.dumps(melody_refs, indent=2) + "\n")
    manifest.add_output(samples_path)
    manifest.add_output(out_dir / "melodies.json")
    manifest.write()
    per_tag = len(samples) // 2
    print(f"wrote {per_tag} sample records per model tag to {out_dir}")
    return 0


def _load_samples_jsonl(path: Path) -> list[SampleRecord]:
    records = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        if data.pop("kind", "sample") != "sample":
            continue
        records.append(SampleRecord(**data))
    return records


def cmd_experiment_build(args) -> int:
    store_dir = Path(args.out)
    manifest = _Manifest(args, store_dir)
    samples_dir = Path(args.samples)
    manifest.add_input(samples_dir / "samples.jsonl")
    samples = _load_samples_jsonl(samples_dir / "samples.jsonl")
    evaluators = [e.strip() for e in args.evaluators.split(",") if e.strip()]
    if len(evaluators) < 1:
        raise ValueError("at least one evaluator required")
    trials = build_pairs(samples, evaluators, args.seed)
    store = ExperimentStore(samples, trials)
    store_dir.mkdir(parents=True, exist_ok=True)
    (store_dir / "store.jsonl").write_text(store.to_jsonl())
    manifest.add_output(store_dir / "store.jsonl")
    if samples_dir != store_dir:
        melodies = samples_dir / "melodies.json"
        if melodies.is_file():
            (store_dir / "melodies.json").write_text(melodies.read_text())
        midi_src = samples_dir / "midi"
        if midi_src.is_dir():
            midi_dst = store_dir / "midi"
            midi_dst.mkdir(exist_ok=True)
            for path in midi_src.glob("*.mid"):
                (midi_dst / path.name).write_bytes(path.read_bytes())
    manifest.write()
    print(f"built {len(trials)} trials for {len(evaluators)} evaluators in {store_dir}")
    return 0


def _service_from_store_dir(args) -> ExperimentService:
    store_dir = Path(args.store)
    store = ExperimentStore.from_jsonl((store_dir / "store.jsonl").read_text())
    responses_path = store_dir / "responses.jsonl"
    if responses_path.is_file():
        for line in responses_path.read_text().splitlines():
            if line.strip():
                data = json.loads(line)
                data.pop("kind", None)
                from .experiment import Response

                store.record_response(Response(**data))
    melody_refs = {}
    melodies_path = store_dir / "melodies.json"
    if melodies_path.is_file():
        melody_refs = json.loads(melodies_path.read_text())
    midi_store = MidiStore(store_dir / "midi")
    sample_refs = {s.sample_id: s.midi_ref for s in store.samples.values()}
    checkpoint = load_checkpoint(args.checkpoint) if getattr(args, "checkpoint", None) else None
    return ExperimentService(
        store=store,
        midi_store=midi_store,
        checkpoint=checkpoint,
        sampler_config=SamplerConfig(),
        sample_refs=sample_refs,
        melody_refs=melody_refs,
        response_log=responses_path,
        worker_count=getattr(args, "workers", 2),
    )


def cmd_experiment_serve(args) -> int:
    service_config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    if args.addr:
        service_config.listen_addr = args.addr
    service = _service_from_store_dir(args)
    app = create_app(service, frontend_dir=args.frontend or service_config.frontend_dir)
    host, _, port = service_config.listen_addr.partition(":")
    import uvicorn

    uvicorn.run(app, host=host, port=int(port or 8765))
    return 0


def cmd_experiment_results(args) -> int:
    service = _service_from_store_dir(args)
    result = export_results(service.store)
    text = results_csv(result)
    print(text, end="")
    if args.out:
        manifest = _Manifest(args, Path(args.out))
        manifest.add_input(Path(args.store) / "store.jsonl")
        out_path = Path(args.out) / "results.csv"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text)
        (Path(args.out) / "raw_dump.jsonl").write_text(service.store.to_jsonl())
        manifest.add_output(out_path)
        manifest.add_output(Path(args.out) / "raw_dump.jsonl")
        manifest.write()
    return 0


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--layers", type=int, default=4, help="encoder and decoder layers")
    parser.add_argument("--heads", type=int, default=8)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--ffn", type=int, default=1024)
    parser.add_argument("--max-prompt", type=int, default=2048)
    parser.add_argument("--max-target", type=int, default=2048)
    parser.add_argument("--dropout", type=float, default=0.0)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, required=True)
    parser.add_argument("--batch-size", type=int, default=128, help="effective batch size")
    parser.add_argument("--micro-batch", type=int, default=None)
    parser.add_argument("--checkpoint-every", type=int, default=10)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--examples-per-epoch", type=int, default=None)
    parser.add_argument("--control-probability", type=float, default=0.0,
                        help="chance a masked training cell carries its density control")


def _add_sampler_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--nucleus-p", type=float, default=0.95)
    parser.add_argument("--temperature", type=float, default=1.0)
    parser.add_argument("--rhythmic-temperature", type=float, default=1.5)
    parser.add_argument("--max-tokens", type=int, default=4096)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accompanist",
        description="Measure-masked accompaniment modeling, evaluation, and listening experiments",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def sub(name: str, func, **kwargs) -> argparse.ArgumentParser:
        p = subs.add_parser(name, **kwargs)
        p.add_argument("--config", default=None, help="JSON config file; flags win")
        p.set_defaults(func=func, _parser=p)
        return p

    p = sub("synth-corpus", cmd_synth_corpus, help="write a synthetic test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--songs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--measures", type=int, default=4)

    p = sub("corpus", None, help="corpus inspection")
    corpus_subs = p.add_subparsers(dest="corpus_command", required=True)
    scan = corpus_subs.add_parser("scan")
    scan.add_argument("--root", required=True)
    scan.add_argument("--out", default=None)
    scan.add_argument("--config", default=None)
    scan.set_defaults(func=cmd_corpus_scan, _parser=scan)

    p = sub("tokenize", cmd_tokenize, help="dump the token text for a song slice")
    p.add_argument("--root", required=True)
    p.add_argument("--song", required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--end", type=int, default=None)
    p.add_argument("--mask", action="append", metavar="TRACK:MEASURE")

    p = sub("train", cmd_train, help="train a model from scratch")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--validation-count", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    _add_train_flags(p)
    _add_model_flags(p)

    p = sub("finetune", cmd_finetune, help="fine-tune from a base checkpoint")
    p.add_argument("--base", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exclude", action="append", metavar="SONG_ID")
    _add_train_flags(p)

    p = sub("curves", cmd_curves, help="checkpoint-selection metric curves")
    p.add_argument("--root", required=True, help="validation corpus root")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snippets", type=int, default=8)
    p.add_argument("--snippet-bars", type=int, default=16)
    p.add_argument("--snippet-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _add_sampler_flags(p)

    p = sub("generate", cmd_generate, help="accompany a melody MIDI file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--melody", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--melody-track", type=int, default=0)
    p.add_argument("--samples-manifest", default=None, help="append sample records here")
    p.add_argument("--melody-id", default="melody")
    p.add_argument("--melody-type", default="popular", choices=("price", "popular"))
    p.add_argument("--model-tag", default="fp", choices=("fp", "baseline"))
    _add_sampler_flags(p)

    p = sub("loo-generate", cmd_loo_generate, help="leave-one-out fine-tune and generate")
    p.add_argument("--root", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--baseline", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--melodies", type=int, default=10)
    p.add_argument("--per-melody", type=int, default=7)
    p.add_argument("--melody-track", type=int, default=0)
    p.add_argument("--melody-type", default="price", choices=("price", "popular"))
    _add_train_flags(p)
    _add_sampler_flags(p)

    p = sub("experiment", None, help="listening experiment")
    exp_subs = p.add_subparsers(dest="experiment_command", required=True)

    build = exp_subs.add_parser("build")
    build.add_argument("--samples", required=True, help="directory with samples.jsonl")
    build.add_argument("--out", required=True)
    build.add_argument("--evaluators", required=True, help="comma-separated ids")
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--config", default=None)
    build.set_defaults(func=cmd_experiment_build, _parser=build)

    serve = exp_subs.add_parser("serve")
    serve.add_argument("--store", required=True)
    serve.add_argument("--checkpoint", default=None)
    serve.add_argument("--addr", default=None)
    serve.add_argument("--frontend", default=None)
    serve.add_argument("--workers", type=int, default=2)
    serve.add_argument("--config", default=None)
    serve.set_defaults(func=cmd_experiment_serve, _parser=serve)

    results = exp_subs.add_parser("results")
    results.add_argument("--store", required=True)
    results.add_argument("--out", default=None)
    results.add_argument("--config", default=None)
    results.set_defaults(func=cmd_experiment_results, _parser=results)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else 2
    try:
        _apply_config_file(args)
        return args.func(args) or 0
    except Exception as err:  # runtime failure -> exit 1 with diagnostic
        print(f"accompanist: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
