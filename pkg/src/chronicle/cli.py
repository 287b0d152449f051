"""Command-line pipeline driver.

Subcommands map one-to-one onto library operations: synth,
build-timelines, split, train, evaluate, generate, stats, serve. Options
resolve as flag > config file ([subcommand] table in a TOML file) >
built-in default, and every run writes a manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import report as report_mod
from .artifact import load_model, save_model
from .errors import ChronicleError
from .metrics import EvalConfig, evaluate, reference_evaluate
from .model import Model, ModelConfig, SamplerConfig, TrainConfig, build_vocab, train
from .ontology import load_ontology_file, write_ontology
from .synth import SynthParams, build_world, sample_population, save_world
from .timeline import (
    BuildConfig,
    aggregate_events,
    apply_frequency_filters,
    build_timeline,
    corpus_stats,
    filtered_concept_events,
    load_demographics,
    load_events,
    load_histories,
    load_timelines,
    split_patient_ids,
    write_demographics,
    write_events,
    write_histories,
    write_timelines,
)
from .tokens import parse_token


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(
    out_dir: Path,
    subcommand: str,
    config: dict,
    inputs: list[str],
    outputs: list[str],
    seed: int | None,
    started: datetime,
    elapsed: float,
) -> None:
    """Atomic write: the manifest appears fully formed or not at all."""
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "started_utc": started.isoformat(),
        "elapsed_seconds": round(elapsed, 3),
        "build": _git_describe(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, out_dir / "run_manifest.json")
    except BaseException:
        os.unlink(tmp)
        raise


def _load_config_table(path: str | None, section: str) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        table = tomllib.load(fh)
    return table.get(section, {})


class _Resolver:
    """flag > config file > default, recording the resolved values."""

    def __init__(self, args: argparse.Namespace, section: str):
        self.args = args
        self.table = _load_config_table(args.config, section)
        self.resolved: dict = {}

    def get(self, name: str, default):
        flag_value = getattr(self.args, name.replace("-", "_"), None)
        if flag_value is not None:
            value = flag_value
        elif name in self.table:
            value = self.table[name]
        else:
            value = default
        self.resolved[name] = value
        return value


def _parse_ranges(spec: str) -> tuple[int | None, ...]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        out.append(None if part in ("inf", "infinity") else int(part))
    return tuple(out)


def _parse_ints(spec: str) -> tuple[int, ...]:
    return tuple(int(p) for p in spec.split(","))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "synth")
    params = SynthParams(
        n_concepts=r.get("concepts", 50),
        n_patients=r.get("patients", 100),
        mean_events=r.get("mean-events", 30.0),
        seed=r.get("seed", 0),
        hierarchy_depth=r.get("hierarchy-depth", 2),
        chronic_fraction=r.get("chronic-fraction", 0.2),
        gap_mean_days=r.get("gap-mean-days", 7.0),
        transition_peak=r.get("transition-peak", 0.7),
    )
    out = Path(r.get("out", "synth-out"))
    out.mkdir(parents=True, exist_ok=True)

    world = build_world(params)
    events, demographics = sample_population(
        world, params.n_patients, params.seed, mean_events=params.mean_events
    )
    write_events(events, out / "events.jsonl")
    write_demographics(demographics, out / "demographics.jsonl")
    save_world(world, out / "world.json")
    write_ontology(world.ontology, out / "ontology.tsv")
    outputs = ["events.jsonl", "demographics.jsonl", "world.json", "ontology.tsv"]
    write_manifest(
        out, "synth", r.resolved, [], outputs, params.seed, started,
        time.monotonic() - t0,
    )
    print(f"wrote {len(events)} events for {params.n_patients} patients to {out}")
    return 0


def cmd_build_timelines(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "build-timelines")
    events_path = r.get("events", None)
    demo_path = r.get("demographics", None)
    onto_path = r.get("ontology", None)
    if not (events_path and demo_path and onto_path):
        print("build-timelines requires --events, --demographics, --ontology",
              file=sys.stderr)
        return 2
    cfg = BuildConfig(
        bucket_days=r.get("bucket-days", 1),
        max_concepts=r.get("max-concepts", 256),
        min_concepts=r.get("min-concepts", 10),
        min_global_count=r.get("min-global-count", 100),
        min_patient_count=r.get("min-patient-count", 2),
    )
    threads = r.get("threads", 1)
    out = Path(r.get("out", "timelines-out"))
    out.mkdir(parents=True, exist_ok=True)

    ontology = load_ontology_file(onto_path)
    records = aggregate_events(load_events(events_path), load_demographics(demo_path))
    records = apply_frequency_filters(records, cfg)

    def build_one(rec):
        return (
            rec.patient_id,
            [(c, t) for _, c, t in filtered_concept_events(rec, ontology, cfg)],
            build_timeline(rec, ontology, cfg),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(build_one, records))
    else:
        built = [build_one(rec) for rec in records]
    built.sort(key=lambda item: item[0])  # fixed merge order

    timelines = []
    histories = {}
    for pid, events, fragments in built:
        histories[pid] = events
        timelines.extend(fragments)
    write_timelines(timelines, out / "timelines.jsonl")
    write_histories(histories, out / "histories.jsonl")
    write_manifest(
        out, "build-timelines", r.resolved,
        [str(events_path), str(demo_path), str(onto_path)],
        ["timelines.jsonl", "histories.jsonl"],
        None, started, time.monotonic() - t0,
    )
    print(f"built {len(timelines)} fragments from {len(records)} patients")
    return 0


def cmd_split(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "split")
    timelines_path = r.get("timelines", None)
    if not timelines_path:
        print("split requires --timelines", file=sys.stderr)
        return 2
    fraction = r.get("test-fraction", 0.05)
    seed = r.get("seed", 0)
    out = Path(r.get("out", "split-out"))
    out.mkdir(parents=True, exist_ok=True)

    timelines = load_timelines(timelines_path)
    train_ids, test_ids = split_patient_ids(
        [tl.patient_id for tl in timelines], fraction, seed
    )
    write_timelines(
        [tl for tl in timelines if tl.patient_id in train_ids],
        out / "train_timelines.jsonl",
    )
    write_timelines(
        [tl for tl in timelines if tl.patient_id in test_ids],
        out / "test_timelines.jsonl",
    )
    write_manifest(
        out, "split", r.resolved, [str(timelines_path)],
        ["train_timelines.jsonl", "test_timelines.jsonl"],
        seed, started, time.monotonic() - t0,
    )
    print(f"split {len(train_ids)}/{len(test_ids)} patients (train/test)")
    return 0


def cmd_train(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "train")
    timelines_path = r.get("timelines", None)
    onto_path = r.get("ontology", None)
    if not (timelines_path and onto_path):
        print("train requires --timelines and --ontology", file=sys.stderr)
        return 2
    model_cfg = ModelConfig(
        n_layers=r.get("layers", 2),
        n_heads=r.get("heads", 4),
        embedding_dim=r.get("dim", 64),
        context_len=r.get("context", 256),
        feedforward_dim=r.get("ff-dim", 256),
        dropout=r.get("dropout", 0.0),
    )
    seed = r.get("seed", 0)
    train_cfg = TrainConfig(
        learning_rate=r.get("lr", 3.14e-4),
        weight_decay=r.get("weight-decay", 1e-2),
        batch_size=r.get("batch-size", 32),
        warmup_ratio=r.get("warmup-ratio", 0.01),
        epochs=r.get("epochs", 10),
        seed=seed,
    )
    out = Path(r.get("out", "train-out"))
    out.mkdir(parents=True, exist_ok=True)

    timelines = load_timelines(timelines_path)
    ontology = load_ontology_file(onto_path)
    vocab = build_vocab(timelines, ontology)
    model = Model.init(model_cfg, vocab, seed=seed)
    model, history = train(model, timelines, train_cfg)
    save_model(model, out / "model", train_config=train_cfg)
    (out / "history.json").write_text(
        json.dumps({"epoch_mean_loss": history}, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(
        out, "train", r.resolved, [str(timelines_path), str(onto_path)],
        ["model", "history.json"], seed, started, time.monotonic() - t0,
    )
    final = f"{history[-1]:.4f}" if history else "n/a"
    print(f"trained on {len(timelines)} fragments; final epoch loss {final}")
    return 0


def cmd_evaluate(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "evaluate")
    model_path = r.get("model", None)
    timelines_path = r.get("timelines", None)
    histories_path = r.get("histories", None)
    if not (model_path and timelines_path and histories_path):
        print("evaluate requires --model, --timelines, --histories", file=sys.stderr)
        return 2
    ec = EvalConfig(
        time_ranges=_parse_ranges(r.get("ranges", "30,365,inf")),
        top_ks=_parse_ints(r.get("ks", "1,5,10")),
    )
    use_reference = r.get("reference", False)
    out = Path(r.get("out", "eval-out"))
    out.mkdir(parents=True, exist_ok=True)

    model = load_model(model_path)
    timelines = load_timelines(timelines_path)
    histories = load_histories(histories_path)
    rep = evaluate(model, timelines, histories, ec)

    report_mod.write_report_json(rep, out / "report.json")
    report_mod.write_report_tsv(rep, out / "report.tsv")
    text = report_mod.render_report_text(rep)
    (out / "report.txt").write_text(text, encoding="utf-8")
    figures = report_mod.render_report_figures(rep, out / "figures")
    outputs = ["report.json", "report.tsv", "report.txt"] + [
        str(p.relative_to(out)) for p in figures
    ]

    mismatch = False
    if use_reference:
        ref = reference_evaluate(model, timelines, histories, ec)
        mismatch = ref != rep
        verdict = "MISMATCH" if mismatch else "match"
        print(f"reference cross-check: {verdict}")

    write_manifest(
        out, "evaluate", r.resolved,
        [str(model_path), str(timelines_path), str(histories_path)],
        outputs, None, started, time.monotonic() - t0,
    )
    print(text, end="")
    return 1 if mismatch else 0


def cmd_generate(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "generate")
    model_path = r.get("model", None)
    prompt_spec = r.get("prompt", None)
    if not (model_path and prompt_spec):
        print("generate requires --model and --prompt", file=sys.stderr)
        return 2
    steps = r.get("steps", 15)
    top_k = r.get("top-k", 100)
    temperature = r.get("temperature", 1.0)
    seed = r.get("seed", 0)
    onto_path = r.get("ontology", None)
    out_spec = r.get("out", None)

    model = load_model(model_path)
    ontology = load_ontology_file(onto_path) if onto_path else None
    spellings = [s.strip() for s in prompt_spec.split(",") if s.strip()]
    prompt_ids = []
    for pos, s in enumerate(spellings):
        parse_token(s)
        idx = model.vocab.encode_known(s)
        if idx is None:
            print(f"prompt token {pos} ({s!r}) is not in the vocabulary",
                  file=sys.stderr)
            return 1
        prompt_ids.append(idx)

    sc = SamplerConfig(
        top_k=top_k, temperature=temperature, seed=seed, max_new_tokens=steps
    )
    result = model.generate(prompt_ids, sc)

    rows = []
    for idx, generated in result:
        spelling = model.vocab.decode(idx)
        name = ""
        if spelling.startswith("C:") and ontology and spelling[2:] in ontology:
            name = ontology.name_of(spelling[2:])
        rows.append({"token": spelling, "source": "generated" if generated else "prompt",
                     "name": name})
        marker = "+" if generated else " "
        print(f"{marker} {spelling}" + (f"  ({name})" if name else ""))

    if out_spec:
        out = Path(out_spec)
        out.mkdir(parents=True, exist_ok=True)
        (out / "generated.json").write_text(
            json.dumps(
                {"prompt": spellings, "seed": seed, "top_k": top_k,
                 "temperature": temperature, "items": rows},
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        write_manifest(
            out, "generate", r.resolved, [str(model_path)], ["generated.json"],
            seed, started, time.monotonic() - t0,
        )
    return 0


def cmd_stats(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    r = _Resolver(args, "stats")
    timelines_path = r.get("timelines", None)
    demo_path = r.get("demographics", None)
    if not (timelines_path and demo_path):
        print("stats requires --timelines and --demographics", file=sys.stderr)
        return 2
    onto_path = r.get("ontology", None)
    out = Path(r.get("out", "stats-out"))
    out.mkdir(parents=True, exist_ok=True)

    timelines = load_timelines(timelines_path)
    demographics = load_demographics(demo_path)
    ontology = load_ontology_file(onto_path) if onto_path else None
    stats = corpus_stats(timelines, demographics, ontology)
    report_mod.write_stats_json(stats, out / "stats.json")
    report_mod.write_stats_tsv(stats, out / "stats.tsv")
    report_mod.render_stats_figure(stats, out / "figures" / "age_bands.png")
    write_manifest(
        out, "stats", r.resolved,
        [str(timelines_path), str(demo_path)],
        ["stats.json", "stats.tsv", "figures/age_bands.png"],
        None, started, time.monotonic() - t0,
    )
    print(
        f"{stats.n_timelines} timelines / {stats.n_patients} patients; "
        f"mean length {stats.mean_length:.1f} concepts over "
        f"{stats.mean_span_years:.2f} years"
    )
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    r = _Resolver(args, "serve")
    model_path = r.get("model", None)
    onto_path = r.get("ontology", None)
    if not (model_path and onto_path):
        print("serve requires --model and --ontology", file=sys.stderr)
        return 2
    bind = args.bind or os.environ.get("CHRONICLE_BIND") or "127.0.0.1:8100"
    serve(str(model_path), str(onto_path), bind)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronicle",
        description="Timeline forecasting pipeline: synthesize, build, train, "
        "evaluate, generate, serve.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="TOML config file; flags override it")
        p.add_argument("-o", "--out", help="output directory")
        return p

    p = add("synth", cmd_synth, help="generate a synthetic world and population")
    p.add_argument("--patients", type=int)
    p.add_argument("--concepts", type=int)
    p.add_argument("--mean-events", type=float)
    p.add_argument("--chronic-fraction", type=float)
    p.add_argument("--hierarchy-depth", type=int)
    p.add_argument("--gap-mean-days", type=float)
    p.add_argument("--transition-peak", type=float)
    p.add_argument("--seed", type=int)

    p = add("build-timelines", cmd_build_timelines, help="events to token timelines")
    p.add_argument("--events")
    p.add_argument("--demographics")
    p.add_argument("--ontology")
    p.add_argument("--bucket-days", type=int)
    p.add_argument("--max-concepts", type=int)
    p.add_argument("--min-concepts", type=int)
    p.add_argument("--min-global-count", type=int)
    p.add_argument("--min-patient-count", type=int)
    p.add_argument("--threads", type=int)

    p = add("split", cmd_split, help="patient-level train/test split")
    p.add_argument("--timelines")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--seed", type=int)

    p = add("train", cmd_train, help="train the sequence model")
    p.add_argument("--timelines")
    p.add_argument("--ontology")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--ff-dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--warmup-ratio", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = add("evaluate", cmd_evaluate, help="windowed top-k precision/recall report")
    p.add_argument("--model")
    p.add_argument("--timelines")
    p.add_argument("--histories")
    p.add_argument("--ranges")
    p.add_argument("--ks")
    p.add_argument("--reference", action="store_const", const=True, default=None,
                   help="cross-check against the brute-force implementation")

    p = add("generate", cmd_generate, help="simulate forward from a prompt")
    p.add_argument("--model")
    p.add_argument("--prompt", help="comma-separated token spellings")
    p.add_argument("--steps", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ontology")

    p = add("stats", cmd_stats, help="corpus statistics tables and figure")
    p.add_argument("--timelines")
    p.add_argument("--demographics")
    p.add_argument("--ontology")

    p = add("serve", cmd_serve, help="HTTP service over a trained artifact")
    p.add_argument("--model")
    p.add_argument("--ontology")
    p.add_argument("--bind", help="host:port (or set CHRONICLE_BIND)")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ChronicleError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
