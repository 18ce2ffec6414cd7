"""Operator entry points: preprocessing runs, serving, and exports.

Exit codes: 0 success, 1 usage error, 2 data error.

    remap preprocess --dataset manifest.json --count 100 --epochs 10 \
        --seed 0 [--surrogate] [--session DIR] [--transitions chain.json]
    remap serve --session DIR --port 8000 [--host H] [--ui DIST_DIR]
    remap export --session DIR --what distances|embeddings|models --out DIR

The session directory defaults to $REMAP_SESSION_DIR, then ./session.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import store
from .arch import ArchError, format_count
from .data import DataError, load_dataset
from .distances import METRICS, distance_matrix, to_csv
from .engine import EngineError, SessionEngine
from .sampler import SamplerError, TransitionModel, sample_batch
from .store import Journal, StoreError
from .trainer import TrainingConfig

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_ERROR)


def _session_dir(args) -> Path:
    if args.session:
        return Path(args.session)
    env = os.environ.get("REMAP_SESSION_DIR")
    if env:
        return Path(env)
    return Path("session")


def build_parser() -> _Parser:
    parser = _Parser(prog="remap", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="sample, train and embed an initial corpus")
    pre.add_argument("--dataset", required=True, help="dataset manifest (JSON)")
    pre.add_argument("--count", type=int, default=100, help="architectures to sample")
    pre.add_argument("--epochs", type=int, default=10, help="training epochs per model")
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--surrogate", action="store_true",
                     help="use the deterministic surrogate trainer")
    pre.add_argument("--session", help="session directory (default: $REMAP_SESSION_DIR)")
    pre.add_argument("--transitions", help="transition-model config JSON")
    pre.set_defaults(func=cmd_preprocess)

    srv = sub.add_parser("serve", help="run the HTTP service over a session")
    srv.add_argument("--session", help="session directory (default: $REMAP_SESSION_DIR)")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--ui", help="directory of built frontend assets to serve at /")
    srv.set_defaults(func=cmd_serve)

    exp = sub.add_parser("export", help="export distances, embeddings or models")
    exp.add_argument("--session", help="session directory (default: $REMAP_SESSION_DIR)")
    exp.add_argument("--what", required=True, choices=["distances", "embeddings", "models"])
    exp.add_argument("--out", required=True, help="output directory")
    exp.set_defaults(func=cmd_export)
    return parser


def cmd_preprocess(args) -> int:
    session_dir = _session_dir(args)
    session_dir.mkdir(parents=True, exist_ok=True)

    manifest_src = Path(args.dataset)
    with open(manifest_src) as f:
        manifest = json.load(f)
    for key in ("images", "labels"):
        if key in manifest:
            manifest[key] = str((manifest_src.parent / manifest[key]).resolve())
    manifest_path = session_dir / "dataset.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    dataset = load_dataset(manifest_path)

    config = TrainingConfig(epochs=args.epochs, seed=args.seed,
                            mode="surrogate" if args.surrogate else "real")
    journal_path = session_dir / store.JOURNAL_NAME
    resuming = journal_path.exists()
    journal = Journal(journal_path)
    if resuming:
        engine = SessionEngine.from_session(store.load(session_dir), dataset,
                                            journal=journal, start_worker=False)
        engine.config = config
    else:
        engine = SessionEngine(dataset, config, journal=journal, start_worker=False)
    journal.append({"type": "session", "version": 1, "dataset": "dataset.json",
                    "config": config.to_dict()})

    chain = (TransitionModel.from_config(args.transitions) if args.transitions
             else TransitionModel())
    archs = sample_batch(chain, args.count, args.seed,
                         input_shape=dataset.input_shape,
                         num_classes=dataset.num_classes)
    for i, arch in enumerate(archs, 1):
        entry = engine.add_model(arch)
        if entry.trained:
            print(f"[{i}/{args.count}] {arch.id} skip (already trained)")
            continue
        started = time.perf_counter()
        record = engine.train_sync(arch.id)
        took = time.perf_counter() - started
        print(f"[{i}/{args.count}] {arch.id} params={format_count(record.param_count)} "
              f"val_acc={record.final_val_accuracy:.3f} ({took:.1f}s)")
    try:
        base_ids = engine.refit()
        print(f"session {session_dir}: {len(base_ids)} models embedded, "
              f"projections fitted")
    except EngineError as exc:
        print(f"session {session_dir}: projections not fitted ({exc})")
    journal.close()
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    session_dir = _session_dir(args)
    if not (session_dir / store.JOURNAL_NAME).exists():
        raise StoreError(f"no session at {session_dir} (missing journal.jsonl)")
    session = store.load(session_dir)
    manifest_path = session_dir / "dataset.json"
    dataset = load_dataset(manifest_path) if manifest_path.exists() else None
    journal = Journal(session_dir / store.JOURNAL_NAME)
    engine = SessionEngine.from_session(session, dataset, journal=journal)
    app = create_app(engine, static_dir=args.ui)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    finally:
        engine.shutdown()
    return 0


def cmd_export(args) -> int:
    session_dir = _session_dir(args)
    if not (session_dir / store.JOURNAL_NAME).exists():
        raise StoreError(f"no session at {session_dir} (missing journal.jsonl)")
    session = store.load(session_dir)
    engine = SessionEngine.from_session(session, dataset=None, start_worker=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    trained = [i for i, e in engine.models.items() if e.trained]
    if args.what == "distances":
        for metric in METRICS:
            path = out / f"distances_{metric}.csv"
            if len(trained) >= 2:
                matrix = engine.matrices[metric]
                if matrix is None or set(matrix.ids) != set(trained):
                    matrix = distance_matrix([engine._item(i) for i in trained],
                                             metric, ids=trained)
                path.write_text(to_csv(matrix))
            else:
                path.write_text("id\n")
            print(f"wrote {path}")
    elif args.what == "embeddings":
        path = out / "embeddings.csv"
        lines = ["id,projection,x,y"]
        kinds = ["interpretable"]
        if engine.projections.fitted:
            kinds += list(METRICS)
        for kind in kinds:
            if kind == "interpretable" and not trained:
                continue
            payload = engine.projection(kind)
            for point in payload["points"]:
                lines.append(f"{point['id']},{kind},{point['x']!r},{point['y']!r}")
        path.write_text("\n".join(lines) + "\n")
        print(f"wrote {path}")
    else:  # models
        path = out / "models.json"
        payload = [engine.model_detail(i) for i in engine.models]
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, StoreError, SamplerError, EngineError, ArchError,
            OSError, json.JSONDecodeError) as exc:
        print(f"remap: error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
