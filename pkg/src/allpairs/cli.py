"""Command-line interface.

One executable with subcommands for generation (gen), inspection
(inspect), glyph sheets (symbols), training (train), evaluation (eval),
throughput benchmarking (bench), framed batch streaming (stream) and
gradient verification (gradcheck).

Conventions: every run prints its fully resolved configuration as JSON
before doing anything, all randomness flows from --seed (drawn from system
entropy and printed when omitted), outputs land under --out-dir together
with a manifest.json recording version, seeds and a config hash. Exit
codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import secrets
import signal
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, glyphs, packfile, scenes, streams, training, typenet
from .rng import Stream

log = logging.getLogger("allpairs.cli")


class _CliParser(argparse.ArgumentParser):
    def exit(self, status=0, message=None):
        if message:
            self._print_message(message, sys.stderr)
        sys.exit(1 if status else 0)  # argument problems are validation errors


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is None:
        seed = secrets.randbits(63)
        print(f"seed not given; drew {seed} from system entropy")
        return seed
    return args.seed


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("ALLPAIRS_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _print_config(name: str, cfg: dict) -> dict:
    resolved = {"command": name, "version": __version__, **cfg}
    print(json.dumps(resolved, indent=2, sort_keys=True, default=str))
    return resolved


def _write_manifest(out_dir, resolved: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    manifest = {
        "config": resolved,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "created_unix": time.time(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def _glyph_config(args) -> glyphs.GlyphConfig:
    if getattr(args, "glyph_config", None):
        return glyphs.load_glyph_config(args.glyph_config)
    return glyphs.DEFAULT_CONFIG


def _scene_spec(args) -> scenes.SceneSpec:
    return scenes.SceneSpec(args.n, args.k, image_size=args.image_size or 0,
                            glyph_config=_glyph_config(args))


def _add_scene_args(p, with_count=True):
    p.add_argument("--n", type=int, required=True, help="number of pairs N")
    p.add_argument("--k", type=int, required=True, help="alphabet size K (1..18)")
    p.add_argument("--image-size", type=int, default=0,
                   help="canvas override (default: 76 for N<6 else 96)")
    p.add_argument("--glyph-config", help="JSON glyph parameter override file")
    if with_count:
        p.add_argument("--count", type=int, required=True, help="number of samples")


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = _resolve_seed(args)
    spec = _scene_spec(args)
    resolved = _print_config("gen", {
        "n": spec.n_pairs, "k": spec.k_types, "image_size": spec.image_size,
        "count": args.count, "seed": seed, "format": args.format, "out": args.out,
    })
    t0 = time.time()
    samples = [scenes.generate_sample(spec, seed, i) for i in range(args.count)]
    out = Path(args.out)
    if args.format == "pack":
        out.parent.mkdir(parents=True, exist_ok=True)
        packfile.write_pack_samples(out, samples, spec.n_pairs, spec.k_types)
        packfile.write_index_csv(
            out.with_suffix(out.suffix + ".index.csv"),
            ((out.name, s.label, s.seed, s.index) for s in samples))
        _write_manifest(out.parent, resolved)
    else:
        csv_path = packfile.export_png(samples, out)
        _write_manifest(out, resolved)
        print(f"index: {csv_path}")
    rate = args.count / max(time.time() - t0, 1e-9)
    print(f"wrote {args.count} samples to {out} ({rate:.0f} samples/s)")
    return 0


# --------------------------------------------------------------------------
# inspect
# --------------------------------------------------------------------------

def _ascii_art(image_u8: np.ndarray) -> str:
    ramp = " .:-=+*#%@"
    idx = (image_u8.astype(np.int32) * (len(ramp) - 1) + 127) // 255
    return "\n".join("".join(ramp[v] for v in row) for row in idx)


def cmd_inspect(args) -> int:
    pack = packfile.read_pack(args.pack)
    _print_config("inspect", {"pack": args.pack, "index": args.index,
                              "count": pack.count, "width": pack.images.shape[2],
                              "height": pack.images.shape[1],
                              "n_pairs": pack.n_pairs, "k_types": pack.k_types})
    if not 0 <= args.index < pack.count:
        raise ValueError(f"index {args.index} out of range; pack holds {pack.count}")
    image = pack.images[args.index]
    print(f"sample {args.index}: label={pack.labels[args.index]}")
    sidecar = Path(str(args.pack) + ".index.csv")
    if sidecar.exists():
        row = packfile.read_index_csv(sidecar)[args.index]
        spec = scenes.SceneSpec(pack.n_pairs, pack.k_types,
                                image_size=pack.images.shape[1])
        sample = scenes.generate_sample(spec, row["seed"], row["index"])
        print(f"provenance: seed={row['seed']} index={row['index']}")
        if not np.array_equal(packfile.quantize(sample.image), image):
            print("warning: regenerated pixels differ from pack contents")
        for t, v, (x, y) in sample.placements:
            print(f"  {glyphs.SYMBOL_NAMES[t - 1]:14s} type={t:2d} "
                  f"variation={v:<8d} at ({x:3d},{y:3d})")
    if args.ascii:
        print(_ascii_art(image))
    if args.png:
        packfile.save_png(image, args.png)
        print(f"wrote {args.png}")
    return 0


# --------------------------------------------------------------------------
# symbols
# --------------------------------------------------------------------------

def cmd_symbols(args) -> int:
    seed = _resolve_seed(args)
    types = ([int(t) for t in args.types.split(",")] if args.types
             else list(range(1, glyphs.NUM_SYMBOLS + 1)))
    _print_config("symbols", {"types": types, "per_type": args.per_type,
                              "seed": seed, "out": args.out})
    sheet = glyphs.render_sheet(types, args.per_type, seed, _glyph_config(args))
    packfile.save_png(sheet, args.out)
    print(f"wrote {args.out} ({sheet.shape[1]}x{sheet.shape[0]})")
    return 0


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.samples <= 0:
        raise ValueError(f"--samples must be positive, got {args.samples}")
    seed = _resolve_seed(args)
    cfg = typenet.get_preset(args.preset)
    workers = _threads(args)

    if args.task == "crops":
        glyph_cfg = _glyph_config(args)
        image_hw = (scenes.CROP_SIZE, scenes.CROP_SIZE)
        source = training.CropBatchSource(glyph_cfg, seed)
        test_images, test_labels, test_prov = training.build_crop_test_set(
            glyph_cfg, seed, args.test_size)
        batch = args.batch or 128
    else:
        spec = _scene_spec(args)
        image_hw = (spec.image_size, spec.image_size)
        source = training.SceneBatchSource(spec, seed, args.cardinality or None)
        test_images, test_labels, test_prov = training.build_scene_test_set(
            spec, seed, args.test_size)
        batch = args.batch or training.derive_batch_size(spec.image_size)

    tc = training.TrainConfig(
        total_samples=args.samples, batch_size=batch, learning_rate=args.lr,
        eval_period=args.eval_period, test_size=args.test_size,
        cardinality=args.cardinality or None, seed=seed, workers=workers,
        early_stop_acc=args.early_stop, precision=args.precision)

    resolved = _print_config("train", {
        "task": args.task, "preset": args.preset, "model": cfg.to_dict(),
        "image_hw": list(image_hw), "seed": seed, "workers": workers,
        "batch_size": batch, "samples": args.samples,
        "eval_period": args.eval_period, "test_size": args.test_size,
        "cardinality": args.cardinality or "infinite", "lr": args.lr,
        "early_stop": args.early_stop, "precision": args.precision,
        "out_dir": args.out_dir,
    })
    if args.cardinality:
        sched = training.SeedSchedule(args.cardinality, training.train_seed(seed))
        note = " (rounded up)" if sched.rounded else ""
        print(f"seed-list mode: {len(sched.seeds)} seeds x 1000 samples"
              f" = cardinality {sched.effective}{note}")
    _write_manifest(args.out_dir, resolved)

    model = typenet.build(cfg, image_hw, seed=seed, dtype=tc.dtype)
    print(f"model parameters: {model.param_count()}")
    result = training.train_model(model, tc, source, test_images, test_labels,
                                  out_dir=args.out_dir, run_name=args.run_name)
    acc, errors = training.evaluate(model, test_images, test_labels, tc.eval_batch)
    training.write_error_listing(Path(args.out_dir) / f"{args.run_name}-errors.csv",
                                 errors, test_prov)
    print(f"final test accuracy {acc:.4f}; best {result.best_acc:.4f} "
          f"at {result.best_samples} samples; checkpoints in {args.out_dir}")
    return 0


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def cmd_eval(args) -> int:
    model, meta = training.load_model(args.checkpoint)
    _print_config("eval", {"checkpoint": args.checkpoint, "pack": args.pack,
                           "model": meta.get("config"), "out_dir": args.out_dir})
    pack = packfile.read_pack(args.pack)
    acc, errors = training.evaluate_pack(model, pack)
    provenance = None
    sidecar = Path(str(args.pack) + ".index.csv")
    if sidecar.exists():
        rows = packfile.read_index_csv(sidecar)
        provenance = [(r["seed"], r["index"]) for r in rows]
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        training.write_error_listing(Path(args.out_dir) / "errors.csv",
                                     errors, provenance)
    print(f"accuracy {acc:.4f} on {pack.count} samples; {len(errors)} errors")
    return 0


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------

def _bench_worker(job):
    spec, seed, start, count = job
    t0 = time.time()
    for i in range(count):
        scenes.generate_sample(spec, seed, start + i)
    return count, time.time() - t0


def cmd_bench(args) -> int:
    seed = _resolve_seed(args)
    spec = _scene_spec(args)
    threads = _threads(args)
    _print_config("bench", {"n": spec.n_pairs, "k": spec.k_types,
                            "image_size": spec.image_size, "seconds": args.seconds,
                            "seed": seed, "threads": threads})
    # warm the glyph caches so the measurement reflects steady state
    for i in range(200):
        scenes.generate_sample(spec, seed, i)

    deadline = time.time() + args.seconds
    n = 0
    while time.time() < deadline:
        for i in range(100):
            scenes.generate_sample(spec, seed, n + i)
        n += 100
    single = n / args.seconds
    print(f"single-threaded: {single:.0f} samples/s "
          f"({spec.image_size}x{spec.image_size} canvas)")

    if threads > 1:
        import multiprocessing
        chunk = max(int(single * args.seconds / threads), 100)
        jobs = [(spec, seed, w * 10_000_000, chunk) for w in range(threads)]
        t0 = time.time()
        with multiprocessing.get_context("fork").Pool(threads) as pool:
            done = sum(c for c, _ in pool.map(_bench_worker, jobs))
        rate = done / (time.time() - t0)
        print(f"{threads} workers: {rate:.0f} samples/s total "
              f"({rate / threads:.0f} per core)")
    else:
        print(f"1 worker available: multi-worker rate equals single-threaded")
    return 0


# --------------------------------------------------------------------------
# stream
# --------------------------------------------------------------------------

def cmd_stream(args) -> int:
    seed = _resolve_seed(args)
    spec = _scene_spec(args)
    cursor = streams.Cursor.parse(args.cursor) if args.cursor else streams.Cursor(seed, 0)
    n_batches = args.batches if args.batches > 0 else None
    _print_config("stream", {"n": spec.n_pairs, "k": spec.k_types,
                             "batch": args.batch, "cursor": str(cursor),
                             "port": args.port, "stdout": args.to_stdout,
                             "batches": n_batches})
    stop = {"flag": False}

    def on_sigint(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGINT, on_sigint)
    if args.to_stdout:
        n = streams.stream_to_file(sys.stdout.buffer, spec, args.batch, cursor,
                                   n_batches, stop=lambda: stop["flag"])
        print(f"streamed {n} samples", file=sys.stderr)
        return 0
    server = streams.FrameServer(("127.0.0.1", args.port), spec, args.batch,
                                 cursor, n_batches)
    signal.signal(signal.SIGINT, lambda s, f: server.stop())
    print(f"serving frames on port {server.server_address[1]} "
          f"from cursor {cursor} (ctrl-c for clean shutdown)")
    server.serve_forever()
    return 0


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from . import neural
    dtype = np.float64 if args.precision == "double" else np.float32
    _print_config("gradcheck", {"preset": args.preset, "precision": args.precision})
    if args.precision != "double":
        print("note: single-precision results are informational only; "
              "tolerances apply to --precision double")
    stream = Stream("gradcheck-cli", 7)
    x4 = (stream.uniform_block(2 * 6 * 6 * 3).reshape(2, 6, 6, 3) - 0.5).astype(dtype) * 2
    x2 = (stream.uniform_block(4 * 5).reshape(4, 5) - 0.5).astype(dtype)
    checks = []
    for k, s in ((3, 1), (5, 2), (1, 1)):
        layer = neural.Conv2d(f"conv{k}x{k}s{s}", 3, 4, k, s, Stream("i", k, s),
                              bias=(k == 1), dtype=dtype)
        checks.append((layer.name, neural.gradcheck_layer(layer, x4.copy(), stream), 1e-6))
    checks.append(("batchnorm", neural.gradcheck_layer(
        neural.BatchNorm("bn", 3, dtype=dtype), x4.copy(), stream), 1e-5))
    for kind in neural.ACTIVATION_KINDS:
        checks.append((f"act.{kind}", neural.gradcheck_layer(
            neural.Activation(kind), x4.copy() + dtype(0.07), stream), 1e-6))
    for kind in ("max", "avg"):
        checks.append((f"pool.{kind}3", neural.gradcheck_layer(
            neural.Pool(kind, 3), x4.copy(), stream), 1e-6))
    checks.append(("dense", neural.gradcheck_layer(
        neural.Dense("fc", 5, 3, Stream("i", "fc"), dtype=dtype), x2, stream), 1e-6))
    model = typenet.build(typenet.get_preset(args.preset), (12, 12), seed=5, dtype=dtype)
    xm = stream.uniform_block(2 * 12 * 12).reshape(2, 1, 12, 12).astype(dtype)
    checks.append((f"model.{args.preset}", neural.gradcheck_model(
        model, xm, np.array([0, 1])), 1e-4))

    failed = 0
    for name, report, tol in checks:
        worst = max(report.values())
        ok = worst < tol or args.precision != "double"
        status = "pass" if worst < tol else ("info" if ok else "FAIL")
        failed += status == "FAIL"
        print(f"{status:4s}  {name:16s} max rel err {worst:.3e} (tol {tol:g})")
    if failed:
        raise RuntimeError(f"{failed} gradient checks failed")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _CliParser(prog="allpairs", description=__doc__,
                   formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset on disk")
    _add_scene_args(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("pack", "png"), default="pack")
    g.set_defaults(fn=cmd_gen)

    i = sub.add_parser("inspect", help="show one sample from a pack")
    i.add_argument("pack")
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--ascii", action="store_true")
    i.add_argument("--png")
    i.set_defaults(fn=cmd_inspect)

    s = sub.add_parser("symbols", help="render a symbol contact sheet")
    s.add_argument("--types", help="comma-separated type ids (default all 18)")
    s.add_argument("--per-type", type=int, default=8)
    s.add_argument("--seed", type=int)
    s.add_argument("--glyph-config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_symbols)

    t = sub.add_parser("train", help="train a model")
    _add_scene_args(t, with_count=False)
    t.add_argument("--task", choices=("scenes", "crops"), default="scenes")
    t.add_argument("--preset", default="desk",
                   help="model preset (see typenet.presets)")
    t.add_argument("--samples", type=int, required=True)
    t.add_argument("--batch", type=int, default=0)
    t.add_argument("--cardinality", type=int, default=0,
                   help="fixed training-set size via seed list (0 = infinite)")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--eval-period", type=int, default=50_000)
    t.add_argument("--test-size", type=int, default=20_000)
    t.add_argument("--early-stop", type=float, default=None)
    t.add_argument("--precision", choices=("single", "double"), default="single")
    t.add_argument("--threads", type=int)
    t.add_argument("--run-name", default="run")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a pack")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--pack", required=True)
    e.add_argument("--out-dir")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="measure generation throughput")
    _add_scene_args(b, with_count=False)
    b.add_argument("--seconds", type=float, default=5.0)
    b.add_argument("--seed", type=int)
    b.add_argument("--threads", type=int)
    b.set_defaults(fn=cmd_bench)

    st = sub.add_parser("stream", help="serve framed sample batches")
    _add_scene_args(st, with_count=False)
    group = st.add_mutually_exclusive_group(required=True)
    group.add_argument("--port", type=int)
    group.add_argument("--stdout", dest="to_stdout", action="store_true")
    st.add_argument("--batch", type=int, default=600)
    st.add_argument("--cursor", help="resume cursor as '<seed>:<index>'")
    st.add_argument("--batches", type=int, default=0, help="0 = unbounded")
    st.add_argument("--seed", type=int)
    st.set_defaults(fn=cmd_stream)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--preset", default="tiny")
    gc.add_argument("--precision", choices=("single", "double"), default="double")
    gc.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
