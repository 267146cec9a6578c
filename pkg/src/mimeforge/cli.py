"""Command-line entry point: the full pipeline behind one executable.

Every command takes a JSON run config, seeds all randomness from it, writes
its outputs plus a resolved-config/manifest pair into the output directory,
and exits 0 on success or with the error category's code and a single
``category: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, MimeforgeError, MissingInputError
from .runconfig import RunConfig, load_run_config, write_run_manifest


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 0
    try:
        _apply_threads(args.threads)
        args.func(args)
    except MimeforgeError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        if os.environ.get("MIMEFORGE_DEBUG"):
            raise
        print(f"internal-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimeforge", description=__doc__)
    p.add_argument("--version", action="version", version=f"mimeforge {__version__}")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap worker threads (default: MIMEFORGE_THREADS env var, then CPU count)",
    )
    sub = p.add_subparsers(dest="command")

    def cmd(name, fn, help_):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--config", required=True, help="run config JSON")
        c.add_argument("--out", default=None, help="output directory (default: paths.out_dir)")
        c.set_defaults(func=fn)
        return c

    c = cmd("teacher-gen", cmd_teacher_gen, "simulate the MUAP dataset with the teacher")
    c.add_argument("--effect-axis", default=None, help="also sweep this condition and emit a summary CSV")
    c.add_argument("--effect-steps", type=int, default=8)
    c = cmd("train", cmd_train, "train the generative model")
    c.add_argument("--dataset", default=None, help="override paths.dataset")

    c = cmd("morph", cmd_morph, "re-decode a dataset sample under new conditions")
    c.add_argument("--source-index", type=int, required=True)
    c.add_argument("--conditions", default=None, help="6 comma-separated normalized values")
    c.add_argument("--target-index", type=int, default=None, help="take conditions from this record")

    c = cmd("sample", cmd_sample, "decode a seeded standard-normal latent")
    c.add_argument("--conditions", required=True)
    c.add_argument("--seed", type=int, default=0)

    c = cmd("sweep", cmd_sweep, "decode one latent along a condition path")
    c.add_argument("--path", required=True, help="condition path JSON file")
    c.add_argument("--steps", type=int, default=9)
    c.add_argument("--source-index", type=int, default=None, help="encode this record as origin")
    c.add_argument("--latent-seed", type=int, default=None, help="or sample the origin latent")

    c = cmd("traverse", cmd_traverse, "error curve through three teacher ground truths")
    c.add_argument("--axis", default="velocity")
    c.add_argument("--steps", type=int, default=9)

    c = cmd("synth", cmd_synth, "synthesize surface EMG from spike trains")
    c.add_argument("--excitation", default=None, help="excitation profile JSON")
    c.add_argument("--spikes", default=None, help="precomputed spike trains JSON")
    c.add_argument("--pool-units", type=int, default=None, help="motor neuron count (default: #records)")
    c.add_argument("--pool-seed", type=int, default=0)
    c.add_argument("--mu-records", required=True, help="comma-separated dataset record indices, one per MU")
    c.add_argument("--condition-path", default=None, help="dynamic synthesis path JSON")
    c.add_argument("--noise-var", type=float, default=None)
    c.add_argument("--csv", action="store_true", help="also export per-channel CSV")

    c = cmd("eval", cmd_eval, "morph accuracy + latent informativeness report")
    c.add_argument("--pairs-per-mu", type=int, default=8)
    c.add_argument("--regressor-layers", type=int, default=2)
    c.add_argument("--regressor-epochs", type=int, default=400)
    c.add_argument("--skip-informativeness", action="store_true")

    c = cmd("bench", cmd_bench, "throughput: generative decode vs teacher simulation")
    c.add_argument("--n-muaps", type=int, default=6)
    c.add_argument("--n-conditions", type=int, default=4)
    c.add_argument("--repeats", type=int, default=3)

    c = sub.add_parser("gradcheck", help="finite-difference check of every layer family")
    c.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("serve", help="run the HTTP generation service")
    c.add_argument("--config", required=True)
    c.add_argument("--checkpoint", default=None, help="preload this checkpoint")
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--port", type=int, default=8000)
    c.set_defaults(func=cmd_serve)
    return p


def _apply_threads(n: int | None) -> None:
    import torch

    if n is None:
        env = os.environ.get("MIMEFORGE_THREADS")
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError(f"--threads must be >= 1, got {n}")
    torch.set_num_threads(n)
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass
    os.environ["MIMEFORGE_RESOLVED_THREADS"] = str(n)


def _out_dir(args, rc: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(rc.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads() -> int:
    return int(os.environ.get("MIMEFORGE_RESOLVED_THREADS", "1"))


def _parse_conditions(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 6:
        raise ConfigError(f"expected 6 comma-separated condition values, got {len(parts)}")
    try:
        return np.array([float(v) for v in parts], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"bad condition value: {exc}") from None


def _load_dataset(rc: RunConfig, override: str | None = None):
    from .dataset import read_dataset

    path = override or rc.paths.dataset
    if not path:
        raise ConfigError("paths.dataset is not set in the config")
    return read_dataset(path), Path(path)


def _load_model(rc: RunConfig):
    from .checkpoint import load_checkpoint

    if not rc.paths.checkpoint:
        raise ConfigError("paths.checkpoint is not set in the config")
    model, iteration = load_checkpoint(rc.paths.checkpoint, rc.model_config_resolved())
    model.eval()
    return model, Path(rc.paths.checkpoint)


def _write_records(path, rows, cols, t, ranges, mu_ids, labels, conditions, muaps) -> None:
    """Tensor records reuse the dataset record layout."""
    from .dataset import DatasetFile, write_dataset

    d = DatasetFile(
        rows,
        cols,
        t,
        ranges,
        np.asarray(mu_ids, dtype=np.uint32),
        np.asarray(labels, dtype=np.uint32),
        np.asarray(conditions, dtype=np.float64),
        np.asarray(muaps, dtype=np.float32),
    )
    write_dataset(d, path)


def cmd_teacher_gen(args) -> None:
    from .dataset import build_dataset, export_conditions_csv, make_motor_units, write_dataset

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    ranges = rc.condition_ranges()
    mus = make_motor_units(rc.dataset.mu_count, rc.dataset.mu_seed, ranges, rc.dataset.muscle_labels)
    ds = build_dataset(
        rc.cylinder_config(), mus, rc.dataset.grid, ranges, threads=_threads(), window=rc.dataset.window
    )
    target = Path(rc.paths.dataset) if rc.paths.dataset else out / "dataset.bmds"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, target)
    export_conditions_csv(ds, out / "conditions.csv")
    if args.effect_axis:
        from .conditions import PhysioConditions
        from .teacher import condition_effect_report, write_effect_report_csv

        rows_ = condition_effect_report(
            rc.cylinder_config(), PhysioConditions(), args.effect_axis, args.effect_steps, ranges=ranges
        )
        write_effect_report_csv(rows_, out / f"effect_{args.effect_axis}.csv")
    write_run_manifest(out, rc, {"config": args.config})
    print(f"wrote {ds.sample_count} records ({ds.unique_mu_ids.size} MUs) to {target}")


def cmd_train(args) -> None:
    from .dataset import split
    from .model import build_model
    from .trainer import train

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    ds, ds_path = _load_dataset(rc, args.dataset)
    train_ids, test_ids = split(ds, rc.dataset.train_frac, rc.dataset.split_seed)
    (out / "split.json").write_text(json.dumps({"train": train_ids, "test": test_ids}) + "\n")
    model = build_model(rc.model_config_resolved(), rc.model.init_seed)
    result = train(ds, train_ids, model, rc.train_config(), rc.loss_weights(), out)
    if rc.paths.checkpoint:
        from .checkpoint import save_checkpoint

        Path(rc.paths.checkpoint).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, rc.paths.checkpoint, result.iterations)
    write_run_manifest(out, rc, {"config": args.config, "dataset": ds_path})
    print(
        f"trained {result.iterations} iterations; metrics: {result.metrics_path}; "
        f"checkpoints: {len(result.checkpoint_paths)}"
    )


def cmd_morph(args) -> None:
    from .generate import morph

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    ds, ds_path = _load_dataset(rc)
    model, ckpt_path = _load_model(rc)
    if not 0 <= args.source_index < ds.sample_count:
        raise ConfigError(f"source index {args.source_index} out of range [0, {ds.sample_count})")
    if (args.conditions is None) == (args.target_index is None):
        raise ConfigError("pass exactly one of --conditions or --target-index")
    if args.target_index is not None and not 0 <= args.target_index < ds.sample_count:
        raise ConfigError(f"target index {args.target_index} out of range [0, {ds.sample_count})")
    cs = (
        _parse_conditions(args.conditions)
        if args.conditions is not None
        else ds.conditions[args.target_index]
    )
    result = morph(ds.muaps[args.source_index], cs, model)
    _write_records(
        out / "morph.bmds", ds.rows, ds.cols, ds.time_samples, ds.ranges,
        [ds.mu_ids[args.source_index]], [0], [cs], [result],
    )
    write_run_manifest(out, rc, {"config": args.config, "dataset": ds_path, "checkpoint": ckpt_path})
    print(f"morphed record {args.source_index}; wrote {out / 'morph.bmds'}")


def cmd_sample(args) -> None:
    from .generate import sample

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    model, ckpt_path = _load_model(rc)
    cs = _parse_conditions(args.conditions)
    result = sample(cs, args.seed, model)
    _write_records(
        out / "sample.bmds", model.cfg.rows, model.cfg.cols, model.cfg.time_samples,
        rc.condition_ranges(), [0], [0], [cs], [result],
    )
    write_run_manifest(out, rc, {"config": args.config, "checkpoint": ckpt_path})
    print(f"sampled seed {args.seed}; wrote {out / 'sample.bmds'}")


def cmd_sweep(args) -> None:
    from .generate import ConditionPath, sweep, write_step_metadata_csv

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    model, ckpt_path = _load_model(rc)
    path_file = Path(args.path)
    if not path_file.exists():
        raise MissingInputError(f"condition path file not found: {path_file}")
    path = ConditionPath.from_json_obj(json.loads(path_file.read_text()))
    inputs = {"config": args.config, "checkpoint": ckpt_path, "path": path_file}
    if (args.source_index is None) == (args.latent_seed is None):
        raise ConfigError("pass exactly one of --source-index or --latent-seed")
    if args.source_index is not None:
        ds, ds_path = _load_dataset(rc)
        inputs["dataset"] = ds_path
        res = sweep(model, path, args.steps, muap=ds.muaps[args.source_index])
    else:
        import torch

        gen = torch.Generator().manual_seed(args.latent_seed)
        z = torch.randn(1, model.cfg.latent_dim, generator=gen, dtype=model.cfg.torch_dtype)
        res = sweep(model, path, args.steps, latent=z)
    _write_records(
        out / "sweep.bmds", model.cfg.rows, model.cfg.cols, model.cfg.time_samples,
        rc.condition_ranges(), np.zeros(args.steps), np.arange(args.steps),
        res.conditions, res.muaps,
    )
    rows = [
        {
            "step": i,
            "fraction": float(res.fractions[i]),
            **{f"c{j + 1}": float(res.conditions[i, j]) for j in range(6)},
            "distance": float(res.distances[i]),
            "nrmse_percent": "",
        }
        for i in range(args.steps)
    ]
    write_step_metadata_csv(rows, out / "sweep_steps.csv")
    write_run_manifest(out, rc, inputs)
    print(f"swept {args.steps} steps; wrote {out / 'sweep.bmds'}")


def cmd_traverse(args) -> None:
    from .dataset import split
    from .generate import traversal_experiment, write_step_metadata_csv

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    ds, ds_path = _load_dataset(rc)
    model, ckpt_path = _load_model(rc)
    _, test_ids = split(ds, rc.dataset.train_frac, rc.dataset.split_seed)
    res = traversal_experiment(ds, test_ids, model, axis=args.axis, steps=args.steps)
    write_step_metadata_csv(res.per_mu_rows, out / "traversal_steps.csv")
    with open(out / "traversal_curve.csv", "w") as f:
        f.write("step,fraction,mean_nrmse_percent\n")
        for i in range(len(res.fractions)):
            v = "" if np.isnan(res.mean_nrmse[i]) else f"{res.mean_nrmse[i]:.6g}"
            f.write(f"{i},{res.fractions[i]:.6g},{v}\n")
    _write_records(
        out / "traversal.bmds", ds.rows, ds.cols, ds.time_samples, ds.ranges,
        res.record_mu_ids, res.record_steps, res.record_conditions, res.muaps,
    )
    write_run_manifest(out, rc, {"config": args.config, "dataset": ds_path, "checkpoint": ckpt_path})
    gt = [f"{res.mean_nrmse[s]:.3f}%" for s in res.gt_steps]
    print(f"traversal over {len(test_ids)} MUs; mean nRMSE at ground truths: {gt}")


def cmd_synth(args) -> None:
    import torch

    from .emg import (
        ExcitationProfile, PoolConfig, export_emg_csv, generate_spike_trains,
        read_spike_trains_json, synthesize_dynamic, synthesize_static, write_emg,
        write_spike_trains_json,
    )
    from .generate import ConditionPath
    from .model import muap_to_tensor, tensor_to_muap

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    ds, ds_path = _load_dataset(rc)
    model, ckpt_path = _load_model(rc)
    records = [int(v) for v in args.mu_records.split(",")]
    for r in records:
        if not 0 <= r < ds.sample_count:
            raise ConfigError(f"record index {r} out of range")
    inputs = {"config": args.config, "dataset": ds_path, "checkpoint": ckpt_path}

    if args.spikes:
        spikes = read_spike_trains_json(args.spikes)
        inputs["spikes"] = Path(args.spikes)
    else:
        if not args.excitation:
            raise ConfigError("pass --excitation (or --spikes) to drive the pool")
        exc_file = Path(args.excitation)
        if not exc_file.exists():
            raise MissingInputError(f"excitation file not found: {exc_file}")
        exc = ExcitationProfile.from_json_obj(json.loads(exc_file.read_text()))
        inputs["excitation"] = exc_file
        pool = PoolConfig(n_units=args.pool_units or len(records), seed=args.pool_seed)
        if pool.n_units != len(records):
            raise ConfigError(f"pool has {pool.n_units} units but {len(records)} MU records given")
        spikes = generate_spike_trains(pool, exc)
        write_spike_trains_json(spikes, out / "spikes.json")

    with torch.no_grad():
        latents = model.encode(muap_to_tensor(ds.muaps[records], model.cfg.torch_dtype)).mu
        if args.condition_path:
            path_file = Path(args.condition_path)
            if not path_file.exists():
                raise MissingInputError(f"condition path file not found: {path_file}")
            path = ConditionPath.from_json_obj(json.loads(path_file.read_text()))
            inputs["condition_path"] = path_file
            rec = synthesize_dynamic(model, latents, path, spikes, noise_variance=args.noise_var)
        else:
            muaps = np.stack(
                [
                    tensor_to_muap(model.decode(latents[i : i + 1], ds.conditions[records[i]]))[0]
                    for i in range(len(records))
                ]
            )
            rec = synthesize_static(muaps, spikes, noise_variance=args.noise_var)
    write_emg(rec, out / "emg.bmeg")
    if args.csv:
        export_emg_csv(rec, out / "emg.csv")
    write_run_manifest(out, rc, inputs)
    print(
        f"synthesized {rec.signal.shape[2]} samples x {rec.signal.shape[0]}x{rec.signal.shape[1]} "
        f"channels from {spikes.total_spikes()} spikes; wrote {out / 'emg.bmeg'}"
    )


def cmd_eval(args) -> None:
    import torch

    from .dataset import split
    from .generate import validation_nrmse
    from .metrics import RegressorConfig, informativeness
    from .model import muap_to_tensor

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    ds, ds_path = _load_dataset(rc)
    model, ckpt_path = _load_model(rc)
    train_ids, test_ids = split(ds, rc.dataset.train_frac, rc.dataset.split_seed)
    train_err = validation_nrmse(ds, train_ids, model, seed=rc.train.seed, pairs_per_mu=args.pairs_per_mu)
    test_err = validation_nrmse(ds, test_ids, model, seed=rc.train.seed, pairs_per_mu=args.pairs_per_mu)

    lines = [
        f"train morph nRMSE: {train_err:.4f}%",
        f"held-out morph nRMSE: {test_err:.4f}%",
        f"held-out / train ratio: {test_err / train_err:.3f}",
    ]
    if not args.skip_informativeness:
        with torch.no_grad():
            latents = []
            for start in range(0, ds.sample_count, 64):
                batch = ds.muaps[start : start + 64]
                latents.append(model.encode(muap_to_tensor(batch, model.cfg.torch_dtype)).mu.numpy())
        latents = np.concatenate(latents)
        rep = informativeness(
            latents,
            ds.conditions,
            RegressorConfig(hidden_layers=args.regressor_layers, epochs=args.regressor_epochs),
            with_chance=True,
        )
        with open(out / "informativeness.csv", "w") as f:
            f.write("condition,score_percent,chance_percent\n")
            for row in rep.as_rows():
                f.write(f"{row['condition']},{row['score_percent']:.4f},{row['chance_percent']:.4f}\n")
        lines += [
            f"informativeness median: {rep.median:.2f}% (chance {rep.chance_median:.2f}%)",
        ]
    (out / "eval_summary.txt").write_text("\n".join(lines) + "\n")
    write_run_manifest(out, rc, {"config": args.config, "dataset": ds_path, "checkpoint": ckpt_path})
    print("\n".join(lines))


def cmd_bench(args) -> None:
    from .bench import format_bench_text, throughput_bench, write_bench_csv
    from .model import build_model

    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    if rc.paths.checkpoint and Path(rc.paths.checkpoint).exists():
        model, _ = _load_model(rc)
    else:  # timing only; random weights are representative
        model = build_model(rc.model_config_resolved(), rc.model.init_seed)
        model.eval()
    report = throughput_bench(
        model,
        rc.cylinder_config(),
        n_muaps=args.n_muaps,
        n_conditions=args.n_conditions,
        repeats=args.repeats,
        ranges=rc.condition_ranges(),
    )
    write_bench_csv(report, out / "bench.csv")
    text = format_bench_text(report)
    (out / "bench.txt").write_text(text + "\n")
    write_run_manifest(out, rc, {"config": args.config})
    print(text)


def cmd_gradcheck(args) -> None:
    from .errors import NumericalError
    from .gradcheck import run_layer_checks

    results = run_layer_checks()
    worst = max(results.values())
    for family, err in results.items():
        print(f"{family:>20}: {err:.3e}")
    print(f"{'worst':>20}: {worst:.3e}")
    if worst >= 1e-4:
        raise NumericalError(f"gradient check failed: worst relative error {worst:.3e} >= 1e-4")


def cmd_serve(args) -> None:
    import uvicorn

    from .service.app import ServiceState, create_app

    rc = load_run_config(args.config)
    state = ServiceState(rc)
    if args.checkpoint:
        state.load_checkpoint(args.checkpoint)
    uvicorn.run(create_app(state), host=args.host, port=args.port)


if __name__ == "__main__":
    sys.exit(main())
