"""Command-line entry points: training, generation, evaluation, ablation,
CFG sweeps, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import checkpoint as ckpt
from . import experiments
from .config import (RunConfig, default_config, load_config,
                     load_or_generate_dataset, make_planner_config,
                     make_tokenizer_config)
from .errors import MtokError
from .pipeline import ControlRequest, GenerationRequest, ModelBundle, generate
from .text import ContrastiveEmbedder, build_vocab
from .tokenizer import (MotionTokenizer, TokenizerTrainer, freeze_and_retrain_decoder,
                        token_count)
from .wire import decode_array, encode_array


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config, args.preset) if args.config else default_config(args.preset)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_lock(out: Path) -> FileLock:
    return FileLock(str(out / ".train.lock"))


def cmd_train_tokenizer(args) -> int:
    cfg = _load_cfg(args)
    if args.variant:
        cfg.set("tokenizer", "decoder_variant", args.variant)
    out = _outdir(args)
    with _train_lock(out):
        cfg.write_snapshot(out)
        dataset = load_or_generate_dataset(cfg)
        tok_cfg = make_tokenizer_config(cfg, dataset.dim)
        steps = args.steps or cfg.getint("training", "tokenizer_steps")
        seed = cfg.getint("training", "seed")
        path = out / args.name
        done = 0
        model = MotionTokenizer(tok_cfg, seed=seed)
        trainer = TokenizerTrainer(
            model, dataset, seed=seed,
            batch_size=cfg.getint("training", "batch_size"),
            lr=cfg.getfloat("training", "lr"),
            lr_final=cfg.getfloat("training", "lr_final"),
            decay_fraction=cfg.getfloat("training", "decay_fraction"))
        if args.resume and path.exists():
            loaded = ckpt.load_checkpoint(path, expect_component="tokenizer")
            model.load_full_state(loaded.tensors)
            done = int(loaded.config.get("steps_done", 0))
            if loaded.optimizer:
                trainer.opt.load_state_dict(loaded.optimizer)
            print(f"resuming from {path} at step {done}")
        remaining = max(0, steps - done)
        if remaining:
            report = trainer.run(remaining, log_every=args.log_every)
            print(f"trained {report.steps} steps in {report.seconds:.1f}s; "
                  f"dead codes {report.dead_code_fraction:.2f}")
        config_record = {"tokenizer": model.cfg.to_json(), "fps": model.fps,
                         "skeleton": model.skeleton.to_json(),
                         "steps_done": done + remaining,
                         "config_hash": cfg.config_hash()}
        ckpt.save_checkpoint(path, "tokenizer", config_record, model.full_state(),
                             trainer.opt.state_dict())
        print(f"wrote {path}")
    return 0


def _ensure_text_encoder(cfg: RunConfig, out: Path, dataset):
    """Returns an object with .encode(prompt) and .dim.

    With [planner] external_embeddings set, precomputed 512-dim embeddings are
    adopted instead of training the native encoder; the file is copied next to
    the checkpoints so serving finds it.
    """
    external = cfg.get("planner", "external_embeddings", "").strip()
    if external:
        import shutil

        from .text import FileTextEncoder

        target = out / "external_embeddings.bin"
        if not target.exists():
            shutil.copy(external, target)
        print(f"using external text embeddings from {external}")
        return FileTextEncoder(target)
    path = out / "text_encoder.ckpt"
    if path.exists():
        return ckpt.load_embedder(path, "text_encoder").text
    print("text encoder missing; contrastive-pretraining it now")
    vocab = build_vocab([it.caption for it in dataset.split("train")])
    embedder = ContrastiveEmbedder(vocab, dataset.dim,
                                   dim=cfg.getint("planner", "d_model"),
                                   seed=cfg.getint("training", "seed"))
    embedder.train(dataset, steps=cfg.getint("training", "embedder_steps"),
                   seed=cfg.getint("training", "seed"))
    ckpt.save_embedder(path, embedder, "text_encoder")
    print(f"wrote {path}")
    return embedder.text


def _ensure_evaluator(cfg: RunConfig, out: Path, dataset) -> ContrastiveEmbedder:
    from .evalmetrics import train_eval_embedder

    path = out / "evaluator.ckpt"
    if path.exists():
        return ckpt.load_embedder(path)
    print("evaluator missing; training the contrastive evaluator now")
    embedder = train_eval_embedder(dataset, dim=cfg.getint("eval", "embed_dim"),
                                   steps=cfg.getint("training", "embedder_steps"),
                                   seed=cfg.getint("training", "seed"))
    ckpt.save_embedder(path, embedder)
    print(f"wrote {path}")
    return embedder


def cmd_train_planner(args) -> int:
    from .planner import PlannerTrainer, TokenPlanner

    cfg = _load_cfg(args)
    out = _outdir(args)
    with _train_lock(out):
        cfg.write_snapshot(out)
        dataset = load_or_generate_dataset(cfg)
        tok_path = out / "tokenizer.ckpt"
        if not tok_path.exists():
            print(f"error: tokenizer checkpoint missing at {tok_path}; "
                  "run train-tokenizer first", file=sys.stderr)
            return 2
        tokenizer = ckpt.load_tokenizer(tok_path)
        text_encoder = _ensure_text_encoder(cfg, out, dataset)
        mode = args.mode or cfg.get("planner", "mode")
        planner_cfg = make_planner_config(
            cfg, mode, tokenizer.cfg.codebook_size, tokenizer.cfg.downrate,
            max_tokens=token_count(tokenizer.cfg.max_len, tokenizer.cfg.downrate),
            joint_count=tokenizer.skeleton.joint_count,
            text_dim=text_encoder.dim)
        seed = cfg.getint("training", "seed")
        model = TokenPlanner(planner_cfg, seed=seed)
        trainer = PlannerTrainer(
            model, tokenizer, text_encoder, dataset, seed=seed,
            batch_size=cfg.getint("training", "planner_batch_size"),
            lr=cfg.getfloat("training", "lr"),
            lr_final=cfg.getfloat("training", "lr_final"),
            decay_fraction=cfg.getfloat("training", "decay_fraction"))
        path = out / f"planner_{mode}.ckpt"
        steps = args.steps or cfg.getint("training", "planner_steps")
        done = 0
        if args.resume and path.exists():
            loaded = ckpt.load_checkpoint(path, expect_component=mode)
            model.load_state_dict(loaded.tensors)
            done = int(loaded.config.get("steps_done", 0))
            if loaded.optimizer:
                trainer.opt.load_state_dict(loaded.optimizer)
            print(f"resuming from {path} at step {done}")
        remaining = max(0, steps - done)
        if remaining:
            report = trainer.run(remaining, log_every=args.log_every)
            drop_rate = report.cond_drops / max(report.cond_draws, 1)
            print(f"trained {report.steps} steps in {report.seconds:.1f}s; "
                  f"condition-drop rate {drop_rate:.3f}")
        config_record = {"planner": model.cfg.to_json(),
                         "steps_done": done + remaining,
                         "config_hash": cfg.config_hash()}
        ckpt.save_checkpoint(path, mode, config_record, model.state_dict(),
                             trainer.opt.state_dict())
        print(f"wrote {path}")
    return 0


def _request_from_args(args, bundle: ModelBundle) -> GenerationRequest:
    if args.request:
        body = json.loads(Path(args.request).read_text())
        control = None
        if body.get("control"):
            c = body["control"]
            control = ControlRequest(
                targets=decode_array(c["targets"]).astype(np.float64),
                mask=decode_array(c["mask"]).astype(bool),
                eta=float(c.get("eta", 0.08)),
                inner_steps=int(c.get("inner_steps", 1)))
        flags = body.get("flags", {})
        return GenerationRequest(
            prompt=body.get("prompt", ""), length=int(body["length"]),
            planner=body.get("planner", bundle.default_planner),
            guidance_scale=body.get("guidance_scale"),
            seed=int(body.get("seed", 0)), control=control,
            planner_local_cond=flags.get("planner_local_cond", True),
            decoder_guidance=flags.get("decoder_guidance", True),
            temperature=float(body.get("temperature", 1.0)))
    return GenerationRequest(prompt=args.prompt, length=args.length,
                             planner=args.planner or bundle.default_planner,
                             guidance_scale=args.guidance, seed=args.seed)


def cmd_generate(args) -> int:
    bundle = ModelBundle.load(args.model)
    request = _request_from_args(args, bundle)
    result = generate(bundle, request)
    # timings stay off the artifact so identical requests write identical bytes
    payload = {
        "frames": encode_array(result.motion.frames, "f32"),
        "joint_positions": encode_array(result.motion.joint_positions(), "f32"),
        "fps": result.motion.fps,
        "tokens": [int(t) for t in result.tokens],
        "keyframe_errors": result.keyframe_errors,
        "avg_err": result.avg_err,
        "refine_calls": result.refine_calls,
        "planner_forward_passes": result.planner_forward_passes,
    }
    out = Path(args.output)
    out.write_text(json.dumps(payload, indent=1, sort_keys=True))
    print(f"wrote {out} (planner {result.timings['planner_ms']:.0f} ms, "
          f"decode {result.timings['decode_ms']:.0f} ms, "
          f"refine {result.timings['refine_ms']:.0f} ms)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.model)
    dataset = load_or_generate_dataset(cfg)
    evaluator = _ensure_evaluator(cfg, out, dataset)
    bundle = ModelBundle.load(out)
    bundle.evaluator = evaluator
    eta_raw = cfg.get("control", "eta", "auto").strip().lower()
    report = experiments.evaluate_model(
        bundle, dataset, seed=cfg.getint("training", "seed"),
        repeats=args.repeats or cfg.getint("eval", "repeats"),
        n_generate=cfg.getint("eval", "n_generate"),
        regime=args.regime,
        eta=None if eta_raw in ("", "auto") else float(eta_raw),
        config_hash=cfg.config_hash(), results_dir=out / "results")
    print(json.dumps({k: v for k, v in report.items() if k != "meta"}, indent=1))
    print(f"report: {report.get('report_path')}")
    return 0


def cmd_sweep_cfg(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.model)
    dataset = load_or_generate_dataset(cfg)
    evaluator = _ensure_evaluator(cfg, out, dataset)
    bundle = ModelBundle.load(out)
    bundle.evaluator = evaluator
    report = experiments.sweep_cfg(
        bundle, dataset, seed=cfg.getint("training", "seed"),
        n_prompts=args.n_prompts, planner=args.planner_mode,
        config_hash=cfg.config_hash(), results_dir=out / "results")
    for row in report["rows"]:
        flag = "  <-- best" if row["w"] == report["best_w"] else ""
        print(f"w={row['w']:.1f}  fid_proxy={row['fid_proxy']:.4f}{flag}")
    print(f"unimodal-or-monotone within noise: {report['shape']['unimodal_or_monotone']}")
    print(f"report: {report.get('report_path')}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    dataset = load_or_generate_dataset(cfg)
    if args.two_stage:
        return _ablate_two_stage(args, cfg, out, dataset)
    cells = experiments.parse_grid(args.grid)
    if args.max_cells and len(cells) > args.max_cells:
        print(f"error: grid has {len(cells)} cells; cap is {args.max_cells} "
              "(tighten --grid or raise --max-cells)", file=sys.stderr)
        return 2
    report = experiments.run_ablation(
        dataset, cells, steps=args.steps, seed=cfg.getint("training", "seed"),
        width=cfg.getint("tokenizer", "width"),
        codebook=cfg.getint("tokenizer", "codebook_size"),
        batch_size=cfg.getint("training", "batch_size"),
        config_hash=cfg.config_hash(), results_dir=out / "results",
        log_every=args.log_every)
    for row in report["rows"]:
        print(f"{row['cell']:32s} recon_mse={row['recon_mse']:.5f} "
              f"({row['train_seconds']:.0f}s)")
    print(f"report: {report.get('report_path')}")
    return 0


def _ablate_two_stage(args, cfg: RunConfig, out: Path, dataset) -> int:
    import hashlib

    tok_path = out / "tokenizer.ckpt"
    if not tok_path.exists():
        print(f"error: two-stage ablation needs a stage-1 checkpoint at {tok_path}",
              file=sys.stderr)
        return 2
    stage1 = ckpt.load_tokenizer(tok_path)

    def encoder_checksum(model) -> str:
        digest = hashlib.sha256()
        for name in sorted(model.state_dict()):
            if name.startswith("encoder."):
                digest.update(np.ascontiguousarray(model.state_dict()[name],
                                                   dtype="<f4").tobytes())
        digest.update(np.ascontiguousarray(model.quantizer.codes, dtype="<f4").tobytes())
        return digest.hexdigest()

    before = encoder_checksum(stage1)
    rows = []
    for variant in (args.stage2_variants or "conv,diffusion_conv").split(","):
        variant = variant.strip()
        stage2 = freeze_and_retrain_decoder(stage1, dataset, variant, steps=args.steps,
                                            seed=cfg.getint("training", "seed"),
                                            batch_size=cfg.getint("training", "batch_size"))
        after = encoder_checksum(stage2)
        mse = experiments.reconstruction_mse(stage2, dataset, seed=0)
        path = out / f"tokenizer_stage2_{variant}.ckpt"
        ckpt.save_tokenizer(path, stage2)
        rows.append({"stage2_variant": variant, "recon_mse": mse,
                     "encoder_checksum_matches": before == after,
                     "checkpoint": str(path)})
        print(f"stage2 {variant}: recon_mse={mse:.5f} "
              f"encoder unchanged={before == after}")
    experiments.write_report(out / "results", {
        "kind": "two_stage_ablation", "rows": rows,
        "stage1_encoder_checksum": before, "config_hash": cfg.config_hash()})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bundle = ModelBundle.load(args.model)
    eval_path = Path(args.model) / "evaluator.ckpt"
    if eval_path.exists():
        bundle.evaluator = ckpt.load_embedder(eval_path)
    app = create_app(bundle, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtok",
                                     description="motion tokenization, planning, and control")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, out=False):
        p.add_argument("--config", help="INI config file (preset defaults apply)")
        p.add_argument("--preset", default="toy", choices=["toy", "paper"])
        if model:
            p.add_argument("--model", required=True, help="model directory")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train-tokenizer", help="stage-1 tokenizer training")
    common(p, out=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--variant", choices=["conv", "diffusion_head", "diffusion_conv"])
    p.add_argument("--name", default="tokenizer.ckpt")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--log-every", type=int, default=200)
    p.set_defaults(fn=cmd_train_tokenizer)

    p = sub.add_parser("train-planner", help="token planner training")
    common(p, out=True)
    p.add_argument("--mode", choices=["ddm", "ar"])
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--log-every", type=int, default=200)
    p.set_defaults(fn=cmd_train_planner)

    p = sub.add_parser("generate", help="end-to-end generation")
    common(p, model=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--planner", choices=["ddm", "ar"])
    p.add_argument("--guidance", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--request", help="request JSON file (same schema as POST /v1/generate)")
    p.add_argument("--output", default="generation.json")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="metric suite over a trained model")
    common(p, model=True)
    p.add_argument("--regime", default="pelvis",
                   choices=["pelvis", "random_one", "random_two", "random_three"])
    p.add_argument("--repeats", type=int)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="tokenizer configuration grid")
    common(p, out=True)
    p.add_argument("--grid", help="e.g. 'decoder=conv,diffusion_conv kernel=5 downrate=4 latent=128'")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--max-cells", type=int, default=16)
    p.add_argument("--two-stage", action="store_true",
                   help="freeze encoder+codebook, retrain decoders only")
    p.add_argument("--stage2-variants", help="comma list for --two-stage")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-cfg", help="guidance-scale sweep 1.6..3.6 step 0.2")
    common(p, model=True)
    p.add_argument("--n-prompts", type=int, default=64)
    p.add_argument("--planner-mode", choices=["ddm", "ar"])
    p.set_defaults(fn=cmd_sweep_cfg)

    p = sub.add_parser("serve", help="HTTP generation service")
    common(p, model=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--static", help="static UI directory to mount at /")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MtokError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
