"""Command-line surface for the analysis / editing / synthesis pipeline.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import conditioning, diffusion, dsp, metrics, modal, residual, synthetic
from .config import load_config, load_manifest, load_pairs_manifest
from .errors import DataError
from .io import read_pdt, read_wav, write_pdt, write_wav

PEAK_NORM = 0.9


def _bin_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}")


def _normalize_peak(wave: np.ndarray) -> np.ndarray:
    peak = np.abs(wave).max()
    return wave * (PEAK_NORM / peak) if peak > 0 else wave


def _analyze_clip(wave, cfg, seed, loss_configs):
    modes = modal.estimate_modes(wave, cfg.stft_config())
    fitted = residual.fit_residual(wave, modes, noise_seed=seed,
                                   num_bands=cfg.num_bands,
                                   resolutions=loss_configs)
    priors = residual.PhysicsPriors(modes, fitted)
    estimate = synthetic.render_priors(priors, wave.size / cfg.sample_rate)
    loss = dsp.multires_stft_loss(estimate, wave, loss_configs)
    return priors, loss


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, sample_rate=args.rate, window_size=args.window,
                      hop_size=args.hop, num_bands=args.bands, seed=args.seed)
    loss_configs = cfg.loss_configs()

    if args.manifest:
        if not args.out_dir:
            print("error: --manifest requires --out-dir", file=sys.stderr)
            return 2
        os.makedirs(args.out_dir, exist_ok=True)
        entries = load_manifest(args.manifest)
        failures = 0
        for entry in entries:
            try:
                wave, _ = read_wav(entry.wav, expect_rate=cfg.sample_rate)
                wave = _normalize_peak(wave)
                priors, loss = _analyze_clip(wave, cfg, cfg.seed, loss_configs)
                out = os.path.join(args.out_dir, f"{entry.clip_id}.priors.json")
                residual.save_priors(out, priors)
                print(f"{entry.clip_id}: loss {loss:.6f} -> {out}")
            except DataError as exc:
                failures += 1
                print(f"{entry.clip_id}: FAILED: {exc}", file=sys.stderr)
        print(f"analyzed {len(entries) - failures}/{len(entries)} clips")
        return 3 if failures == len(entries) else 0

    if not args.wav or not args.output:
        print("error: analyze needs WAV and -o (or --manifest/--out-dir)",
              file=sys.stderr)
        return 2
    wave, _ = read_wav(args.wav, expect_rate=cfg.sample_rate)
    wave = _normalize_peak(wave)
    stft_cfg = cfg.stft_config()
    print(f"spectrogram {stft_cfg.num_bins}x{stft_cfg.num_frames(wave.size)}")
    priors, loss = _analyze_clip(wave, cfg, cfg.seed, loss_configs)
    residual.save_priors(args.output, priors)
    if args.save_spec:
        sgram = dsp.log_magnitude(dsp.stft(wave, stft_cfg))
        write_pdt(args.save_spec, sgram.data)
    print(f"final multi-resolution STFT loss {loss:.6f}")
    return 0


def cmd_resynth(args) -> int:
    priors = residual.load_priors(args.priors)
    sr = priors.modes.stft_config.sample_rate
    wave = modal.synthesize_modes(priors.modes, args.duration, sr)
    if not args.no_residual and np.any(priors.residual.weights > 0):
        wave = wave + residual.synthesize_residual(priors.residual, args.duration, sr)
    wave = _normalize_peak(wave)
    write_wav(args.output, wave, sr, pcm16=args.pcm16)
    print(f"wrote {args.output} ({wave.size} samples @ {sr} Hz)")
    return 0


def cmd_edit(args) -> int:
    priors = residual.load_priors(args.priors)
    edited = modal.edit_modes(priors, args.bins, power_delta=args.power_delta,
                              decay_scale=args.decay_scale,
                              zero_residual=args.zero_residual)
    residual.save_priors(args.output, edited)
    print(f"edited bins [{args.bins[0]}, {args.bins[1]}) -> {args.output}")
    return 0


def cmd_griffinlim(args) -> int:
    data = read_pdt(args.spec).astype(np.float64)
    if data.ndim != 2:
        raise DataError(f"{args.spec}: expected a 2-D spectrogram")
    window = args.window if args.window else 2 * (data.shape[0] - 1)
    stft_cfg = dsp.StftConfig(sample_rate=args.rate, window_size=window,
                              hop_size=args.hop)
    sgram = dsp.Spectrogram(np.clip(data, dsp.DB_FLOOR, None), stft_cfg)
    wave, history = dsp.griffin_lim(sgram, iters=args.iters)
    write_wav(args.output, _normalize_peak(wave) if args.normalize else wave,
              args.rate)
    print(f"spectral convergence {history[-1]:.6f} after {args.iters} iterations")
    return 0


def _encoder_for_pairs(pairs, seed):
    first = residual.load_priors(pairs[0]["priors"])
    return conditioning.PhysicsEncoder(
        mode_bins=first.modes.num_modes,
        num_bands=first.residual.num_bands,
        seed=seed,
    )


def cmd_store_build(args) -> int:
    pairs = load_pairs_manifest(args.pairs)
    encoder = _encoder_for_pairs(pairs, args.seed)
    triples = [(p["id"], p["visual"], p["priors"]) for p in pairs]
    store = conditioning.build_store(triples, encoder)
    conditioning.save_store(args.output, store)
    print(f"store of {store.size} entries (key dim {store.keys.shape[1]}) "
          f"-> {args.output}")
    return 0


def cmd_store_query(args) -> int:
    store = conditioning.load_store(args.store)
    nu = read_pdt(args.visual).ravel()
    mu, clip_id, distance = conditioning.query_nearest(store, nu)
    print(f"clip_id {clip_id} distance {distance:.6f}")
    if args.out:
        write_pdt(args.out, mu)
    return 0


def cmd_train_toy(args) -> int:
    cfg = load_config(args.config, schedule=args.schedule, steps=args.steps,
                      seed=args.seed)
    pairs = load_pairs_manifest(args.pairs)
    missing = [p["id"] for p in pairs if not p.get("spec")]
    if missing:
        raise DataError(f"pairs missing 'spec' spectrograms: {missing}")

    encoder = _encoder_for_pairs(pairs, cfg.seed)
    triples = [(p["id"], p["visual"], p["priors"]) for p in pairs]
    store = conditioning.build_store(triples, encoder)

    dataset = []
    shape = None
    stft_meta = None
    for row, pair in enumerate(pairs):
        spec_db = read_pdt(pair["spec"]).astype(np.float64)
        if shape is None:
            shape = spec_db.shape
        elif spec_db.shape != shape:
            raise DataError(f"{pair['id']}: spectrogram shape {spec_db.shape} "
                            f"differs from {shape}")
        priors = residual.load_priors(pair["priors"])
        c = priors.modes.stft_config
        stft_meta = {"sample_rate": c.sample_rate, "window_size": c.window_size,
                     "hop_size": c.hop_size}
        x0 = diffusion.spectrogram_to_unit(spec_db)
        cond = diffusion.ConditionPair(store.values[row], store.keys[row])
        dataset.append((x0, cond))

    schedule = diffusion.make_schedule(cfg.schedule, cfg.steps)
    denoiser = diffusion.ToyDenoiser(
        shape, schedule, mu_dim=store.values.shape[1], nu_dim=store.keys.shape[1],
        hidden=args.hidden, seed=cfg.seed,
    )
    denoiser, history = diffusion.train_toy(dataset, args.epochs, args.lr,
                                            denoiser, schedule, seed=cfg.seed)
    diffusion.save_checkpoint(args.output, denoiser, schedule,
                              meta={"encoder": store.encoder_meta,
                                    "stft": stft_meta})
    print(f"final training loss {history[-1]:.6f} over {args.epochs} epochs "
          f"-> {args.output}")
    return 0


def _sample_spectrogram(denoiser, schedule, cond, eta, seed, steps):
    if steps and steps != schedule.num_steps:
        schedule = diffusion.make_schedule(schedule.kind, steps)
        denoiser.schedule = schedule
    rng = np.random.default_rng(seed)
    unit = diffusion.sample(denoiser, cond, schedule, eta=eta, rng=rng,
                            shape=denoiser.input_shape)
    return diffusion.unit_to_spectrogram(unit)


def _write_wav_from_spec(spec_db, stft_meta, out_wav, iters):
    if not stft_meta:
        raise DataError("checkpoint lacks STFT metadata; cannot render audio")
    stft_cfg = dsp.StftConfig(sample_rate=int(stft_meta["sample_rate"]),
                              window_size=int(stft_meta["window_size"]),
                              hop_size=int(stft_meta["hop_size"]))
    sgram = dsp.Spectrogram(spec_db, stft_cfg)
    wave, history = dsp.griffin_lim(sgram, iters=iters)
    write_wav(out_wav, _normalize_peak(wave), stft_cfg.sample_rate)
    return history[-1]


def cmd_diffusion_sample(args) -> int:
    denoiser, schedule, meta = diffusion.load_checkpoint(args.ckpt)
    encoder = conditioning.PhysicsEncoder.from_meta(meta.get("encoder", {}))
    priors = residual.load_priors(args.cond)
    mu = conditioning.encode_physics(priors, encoder)
    nu = read_pdt(args.visual).ravel()
    cond = diffusion.ConditionPair(mu, nu)
    spec_db = _sample_spectrogram(denoiser, schedule, cond, args.eta,
                                  args.seed, args.steps)
    write_pdt(args.out, spec_db)
    print(f"sampled spectrogram {spec_db.shape[0]}x{spec_db.shape[1]} -> {args.out}")
    if args.wav:
        sc = _write_wav_from_spec(spec_db, meta.get("stft"), args.wav, args.iters)
        print(f"griffin-lim convergence {sc:.6f} -> {args.wav}")
    return 0


def cmd_pipeline_sample(args) -> int:
    store = conditioning.load_store(args.store)
    denoiser, schedule, meta = diffusion.load_checkpoint(args.ckpt)
    nu = read_pdt(args.visual).ravel()
    mu, clip_id, distance = conditioning.query_nearest(store, nu)
    print(f"queried clip_id {clip_id} distance {distance:.6f}")
    cond = diffusion.ConditionPair(mu, nu)
    spec_db = _sample_spectrogram(denoiser, schedule, cond, args.eta,
                                  args.seed, args.steps)
    if args.out_spec:
        write_pdt(args.out_spec, spec_db)
    sc = _write_wav_from_spec(spec_db, meta.get("stft"), args.out_wav, args.iters)
    print(f"griffin-lim convergence {sc:.6f} -> {args.out_wav}")
    return 0


def _read_labels(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        return np.array([int(row[-1]) for row in rows], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot parse labels from {path}: {exc}") from exc


def cmd_metrics(args) -> int:
    if args.metric == "fid":
        value = metrics.fid(read_pdt(args.real), read_pdt(args.fake))
        print(f"FID {value:.6f}")
    elif args.metric == "kid":
        mean, std = metrics.kid(read_pdt(args.real), read_pdt(args.fake),
                                num_subsets=args.subsets,
                                subset_size=args.subset_size,
                                rng=np.random.default_rng(args.seed))
        print(f"KID mean {mean:.6f} std {std:.6f}")
    elif args.metric == "kl":
        value = metrics.kl_divergence(read_pdt(args.real), read_pdt(args.fake))
        print(f"KL {value:.6f}")
    elif args.metric == "acc":
        labels = _read_labels(args.labels)
        value = metrics.recognition_accuracy(read_pdt(args.fake), labels)
        print(f"accuracy {value:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impactsynth",
        description="Physics priors for impact sounds: analysis, editing, "
                    "re-synthesis, diffusion sampling, and metrics.",
    )
    parser.add_argument("--config", help="JSON config file with tool defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="estimate physics priors from a WAV clip")
    p.add_argument("wav", nargs="?", help="input WAV (mono, 16-bit PCM or f32)")
    p.add_argument("-o", "--output", help="output priors JSON")
    p.add_argument("--manifest", help="batch mode: clip manifest JSON")
    p.add_argument("--out-dir", help="batch mode: output directory")
    p.add_argument("--save-spec", help="also write the log spectrogram (PDT1)")
    p.add_argument("--rate", type=int, help="expected sample rate")
    p.add_argument("--window", type=int, help="STFT window size")
    p.add_argument("--hop", type=int, help="STFT hop size")
    p.add_argument("--bands", type=int, help="residual band count")
    p.add_argument("--seed", type=int, help="residual noise seed")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("resynth", help="synthesize audio from physics priors")
    p.add_argument("priors", help="priors JSON from analyze/edit")
    p.add_argument("-o", "--output", required=True, help="output WAV")
    p.add_argument("--duration", type=float, default=0.25)
    p.add_argument("--no-residual", action="store_true",
                   help="skip the residual component")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM")
    p.set_defaults(func=cmd_resynth)

    p = sub.add_parser("edit", help="edit a range of modes in priors")
    p.add_argument("priors")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bins", type=_bin_range, required=True,
                   help="half-open bin range START:STOP")
    p.add_argument("--power-delta", type=float, default=0.0,
                   help="dB shift applied to powers in range")
    p.add_argument("--decay-scale", type=float, default=1.0,
                   help="factor applied to decay rates in range")
    p.add_argument("--zero-residual", action="store_true")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("griffinlim", help="waveform from a dB spectrogram (PDT1)")
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iters", type=int, default=60)
    p.add_argument("--rate", type=int, default=44100)
    p.add_argument("--window", type=int, help="default: inferred from bins")
    p.add_argument("--hop", type=int, default=256)
    p.add_argument("--normalize", action="store_true",
                   help="peak-normalize output to 0.9")
    p.set_defaults(func=cmd_griffinlim)

    p_store = sub.add_parser("store", help="visual->physics latent store")
    store_sub = p_store.add_subparsers(dest="store_command", required=True)
    p = store_sub.add_parser("build")
    p.add_argument("--pairs", required=True, help="pairs manifest JSON")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0, help="encoder seed")
    p.set_defaults(func=cmd_store_build)
    p = store_sub.add_parser("query")
    p.add_argument("--store", required=True)
    p.add_argument("--visual", required=True, help="query visual latent (PDT1)")
    p.add_argument("--out", help="write the retrieved physics latent (PDT1)")
    p.set_defaults(func=cmd_store_query)

    p_diff = sub.add_parser("diffusion", help="toy denoiser training and sampling")
    diff_sub = p_diff.add_subparsers(dest="diffusion_command", required=True)
    p = diff_sub.add_parser("train-toy")
    p.add_argument("--pairs", required=True,
                   help="pairs manifest with 'spec' spectrogram paths")
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--schedule", choices=["cosine", "linear"])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_toy)
    p = diff_sub.add_parser("sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cond", required=True, help="physics priors JSON")
    p.add_argument("--visual", required=True, help="visual latent PDT1")
    p.add_argument("--out", required=True, help="output spectrogram PDT1")
    p.add_argument("--steps", type=int, help="override schedule length")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--wav", help="also render audio via Griffin-Lim")
    p.add_argument("--iters", type=int, default=60)
    p.set_defaults(func=cmd_diffusion_sample)

    p = sub.add_parser("pipeline", help="query + sample + Griffin-Lim")
    pipe_sub = p.add_subparsers(dest="pipeline_command", required=True)
    p = pipe_sub.add_parser("sample")
    p.add_argument("--store", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--visual", required=True)
    p.add_argument("--out-wav", required=True)
    p.add_argument("--out-spec", help="also keep the sampled spectrogram")
    p.add_argument("--steps", type=int)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=60)
    p.set_defaults(func=cmd_pipeline_sample)

    p = sub.add_parser("metrics", help="FID / KID / KL / recognition accuracy")
    p.add_argument("metric", choices=["fid", "kid", "kl", "acc"])
    p.add_argument("--real", help="real embeddings/probs PDT1")
    p.add_argument("--fake", help="generated embeddings/probs PDT1")
    p.add_argument("--labels", help="CSV labels for acc (one int per row)")
    p.add_argument("--subsets", type=int, default=100)
    p.add_argument("--subset-size", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "metrics":
        needs = {"fid": ("real", "fake"), "kid": ("real", "fake"),
                 "kl": ("real", "fake"), "acc": ("fake", "labels")}
        for flag in needs[args.metric]:
            if getattr(args, flag) is None:
                parser.error(f"metrics {args.metric} requires --{flag}")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
