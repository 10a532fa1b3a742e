"""``axialvc`` command line: prepare, train, convert, evaluate, selfcheck.

Exit status is 0 on success, 1 when the input or configuration is rejected,
and 2 on an internal failure (including a failing selfcheck).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .dataset import SpectrogramDataset, build_dataset, wav_sources
from .dsp import Spectrogram, eval_log_mel, griffin_lim, preprocess, read_wav, stft_magnitude, write_wav
from .errors import AxialVCError, ConfigError, ValidationError
from .evaluation import (
    EvalReport,
    UtteranceScore,
    build_reference_stats,
    msd_nonparallel,
    msd_parallel,
    spectral_centroid,
)
from .losses import LossReport
from .networks import GeneratorParams, convert
from .plotting import plot_conversion, plot_losses, plot_msd, read_loss_log
from .toy import toy_corpus
from .training import TrainState, load_checkpoint, save_checkpoint, train

log = logging.getLogger("axialvc")

DIRECTIONS = ("x2y", "y2x")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are validation errors (exit 1), not argparse's 2
        raise ValidationError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _run_config(args, toy_default: bool = False, base: RunConfig | None = None) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config, base=RunConfig.toy() if toy_default else None)
    elif base is not None:
        cfg = base
    else:
        cfg = RunConfig.toy() if toy_default else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
        if not args.config:
            changes["max_steps"] = 0  # an explicit epoch count overrides the preset's step cap
    return cfg.replace(**changes) if changes else cfg


def _check_grid(ds: SpectrogramDataset, cfg: RunConfig, what: str) -> None:
    if ds.stft.bins != cfg.stft.bins:
        raise ConfigError(
            f"{what} has {ds.stft.bins} frequency bins (window {ds.stft.window_length}) "
            f"but the configuration expects {cfg.stft.bins} (window {cfg.window_length})"
        )
    if ds.stft.hop != cfg.hop or ds.stft.sample_rate != cfg.sample_rate:
        raise ConfigError(f"{what} was prepared with hop {ds.stft.hop} at {ds.stft.sample_rate} Hz; "
                          f"configuration has hop {cfg.hop} at {cfg.sample_rate} Hz")


def _load_model(path: str | Path, args) -> tuple[TrainState, RunConfig, dict]:
    state, extra = load_checkpoint(path)
    stored = RunConfig.loads(extra["run_config"]) if "run_config" in extra else None
    cfg = RunConfig.load(args.config) if args.config else stored
    if cfg is None:
        raise ConfigError(f"{path} carries no run configuration; pass --config")
    if cfg.stft.bins != state.model.bins:
        raise ConfigError(f"checkpoint expects {state.model.bins} frequency bins, "
                          f"analysis config gives {cfg.stft.bins} (window {cfg.window_length})")
    return state, cfg, extra


def _generator(state: TrainState, direction: str) -> GeneratorParams:
    if direction not in DIRECTIONS:
        raise ValidationError(f"unknown direction {direction!r}; choose x2y or y2x")
    return state.g_xy if direction == "x2y" else state.g_yx


def _synthesize(mag: np.ndarray, cfg: RunConfig, seed: int):
    return griffin_lim(Spectrogram(mag.astype(np.float64), cfg.stft), cfg.griffin_lim_iters, seed)


# ------------------------------------------------------------------ prepare


def cmd_prepare(args) -> int:
    out = Path(args.out)
    if args.toy_corpus:
        cfg = _run_config(args, toy_default=True)
        corpus = toy_corpus(seed=1234 if args.seed is None else args.seed, sample_rate=cfg.sample_rate)
        out.mkdir(parents=True, exist_ok=True)
        for spk, splits in corpus.items():
            for split, waves in splits.items():
                wav_dir = out / "wav" / spk / split
                wav_dir.mkdir(parents=True, exist_ok=True)
                names = [f"{split}_{i:03d}" for i in range(len(waves))]
                for name, w in zip(names, waves):
                    write_wav(wav_dir / f"{name}.wav", w)
                ds = build_dataset(zip(names, waves), spk, cfg.stft, cfg.crop_frames)
                path = out / f"{spk}_{split}.axds"
                ds.save(path)
                print(f"{path}: {len(ds)} items, {ds.total_frames} frames")
        cfg.save(out / "config.txt")
        print(f"{out / 'config.txt'}: run configuration for this corpus")
        return 0
    if not args.wav_dir:
        raise ValidationError("prepare needs a WAV directory or --toy-corpus")
    cfg = _run_config(args)
    label = args.label or Path(args.wav_dir).name
    ds = build_dataset(wav_sources(args.wav_dir), label, cfg.stft, cfg.crop_frames)
    if out.suffix != ".axds":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{label}.axds"
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    print(f"{out}: {len(ds)} items, {ds.total_frames} frames")
    return 0


# -------------------------------------------------------------------- train


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.toy_corpus:
        cfg = _run_config(args, toy_default=True)
        corpus = toy_corpus(sample_rate=cfg.sample_rate)
        ds_x, ds_y = (
            build_dataset(((f"train_{i:03d}", w) for i, w in enumerate(corpus[s]["train"])), s, cfg.stft,
                          cfg.crop_frames)
            for s in ("A", "B")
        )
    else:
        if not (args.dataset_x and args.dataset_y):
            raise ValidationError("train needs two dataset files or --toy-corpus")
        cfg = _run_config(args)
        ds_x, ds_y = SpectrogramDataset.load(args.dataset_x), SpectrogramDataset.load(args.dataset_y)
        _check_grid(ds_x, cfg, args.dataset_x)
        _check_grid(ds_y, cfg, args.dataset_y)
    every = cfg.checkpoint_every if args.checkpoint_every is None else args.checkpoint_every

    if args.resume:
        state, extra = load_checkpoint(args.resume)
        if state.model != cfg.model:
            raise ConfigError(f"{args.resume} was trained with a different model configuration")
        state.train = cfg.train
    else:
        state = TrainState.create(cfg.model, cfg.train)

    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    cfg.save(out / "config.txt")
    extra = {"run_config": cfg.dumps(), "labels": [ds_x.label, ds_y.label]}
    log_path = out / "training_log.csv"
    fresh = not (args.resume and log_path.exists())
    with open(log_path, "w" if fresh else "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if fresh:
            writer.writerow(["epoch", *LossReport.COLUMNS])

        def on_step(r: LossReport) -> None:
            writer.writerow([state.epoch, *r.row()])
            if r.step % 50 == 0:
                f.flush()
                log.info("step %d  adv_d %.3f/%.3f  adv_g %.3f  cyc %.4f  id %.4f",
                         r.step, r.adv_d_x, r.adv_d_y, r.adv_g, r.cyc, r.id)

        def on_epoch(s: TrainState) -> None:
            if every and s.epoch % every == 0:
                save_checkpoint(s, out / "checkpoints" / f"epoch_{s.epoch:04d}.axck", extra)

        reports = train(state, ds_x.corpus(), ds_y.corpus(), on_step=on_step, on_epoch=on_epoch,
                        diagnostic_path=out / "diagnostic.axck")
    save_checkpoint(state, out / "final.axck", extra)
    curves = read_loss_log(log_path)
    if curves:
        plot_losses(curves, out / "losses.png")
    last = reports[-1] if reports else None
    print(f"trained to epoch {state.epoch}, step {state.step}; checkpoint {out / 'final.axck'}")
    if last:
        print(f"last step: adv_g={last.adv_g:.4f} cyc={last.cyc:.4f} id={last.id:.4f} total={last.total:.4f}")
    return 0


# ------------------------------------------------------------------ convert


def cmd_convert(args) -> int:
    state, cfg, _ = _load_model(args.checkpoint, args)
    gp = _generator(state, args.direction)
    wave = preprocess(read_wav(args.in_wav, cfg.sample_rate), None, cfg.stft)
    source = stft_magnitude(wave, cfg.stft).mag
    converted = convert(source, gp)
    seed = cfg.seed if args.seed is None else args.seed
    out_wave = _synthesize(converted, cfg, seed)
    out = Path(args.out_wav)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, out_wave)
    print(f"{out}: {len(out_wave) / cfg.sample_rate:.2f} s, {converted.shape[1]} frames")
    if args.figure:
        plot_conversion(source, converted, None, args.figure, cfg.sample_rate, cfg.hop,
                        f"{Path(args.in_wav).stem} ({args.direction})")
    return 0


# ----------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    state, cfg, extra = _load_model(args.checkpoint, args)
    gp = _generator(state, args.direction)
    src, tgt = SpectrogramDataset.load(args.source), SpectrogramDataset.load(args.target)
    _check_grid(src, cfg, args.source)
    seed = cfg.seed if args.seed is None else args.seed
    mel = dict(n_mels=cfg.n_mels, f_min=cfg.mel_fmin, f_max=cfg.mel_fmax, cfg=cfg.eval_stft, floor=cfg.mel_floor)
    targets = {n: eval_log_mel(_wave(w, tgt), **mel) for n, w in zip(tgt.names, tgt.waves)}
    labels = extra.get("labels", ["X", "Y"])
    pair = "-".join(labels if args.direction == "x2y" else labels[::-1])

    converted_mags, converted_feats = {}, {}
    for name, mag in zip(src.names, src.mags):
        converted_mags[name] = convert(mag, gp)
        converted_feats[name] = eval_log_mel(_synthesize(converted_mags[name], cfg, seed), **mel)

    if args.protocol == "parallel":
        missing = sorted(set(src.names) - set(targets))
        if missing:
            raise ValidationError(f"parallel protocol: no target utterance named {missing[0]!r} "
                                  f"({len(missing)} unmatched)")
        scores = [UtteranceScore(n, msd_parallel(converted_feats[n], targets[n], cfg.msd_multiplier))
                  for n in src.names]
        report = EvalReport(pair, "parallel", scores)
    elif args.protocol == "nonparallel":
        stats = build_reference_stats(list(targets.values()), cfg.msd_multiplier)
        res = msd_nonparallel([converted_feats[n] for n in src.names], stats)
        report = EvalReport(pair, "nonparallel-pairwise",
                            [UtteranceScore(n, v) for n, v in zip(src.names, res.per_utterance)],
                            res.ground_truth)
    else:
        raise ValidationError(f"unknown protocol {args.protocol!r}; choose parallel or nonparallel")

    out = Path(args.out)
    csv_path, txt_path = report.write(out, "eval")
    _write_centroids(out / "centroids.csv", src, tgt, converted_mags, cfg)
    plot_msd([u.name for u in report.utterances], report.values, out / "msd.png", report.ground_truth,
             f"{pair} ({report.protocol})")
    first = src.names[0]
    plot_conversion(src.mags[0], converted_mags[first],
                    tgt.mags[tgt.names.index(first)] if first in tgt.names else None,
                    out / f"conversion_{first}.png", cfg.sample_rate, cfg.hop, f"{pair}: {first}")
    sys.stdout.write(report.to_table())
    print(f"wrote {csv_path}, {txt_path}, {out / 'centroids.csv'} and figures in {out}")
    return 0


def _wave(samples: np.ndarray, ds: SpectrogramDataset):
    from .dsp import Waveform

    return Waveform(samples.astype(np.float64), ds.stft.sample_rate)


def _write_centroids(path: Path, src: SpectrogramDataset, tgt: SpectrogramDataset,
                     converted: dict[str, np.ndarray], cfg: RunConfig) -> None:
    target_mean = float(np.mean([spectral_centroid(m, cfg.sample_rate, cfg.window_length) for m in tgt.mags]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["utterance", "source_hz", "converted_hz", "target_mean_hz", "closer"])
        for name, mag in zip(src.names, src.mags):
            a = spectral_centroid(mag, cfg.sample_rate, cfg.window_length)
            c = spectral_centroid(converted[name], cfg.sample_rate, cfg.window_length)
            w.writerow([name, repr(a), repr(c), repr(target_mean), int(abs(c - target_mean) < abs(a - target_mean))])


# ---------------------------------------------------------------- selfcheck


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    results = run_all(0 if args.seed is None else args.seed)
    for r in results:
        print(r.line())
        for f in r.failures[:10]:
            print(f"    {f}")
    ok = all(r.ok for r in results)
    print("selfcheck passed" if ok else "selfcheck FAILED")
    return 0 if ok else 2


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="axialvc", description="Spectrogram voice conversion with axial residual CycleGANs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help: str | None = None):
        sp.add_argument("--config", help="key=value run configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if out_help:
            sp.add_argument("--out", required=True, help=out_help)

    sp = sub.add_parser("prepare", help="preprocess a WAV directory into a dataset file")
    sp.add_argument("wav_dir", nargs="?")
    sp.add_argument("--label", help="identity label (default: directory name)")
    sp.add_argument("--toy-corpus", action="store_true", help="synthesize the two-speaker toy corpus instead")
    common(sp, "dataset file, or directory for --toy-corpus")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train both generators and discriminators")
    sp.add_argument("dataset_x", nargs="?")
    sp.add_argument("dataset_y", nargs="?")
    sp.add_argument("--toy-corpus", action="store_true", help="train on the built-in toy corpus")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--checkpoint-every", type=int, help="epochs between checkpoints (0: final only)")
    sp.add_argument("--resume", help="continue from this checkpoint")
    common(sp, "run directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("convert", help="convert one WAV file")
    sp.add_argument("checkpoint")
    sp.add_argument("in_wav")
    sp.add_argument("out_wav")
    sp.add_argument("--direction", default="x2y", help="x2y or y2x")
    sp.add_argument("--figure", help="also write a spectrogram comparison image here")
    common(sp)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("evaluate", help="MSD report on held-out datasets")
    sp.add_argument("checkpoint")
    sp.add_argument("source", help="dataset file of the source identity")
    sp.add_argument("target", help="dataset file of the target identity")
    sp.add_argument("--protocol", default="parallel", help="parallel or nonparallel")
    sp.add_argument("--direction", default="x2y", help="x2y or y2x")
    common(sp, "report directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("selfcheck", help="run the built-in oracle suites")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_selfcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:  # missing or unreadable user-supplied paths
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AxialVCError, Exception) as exc:  # noqa: BLE001 - last-resort classification for the exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
