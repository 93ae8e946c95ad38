"""Command-line workflow: generate-data, train, distill, evaluate, export-waveforms, pipeline.

On failure the process exits with status 1 and prints one line
``<ErrorClass>: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .channel import load_dataset, save_dataset
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DDModemError, HashMismatchError, MissingInputError
from .link import EvalReport, ber_curve, get_alphabet, rate_curve, write_csv
from .modem import Modem, load_modem, make_ofdm_modem, save_modem
from .network import init_modnet, load_params, save_params
from .training import distill_phase3, pair_dataset, train_phase1, train_phase2, write_metrics_log

log = logging.getLogger("ddmodem")


def _check_hash(cfg: ExperimentConfig, meta: dict, what: str, allow: bool) -> None:
    got = meta.get("config_hash")
    if got is None:
        warnings.warn(f"{what} carries no config hash; cannot verify it matches {cfg.source}", stacklevel=2)
        return
    if got != cfg.config_hash and not allow:
        raise HashMismatchError(
            f"{what} was produced under config hash {got}, current config is {cfg.config_hash} "
            "(pass --allow-hash-mismatch to override)"
        )


def _dataset(cfg, path, split, scenario, allow):
    if path:
        ds = load_dataset(path)
        _check_hash(cfg, ds.meta, str(path), allow)
        return ds
    log.info("generating %s split (%s) from config", split, scenario)
    return cfg.dataset(split, scenario)


def _load_net(cfg, path, allow):
    net, meta = load_params(path, expect=cfg.arch)
    _check_hash(cfg, meta, str(path), allow)
    return net, meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_generate_data(args) -> None:
    cfg = load_config(args.config)
    ds = cfg.dataset(args.split, args.scenario, args.count)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} {args.split} channels ({args.scenario}) to {args.out}")


def run_training(cfg: ExperimentConfig, phase: int, net, train_set, metrics_log=None, checkpoint_dir=None):
    def report(rec):
        log.info("phase %d epoch %d loss %.5g rate %.5g dist %.5g", phase, rec.epoch, rec.loss, rec.rate_term, rec.distance_term)

    if phase == 1:
        net, hist = train_phase1(net, train_set, cfg.train, checkpoint_dir, report)
    else:
        pairs = pair_dataset(train_set, [cfg.seed, 3])
        net, hist = train_phase2(net, pairs, cfg.train, checkpoint_dir, report)
    if metrics_log:
        write_metrics_log(hist, metrics_log)
    return net, hist


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    if args.phase == 2 and not args.in_params:
        raise MissingInputError("phase 2 starts from the phase-1 parameters; pass --in-params")
    if args.in_params:
        net, _ = _load_net(cfg, args.in_params, args.allow_hash_mismatch)
    else:
        net = init_modnet(cfg.arch, cfg.seed)
    train_set = _dataset(cfg, args.train_data, "train", "base", args.allow_hash_mismatch)
    metrics = args.metrics_log or str(args.out_params) + ".metrics.tsv"
    net, hist = run_training(cfg, args.phase, net, train_set, metrics, args.checkpoint_dir)
    save_params(net, args.out_params, cfg.stamp(phase=args.phase))
    print(f"phase {args.phase}: final loss {hist[-1].loss:.6g}; params -> {args.out_params}, metrics -> {metrics}")


def cmd_distill(args) -> None:
    cfg = load_config(args.config)
    net, _ = _load_net(cfg, args.params, args.allow_hash_mismatch)
    val = _dataset(cfg, args.val_data, "val", "base", args.allow_hash_mismatch)
    if val.spec.frame_len != cfg.arch.input_side or val.spec.num_subcarriers != cfg.arch.num_subcarriers:
        raise ConfigError("validation data dimensions do not match the network architecture")
    modem = distill_phase3(net, val)
    modem.meta.update(cfg.stamp())
    save_modem(modem, args.out_modem)
    print(f"distilled modem ({modem.fingerprint()}) -> {args.out_modem}")


def evaluate(
    cfg: ExperimentConfig,
    modem: Modem,
    metric: str,
    baseline: bool = True,
    scenarios=None,
    test_data=None,
    allow_hash_mismatch: bool = False,
) -> list[EvalReport]:
    """Rate or BER curves for ``modem`` (and CP-OFDM) on every requested scenario."""
    scenarios = list(scenarios or cfg.eval.scenarios)
    modems = [modem]
    if baseline:
        modems.append(make_ofdm_modem(modem.num_subcarriers, modem.prefix_len))
    reports = {id(m): EvalReport(m.meta.get("modem_id", m.fingerprint()), cfg.seed) for m in modems}
    for sc in scenarios:
        path = test_data if sc == "base" else None
        ts = _dataset(cfg, path, "test", sc, allow_hash_mismatch)
        for m in modems:
            if metric == "rate":
                rep = rate_curve(m, ts, cfg.eval.snr_db, scenario=sc, seed=cfg.seed)
                reports[id(m)].extend(rep)
            else:
                for name in cfg.eval.alphabets:
                    rep = ber_curve(
                        m,
                        ts,
                        cfg.eval.snr_db,
                        get_alphabet(name),
                        cfg.eval.trials_per_channel,
                        cfg.seed,
                        scenario=sc,
                        min_errors=cfg.eval.min_errors,
                        max_passes=cfg.eval.max_passes,
                    )
                    reports[id(m)].extend(rep)
    return [reports[id(m)] for m in modems]


def cmd_evaluate(args) -> None:
    cfg = load_config(args.config)
    modem = load_modem(args.modem)
    _check_hash(cfg, modem.meta, str(args.modem), args.allow_hash_mismatch)
    scenarios = [s.strip() for s in args.scenarios.split(",")] if args.scenarios else None
    reports = evaluate(cfg, modem, args.metric, args.baseline_ofdm, scenarios, args.test_data, args.allow_hash_mismatch)
    write_csv(reports, args.out, cfg.stamp())
    print(f"wrote {sum(len(r.records) for r in reports)} rows to {args.out}")


def cmd_export_waveforms(args) -> None:
    if args.modem == "ofdm":
        if not args.config:
            raise MissingInputError("--modem ofdm needs --config for M and M_p")
        cfg = load_config(args.config)
        modem = make_ofdm_modem(cfg.channel.num_subcarriers, cfg.channel.prefix_len)
    else:
        modem = load_modem(args.modem)
    try:
        cols = [int(c) for c in args.columns.split(",") if c.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --columns value {args.columns!r}") from exc
    M = modem.num_subcarriers
    bad = [c for c in cols if not 0 <= c < M]
    if bad:
        raise IndexError(f"column index {bad[0]} out of range 0..{M - 1}")
    n = np.arange(-modem.prefix_len, M)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n"] + [f"col{c}_{part}" for c in cols for part in ("re", "im")])
        for row, idx in enumerate(n):
            vals = []
            for c in cols:
                v = modem.mod[row, c]
                vals += [f"{v.real:.12g}", f"{v.imag:.12g}"]
            w.writerow([int(idx)] + vals)
    print(f"wrote {len(cols)} waveforms to {args.out}")


def cmd_pipeline(args) -> None:
    """generate -> phase 1 -> phase 2 -> distill -> rate and BER evaluation, in one directory."""
    cfg = load_config(args.config)
    out = Path(args.workdir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        save_dataset(cfg.dataset(split), out / f"{split}.ddch")
    train = load_dataset(out / "train.ddch")
    net = init_modnet(cfg.arch, cfg.seed)
    net, _ = run_training(cfg, 1, net, train, out / "phase1.metrics.tsv")
    save_params(net, out / "phase1.mnet", cfg.stamp(phase=1))
    net, _ = run_training(cfg, 2, net, train, out / "phase2.metrics.tsv")
    save_params(net, out / "phase2.mnet", cfg.stamp(phase=2))
    modem = distill_phase3(net, load_dataset(out / "val.ddch"))
    modem.meta.update(cfg.stamp())
    save_modem(modem, out / "modem.modm")
    modem = load_modem(out / "modem.modm")
    for metric in args.metrics.split(","):
        reports = evaluate(cfg, modem, metric, True, None, out / "test.ddch")
        write_csv(reports, out / f"{metric}.csv", cfg.stamp())
    print(f"pipeline finished in {out}")


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddmodem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, hash_flag=True):
        sp.add_argument("--config", required=True, help="config file, or 'desk-scale' / 'paper-default'")
        if hash_flag:
            sp.add_argument("--allow-hash-mismatch", action="store_true")

    g = sub.add_parser("generate-data", help="write a channel dataset file")
    common(g, hash_flag=False)
    g.add_argument("--split", choices=["train", "val", "test"], required=True)
    g.add_argument("--scenario", default="base")
    g.add_argument("--count", type=int, default=None, help="override the split size from the config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="run training phase 1 or 2")
    common(t)
    t.add_argument("--phase", type=int, choices=[1, 2], required=True)
    t.add_argument("--in-params")
    t.add_argument("--out-params", required=True)
    t.add_argument("--train-data", help="dataset file; generated from the config when omitted")
    t.add_argument("--metrics-log")
    t.add_argument("--checkpoint-dir")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("distill", help="phase 3: median over validation outputs")
    common(d)
    d.add_argument("--params", required=True)
    d.add_argument("--val-data")
    d.add_argument("--out-modem", required=True)
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("evaluate", help="rate or BER curves as CSV")
    common(e)
    e.add_argument("--modem", required=True)
    e.add_argument("--baseline-ofdm", action="store_true")
    e.add_argument("--metric", choices=["ber", "rate"], required=True)
    e.add_argument("--test-data", help="base-scenario test set; generated from the config when omitted")
    e.add_argument("--scenarios", help="comma-separated scenario names (default: all in the config)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("export-waveforms", help="dump modulation-matrix columns as CSV")
    w.add_argument("--modem", required=True, help="modem file, or 'ofdm' (needs --config)")
    w.add_argument("--config")
    w.add_argument("--columns", required=True)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_export_waveforms)

    pl = sub.add_parser("pipeline", help="run generate/train/distill/evaluate end to end")
    pl.add_argument("--config", required=True)
    pl.add_argument("--workdir", required=True)
    pl.add_argument("--metrics", default="rate,ber")
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (DDModemError, ValueError, IndexError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
