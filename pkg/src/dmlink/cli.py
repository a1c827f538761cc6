"""Command line front end: one subcommand per experiment stage.

Every stage reads its inputs from and writes its artifacts into the run
directory, keyed by the symbol rate, so a full study is a sequence of
invocations against one directory:

    dml gen-dataset --out runs
    dml train-surrogate --out runs
    dml train-ae --out runs
    dml evaluate --out runs
    dml report --out runs

All stages are deterministic given the same config and seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import dsp
from .config import (ConfigError, ExperimentConfig, parse_config,
                     with_overrides)
from .diffcore import ParamStore
from .e2e import (Autoencoder, Normalization, evaluate_baseline_set,
                  evaluate_link, train_autoencoder)
from .laser import (LaserParams, fit_damping, probe_small_signal,
                    simulate_li_curve)
from .storage import (StorageError, read_checkpoint, read_dataset,
                      read_metrics_csv, write_checkpoint, write_dataset,
                      write_eye_csv, write_metrics_csv)
from .surrogate import (CatConfig, batch_nrmse, build_cat,
                        default_cat_config, evaluate_surrogate,
                        generate_dataset, train_surrogate)

S21_FREQS = np.linspace(1e9, 30e9, 59)
S21_BIASES_MA = (55.0, 65.0, 75.0, 85.0, 95.0)
EYE_FRAMES = 8


def _dataset_path(cfg: ExperimentConfig, out: Path) -> Path:
    return out / f"dataset_{cfg.rate_tag()}.dmld"


def _surrogate_path(cfg: ExperimentConfig, out: Path) -> Path:
    return out / f"surrogate_{cfg.rate_tag()}.dmlc"


def _ae_path(cfg: ExperimentConfig, out: Path) -> Path:
    return out / f"ae_{cfg.rate_tag()}.dmlc"


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise StorageError(f"{path} not found; run `dml {produced_by}` "
                           f"first")
    return path


def _meta(arrays: dict, key: str) -> float:
    try:
        return float(arrays[f"meta.{key}"])
    except KeyError:
        raise StorageError(f"checkpoint lacks metadata entry {key!r}")


def _check_rate(arrays: dict, cfg: ExperimentConfig, what: str):
    stored = _meta(arrays, "symbol_rate")
    if abs(stored - cfg.symbol_rate_gbd * 1e9) > 1e-3:
        raise StorageError(
            f"{what} was trained at {stored / 1e9:g} GBd but the config "
            f"asks for {cfg.symbol_rate_gbd:g} GBd")


def _save_surrogate(path: Path, store: ParamStore, cat_cfg: CatConfig,
                    link: dsp.LinkConfig, sigma: float, seed: int):
    arrays = store.state_arrays()
    arrays["meta.power_ref"] = np.array(cat_cfg.power_ref)
    arrays["meta.max_len"] = np.array(float(cat_cfg.max_len))
    arrays["meta.d_model"] = np.array(float(cat_cfg.d_model))
    arrays["meta.n_heads"] = np.array(float(cat_cfg.n_heads))
    arrays["meta.n_blocks"] = np.array(float(cat_cfg.n_blocks))
    arrays["meta.kernel"] = np.array(float(cat_cfg.kernel))
    arrays["meta.ff_hidden"] = np.array(float(cat_cfg.ff_hidden))
    arrays["meta.symbol_rate"] = np.array(link.symbol_rate)
    arrays["meta.sigma"] = np.array(sigma)
    arrays["meta.seed"] = np.array(float(seed))
    write_checkpoint(path, arrays)


def _load_surrogate(path: Path, cfg: ExperimentConfig
                    ) -> tuple[ParamStore, CatConfig, float]:
    arrays = read_checkpoint(path)
    _check_rate(arrays, cfg, path.name)
    cat_cfg = CatConfig(power_ref=_meta(arrays, "power_ref"),
                        d_model=int(_meta(arrays, "d_model")),
                        n_heads=int(_meta(arrays, "n_heads")),
                        n_blocks=int(_meta(arrays, "n_blocks")),
                        kernel=int(_meta(arrays, "kernel")),
                        ff_hidden=int(_meta(arrays, "ff_hidden")),
                        max_len=int(_meta(arrays, "max_len")))
    store = build_cat(cat_cfg, np.random.default_rng(0))
    store.load_arrays({k: v for k, v in arrays.items()
                       if not k.startswith("meta.")})
    return store, cat_cfg, _meta(arrays, "sigma")


def _save_autoencoder(path: Path, ae: Autoencoder, power_ref: float,
                      sigma: float, seed: int):
    arrays = {f"enc.{n}": a for n, a in ae.encoder.state_arrays().items()}
    arrays.update({f"dec.{n}": a
                   for n, a in ae.decoder.state_arrays().items()})
    arrays["meta.power_ref"] = np.array(power_ref)
    arrays["meta.symbol_rate"] = np.array(ae.cfg.symbol_rate)
    arrays["meta.sigma"] = np.array(sigma)
    arrays["meta.seed"] = np.array(float(seed))
    write_checkpoint(path, arrays)


def _load_autoencoder(path: Path, p: LaserParams, cfg: ExperimentConfig
                      ) -> tuple[Autoencoder, float]:
    arrays = read_checkpoint(path)
    _check_rate(arrays, cfg, path.name)
    ae = Autoencoder.fresh(p, cfg.link_config(),
                           _meta(arrays, "power_ref"))
    ae.encoder.load_arrays({k[4:]: v for k, v in arrays.items()
                            if k.startswith("enc.")})
    ae.decoder.load_arrays({k[4:]: v for k, v in arrays.items()
                            if k.startswith("dec.")})
    return ae, _meta(arrays, "sigma")


def _write_curve_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else str(v)
                             for v in row])


def cmd_li_curve(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    currents = np.arange(0.0, 120.5, 1.0) * 1e-3
    curve = simulate_li_curve(p, currents)
    path = out / "li_curve.csv"
    _write_curve_csv(path, ["current_ma", "power_mw"],
                     zip((currents * 1e3).tolist(),
                         (curve.powers * 1e3).tolist()))
    log(f"threshold {curve.threshold * 1e3:.3f} mA, slope "
        f"{curve.slope:.5f} W/A -> {path}")
    return 0


def cmd_s21(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    curve = probe_small_signal(p, cfg.i_bias_ma * 1e-3, S21_FREQS)
    path = out / "s21.csv"
    _write_curve_csv(path, ["freq_ghz", "magnitude", "magnitude_db"],
                     zip((curve.freqs / 1e9).tolist(),
                         curve.magnitude.tolist(),
                         (20.0 * np.log10(curve.magnitude)).tolist()))
    log(f"bias {cfg.i_bias_ma:g} mA: peak {curve.peak_frequency / 1e9:.2f} "
        f"GHz, f3dB {curve.f3db / 1e9:.2f} GHz, fitted f_r "
        f"{curve.f_r / 1e9:.2f} GHz -> {path}")
    biases = [b * 1e-3 for b in S21_BIASES_MA]
    curves = [probe_small_signal(p, b, S21_FREQS) for b in biases]
    damping = fit_damping(curves)
    _write_curve_csv(out / "s21_bias_sweep.csv",
                     ["bias_ma", "peak_ghz", "f3db_ghz", "fr_ghz",
                      "gamma_per_s"],
                     [(b * 1e3, c.peak_frequency / 1e9, c.f3db / 1e9,
                       c.f_r / 1e9, c.gamma) for b, c in zip(biases, curves)])
    log(f"damping fit across {len(biases)} biases: K = "
        f"{damping.k_factor * 1e9:.3f} ns, gamma0 = {damping.gamma_0:.3e} /s")
    return 0


def cmd_eye(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    sigma = dsp.calibrate_noise(p, link)
    symbols = np.empty((EYE_FRAMES, link.symbols_per_frame), dtype=np.int64)
    noise = np.empty((EYE_FRAMES, link.frame_len))
    for k in range(EYE_FRAMES):
        rng = dsp.frame_rng(cfg.seed, k)
        symbols[k] = rng.integers(0, 4, size=link.symbols_per_frame)
        noise[k] = rng.standard_normal(link.frame_len)
    command = dsp.tx_command(symbols, (1.0, 1.0), link)
    received = dsp.simulate_received(p, link, command) + sigma * noise
    eye = dsp.eye_histogram(received[:, link.metric_slice()], link.sps)
    path = out / "eye.csv"
    write_eye_csv(path, eye)
    log(f"eye at {cfg.i_bias_ma:g} mA / {cfg.i_pp_ma:g} mA pp over "
        f"{EYE_FRAMES} frames -> {path}")
    return 0


def cmd_gen_dataset(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    data = generate_dataset(p, link, cfg.dataset_frames, seed=cfg.seed,
                            log=log)
    path = _dataset_path(cfg, out)
    write_dataset(path, data)
    log(f"{len(data)} frames at {cfg.symbol_rate_gbd:g} GBd -> {path}")
    return 0


def cmd_train_surrogate(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    data = read_dataset(_require(_dataset_path(cfg, out), "gen-dataset"))
    cat_cfg = default_cat_config(p, link)
    t0 = time.time()
    store, report = train_surrogate(data, cat_cfg,
                                    epochs=cfg.surrogate_epochs,
                                    batch=cfg.surrogate_batch,
                                    lr=cfg.surrogate_lr, seed=cfg.seed,
                                    log=log)
    sigma = dsp.calibrate_noise(p, link)
    path = _surrogate_path(cfg, out)
    _save_surrogate(path, store, cat_cfg, link, sigma, cfg.seed)
    _write_curve_csv(out / f"surrogate_train_{cfg.rate_tag()}.csv",
                     ["epoch", "train_nrmse", "test_nrmse"],
                     [(e, tr, te) for e, (tr, te)
                      in enumerate(zip(report.train_curve,
                                       report.test_curve))])
    log(f"kept epoch {report.best_epoch}: train NRMSE "
        f"{report.train_nrmse:.4f}, held-out NRMSE {report.test_nrmse:.4f}, "
        f"{time.time() - t0:.0f} s -> {path}")
    return 0


def cmd_eval_surrogate(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    store, cat_cfg, _ = _load_surrogate(
        _require(_surrogate_path(cfg, out), "train-surrogate"), cfg)
    data = read_dataset(_require(_dataset_path(cfg, out), "gen-dataset"))
    train, test = data.split(0.8)
    train_nrmse = batch_nrmse(store, cat_cfg, train.commands, train.received)
    test_nrmse = batch_nrmse(store, cat_cfg, test.commands, test.received)
    log(f"dataset NRMSE: train {train_nrmse:.4f}, held-out "
        f"{test_nrmse:.4f} (ratio {test_nrmse / train_nrmse:.2f})")
    grid = evaluate_surrogate(store, cat_cfg, p, link)
    centers_b = 0.5 * (grid.bias_edges[:-1] + grid.bias_edges[1:]) * 1e3
    centers_s = 0.5 * (grid.swing_edges[:-1] + grid.swing_edges[1:]) * 1e3
    path = out / f"surrogate_grid_{cfg.rate_tag()}.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bias_ma\\swing_ma"]
                        + [f"{s:.10g}" for s in centers_s])
        for i, b in enumerate(centers_b):
            writer.writerow([f"{b:.10g}"]
                            + [f"{v:.10g}" for v in grid.nrmse_grid[i]])
    log(f"operating-plane grid NRMSE: mean {grid.mean:.4f}, worst "
        f"{grid.worst:.4f} -> {path}")
    return 0


def cmd_train_ae(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    store, cat_cfg, sigma = _load_surrogate(
        _require(_surrogate_path(cfg, out), "train-surrogate"), cfg)
    ae = Autoencoder.fresh(p, link, cat_cfg.power_ref, seed=cfg.seed)
    t0 = time.time()
    report = train_autoencoder(ae, store, cat_cfg, sigma,
                               n_frames=cfg.ae_frames, epochs=cfg.ae_epochs,
                               lr=cfg.ae_lr, seed=cfg.seed, log=log)
    path = _ae_path(cfg, out)
    _save_autoencoder(path, ae, cat_cfg.power_ref, sigma, cfg.seed)
    _write_curve_csv(out / f"ae_train_{cfg.rate_tag()}.csv",
                     ["epoch", "ce_nats", "bias_ma", "swing_ma"],
                     [(e, ce, b * 1e3, s * 1e3) for e, (ce, b, s)
                      in enumerate(zip(report.loss_curve, report.bias_curve,
                                       report.swing_curve))])
    bias, swing = ae.learned_currents()
    log(f"learned operating point {bias * 1e3:.2f} mA bias, "
        f"{swing * 1e3:.2f} mA swing, {time.time() - t0:.0f} s -> {path}")
    return 0


def cmd_run_baselines(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    store, cat_cfg, sigma = _load_surrogate(
        _require(_surrogate_path(cfg, out), "train-surrogate"), cfg)
    norm = Normalization.from_laser(p, cat_cfg.power_ref)
    rows, _ = evaluate_baseline_set(p, link, store, cat_cfg, sigma,
                                    cfg.i_pp_ma * 1e-3, norm, cfg.seed,
                                    n_pilot=cfg.pilot_frames,
                                    n_eval=cfg.eval_frames,
                                    vnle_steps=cfg.vnle_steps, log=log)
    path = out / f"baselines_{cfg.rate_tag()}.csv"
    write_metrics_csv(path, rows)
    for m in rows:
        log(f"{m.approach:5s} SER {m.ser:.3e}  MI {m.mi_bits:.3f} bits")
    log(f"-> {path}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, out: Path, log) -> int:
    p = cfg.laser_params()
    link = cfg.link_config()
    store, cat_cfg, sigma = _load_surrogate(
        _require(_surrogate_path(cfg, out), "train-surrogate"), cfg)
    ae, _ = _load_autoencoder(_require(_ae_path(cfg, out), "train-ae"), p,
                              cfg)
    report = evaluate_link(p, link, ae, store, cat_cfg, sigma,
                           seed=cfg.seed, n_pilot=cfg.pilot_frames,
                           n_eval=cfg.eval_frames,
                           vnle_steps=cfg.vnle_steps, log=log)
    path = out / f"metrics_{cfg.rate_tag()}.csv"
    write_metrics_csv(path, report.rows)
    for m in report.rows:
        log(f"{m.approach:5s} P_rec {m.prec_dbm:7.2f} dBm  SER "
            f"{m.ser:.3e}  MI {m.mi_bits:.3f} bits")
    log(f"-> {path}")
    return 0


def cmd_report(cfg: ExperimentConfig, out: Path, log) -> int:
    rows = []
    for path in sorted(out.glob("metrics_*.csv")) \
            + sorted(out.glob("baselines_*.csv")):
        rows.extend(read_metrics_csv(path))
    if not rows:
        raise StorageError(f"no metrics CSVs under {out}; run `dml "
                           f"evaluate` or `dml run-baselines` first")
    order = {"ae": 0, "vnle": 1, "ffe": 2, "bl": 3}
    rows.sort(key=lambda m: (m.rs_gbd, order.get(m.approach, 9), m.ipp_ma))
    lines = [f"{'approach':8s} {'GBd':>5s} {'Ipp mA':>7s} {'Ibias mA':>9s} "
             f"{'Prec dBm':>9s} {'SER':>10s} {'MI bits':>8s} {'seed':>5s}"]
    for m in rows:
        lines.append(f"{m.approach:8s} {m.rs_gbd:5.1f} {m.ipp_ma:7.2f} "
                     f"{m.ibias_ma:9.2f} {m.prec_dbm:9.2f} {m.ser:10.3e} "
                     f"{m.mi_bits:8.3f} {m.seed:5d}")
    text = "\n".join(lines)
    (out / "report.txt").write_text(text + "\n")
    log(text)
    log(f"-> {out / 'report.txt'}")
    return 0


_COMMANDS = {
    "li-curve": cmd_li_curve,
    "s21": cmd_s21,
    "eye": cmd_eye,
    "gen-dataset": cmd_gen_dataset,
    "train-surrogate": cmd_train_surrogate,
    "eval-surrogate": cmd_eval_surrogate,
    "train-ae": cmd_train_ae,
    "run-baselines": cmd_run_baselines,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dml",
        description="Directly modulated laser link experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON experiment config (defaults when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="override the config output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = (parse_config(args.config) if args.config is not None
               else ExperimentConfig())
        cfg = with_overrides(cfg, args.seed,
                             str(args.out) if args.out is not None else None)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, print)
    except (ConfigError, StorageError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
