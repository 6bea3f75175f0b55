"""Command-line surface tying the modules into reproducible experiments.

Exit codes: 0 success, 1 contract/format error, 2 certification failure
(grad-check / equiv-check / plot self-check).  Every command is
deterministic given its flags and seed; file writes are atomic.
"""

from __future__ import annotations

import os
import sys

import click
import numpy as np

from . import certify, optim
from .activations import scalar_wig, scalar_wig_derivative
from .data import add_noise, load_cifar, load_pgm_ppm, save_pgm_ppm
from .errors import WigError
from .metrics import psnr, ssim
from .serialize import atomic_write_text, load_checkpoint, save_checkpoint

CERT_FAIL = 2


@click.group()
def cli():
    """Weighted sigmoid gate experiments."""


def _parse_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as e:
        raise click.BadParameter(f"expected a comma-separated float list: {e}")


def _parse_range(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise click.BadParameter(f"expected LO:HI, got {text!r}")
    if not lo < hi:
        raise click.BadParameter(f"empty range {text!r}")
    return lo, hi


@cli.command("plot-activation")
@click.option("--w", "w_list", default="0.5,1,2,10", show_default=True,
              help="Comma-separated gate gains.")
@click.option("--b", "b_list", default="0", show_default=True,
              help="Comma-separated gate biases.")
@click.option("--range", "xrange", default="-6:6", show_default=True,
              help="Sample range LO:HI.")
@click.option("--samples", default=601, show_default=True)
@click.option("--out", "out_path", default="-", show_default=True,
              help="CSV destination ('-' = stdout).")
def plot_activation(w_list, b_list, xrange, samples, out_path):
    """Emit x, f(x), f'(x) columns per (w,b) pair; the analytic derivative is
    cross-checked against central differences at emit time."""
    ws = _parse_list(w_list)
    bs = _parse_list(b_list)
    lo, hi = _parse_range(xrange)
    if samples < 2:
        raise click.BadParameter("--samples must be >= 2")
    xs = np.linspace(lo, hi, samples)
    cols = {"x": xs}
    h = 1e-6
    worst = 0.0
    for w in ws:
        for b in bs:
            f = np.array([scalar_wig(x, w, b) for x in xs])
            df = np.array([scalar_wig_derivative(x, w, b) for x in xs])
            fd = np.array([(scalar_wig(x + h, w, b) - scalar_wig(x - h, w, b)) / (2 * h)
                           for x in xs])
            worst = max(worst, float(np.abs(df - fd).max()))
            tag = f"w{w:g}_b{b:g}"
            cols[f"f_{tag}"] = f
            cols[f"df_{tag}"] = df
    lines = [",".join(cols)]
    for i in range(samples):
        lines.append(",".join(repr(float(col[i])) for col in cols.values()))
    text = "\n".join(lines) + "\n"
    if out_path == "-":
        click.echo(text, nl=False)
    else:
        atomic_write_text(out_path, text)
    click.echo(f"derivative self-check max |analytic - fd| = {worst:.3e}", err=True)
    if worst >= 1e-8:
        click.echo("certification FAILED: derivative column disagrees", err=True)
        return CERT_FAIL
    return 0


@cli.command("grad-check")
@click.option("--target", type=click.Choice(["wig-dense", "wig-conv", "network"]),
              default="wig-dense", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--instances", default=20, show_default=True)
@click.option("--inject-error", is_flag=True, hidden=True,
              help="Corrupt the analytic gradient (negative control).")
def grad_check(target, seed, instances, inject_error):
    """Certify tape gradients against central finite differences."""
    res = certify.run_gradcheck(target, seed=seed, instances=instances,
                                inject_error=inject_error)
    click.echo(f"target={res.target} instances={len(res.errors)} "
               f"max_rel_error={res.max_error:.3e} threshold={res.threshold:g}")
    if not res.passed:
        click.echo("certification FAILED", err=True)
        return CERT_FAIL
    click.echo("certification passed")
    return 0


@cli.command("equiv-check")
@click.option("--seed", default=0, show_default=True)
def equiv_check(seed):
    """Run the special-case tower and the fused-form equivalence."""
    lines = certify.run_equiv_check(seed=seed)
    ok = True
    for line in lines:
        status = "ok" if line.passed else "FAIL"
        click.echo(f"{line.name}: value={line.value:.3e} bound={line.bound:.3e} {status}")
        ok = ok and line.passed
    if not ok:
        click.echo("certification FAILED", err=True)
        return CERT_FAIL
    click.echo("certification passed")
    return 0


def _apply_overrides(cfg, activation, seed):
    import dataclasses

    if activation is not None:
        cfg = dataclasses.replace(cfg, activation=activation)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _emit_run(out_dir, net, report, cfg):
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "report.csv"), report.to_csv())
    atomic_write_text(os.path.join(out_dir, "summary.txt"), report.summary_text())
    save_checkpoint(os.path.join(out_dir, "checkpoint.wigc"), net,
                    extra_manifest={"config": cfg.echo()})


def _resolve_data(data_path, cfg):
    path = data_path or cfg.data
    if not path:
        raise WigError("no dataset given: pass --data or set data= in the config")
    if not os.path.exists(path):
        raise WigError(f"dataset path {path!r} does not exist")
    return path


@cli.command("train-classify")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", default=None, type=click.Path(),
              help="Dataset root (falls back to the config's data= key).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--activation", default=None, help="Override the config activation.")
@click.option("--seed", default=None, type=int, help="Override the config seed.")
def train_classify(config_path, data_path, out_dir, activation, seed):
    """Train the classifier; writes report.csv, summary.txt and a checkpoint."""
    cfg = _apply_overrides(optim.TrainConfig.from_file(config_path), activation, seed)
    dataset = load_cifar(_resolve_data(data_path, cfg), variant=cfg.classes)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    order = rng.permutation(len(dataset))
    if cfg.subset:
        order = order[:cfg.subset]
    n_val = int(round(len(order) * cfg.val_fraction))
    val_set = dataset.subset(order[:n_val]) if n_val else None
    train_set = dataset.subset(order[n_val:])
    net = optim.build_from_config(cfg)
    click.echo(f"training {cfg.net} activation={cfg.activation} "
               f"params={net.param_count()} train={len(train_set)} "
               f"val={0 if val_set is None else len(val_set)}")
    try:
        report = optim.train_classifier(net, train_set, val_set, cfg)
    except WigError as e:
        report = getattr(e, "report", None)
        if report is not None:
            _emit_run(out_dir, net, report, cfg)
        raise
    _emit_run(out_dir, net, report, cfg)
    if report.rows:
        last = report.rows[-1]
        click.echo(f"final train_loss={last.train_loss:.4f} val_metric={last.val_metric:.4f}")
    return 0


def _load_corpus(data_path):
    names = sorted(f for f in os.listdir(data_path) if f.endswith(".pgm"))
    if not names:
        raise WigError(f"no .pgm images under {data_path}")
    return [load_pgm_ppm(os.path.join(data_path, f)) for f in names]


@cli.command("train-denoise")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", default=None, type=click.Path(),
              help="Directory of PGM images (falls back to the config's data= key).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--activation", default=None, help="Override the config activation.")
@click.option("--seed", default=None, type=int, help="Override the config seed.")
def train_denoise(config_path, data_path, out_dir, activation, seed):
    """Train the denoiser on a directory of PGM images."""
    cfg = _apply_overrides(optim.TrainConfig.from_file(config_path), activation, seed)
    corpus = _load_corpus(_resolve_data(data_path, cfg))
    net = optim.build_from_config(cfg)
    click.echo(f"training {cfg.net} activation={cfg.activation} "
               f"params={net.param_count()} corpus={len(corpus)}")
    try:
        report = optim.train_denoiser(net, corpus, cfg)
    except WigError as e:
        partial = getattr(e, "report", None)
        if partial is not None:
            _emit_run(out_dir, net, partial, cfg)
        raise
    _emit_run(out_dir, net, report, cfg)
    if report.rows:
        click.echo(f"final val_psnr={report.rows[-1].val_metric:.2f} dB")
    return 0


@cli.command("eval-classify")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
def eval_classify(ckpt_path, data_path):
    """Report accuracy of a classifier checkpoint on a CIFAR-format file."""
    net, manifest = load_checkpoint(ckpt_path)
    classes = int(manifest.get("config", {}).get("classes", 10))
    dataset = load_cifar(data_path, variant=classes)
    acc = optim.evaluate_accuracy(net, dataset)
    click.echo(f"accuracy={acc!r} n={len(dataset)}")
    return 0


@cli.command("denoise-image")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--sigma", default=0.0, show_default=True,
              help="Noise std (8-bit scale) added to the input before denoising.")
@click.option("--seed", default=0, show_default=True)
@click.option("--clean", "clean_path", default=None, type=click.Path(exists=True),
              help="Clean reference for metrics (defaults to --in when --sigma > 0).")
def denoise_image_cmd(ckpt_path, in_path, out_path, sigma, seed, clean_path):
    """Restore one grayscale PGM image and report PSNR/SSIM against a clean
    reference when one is available."""
    net, _ = load_checkpoint(ckpt_path)
    img = load_pgm_ppm(in_path)
    if img.shape[0] != 1:
        raise WigError(f"denoiser expects grayscale (1,H,W), got {img.shape}")
    rng = np.random.Generator(np.random.PCG64(seed))
    noisy = add_noise(img, sigma, rng) if sigma > 0 else img
    restored = optim.denoise_image(net, noisy)
    save_pgm_ppm(out_path, restored)
    ref = None
    if clean_path is not None:
        ref = load_pgm_ppm(clean_path)
    elif sigma > 0:
        ref = img
    if ref is not None:
        line = (f"noisy: psnr={psnr(ref, noisy):.4f} ssim={ssim(ref[0], noisy[0]):.4f} | "
                f"restored: psnr={psnr(ref, restored):.4f} ssim={ssim(ref[0], restored[0]):.4f}")
        click.echo(line)
    else:
        click.echo(f"restored written to {out_path} (no clean reference)")
    return 0


def main():
    try:
        rc = cli.main(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except WigError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    sys.exit(int(rc) if isinstance(rc, int) else 0)


if __name__ == "__main__":
    main()
