"""Adamax, the gate sparseness penalty, and the training loops.

The optimizer follows the infinity-norm moment rule

    m <- b1*m + (1-b1)*g
    u <- max(b2*u, |g|)
    theta <- theta - (lr / (1 - b1^t)) * m / (u + eps)

with defaults lr=0.002, b1=0.9, b2=0.999, eps=1e-8.  Weight decay
2*lambda*W is added to the gradient of every parameter named ``*weight``
(kernels and gate kernels; never biases), which is the gradient of the
lambda*|W|_2^2 loss term.  The gate penalty is the plain sum of all captured
sigmoid masks scaled by lambda_g; the training loop divides it by the batch
size so lambda_g is batch-size invariant.

Runs are single-threaded and fully determined by (config, seed): one RNG
stream drives shuffling, augmentation, dropout and noise synthesis in a
fixed order, and parameter updates allocate fresh arrays rather than writing
in place.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from . import tensor as T
from ._alloc import tune_malloc
from .errors import FormatError, TrainingError
from .init import InitPolicy
from .layers import (
    NetworkSpec,
    build_network,
    load_spec,
    reference_classifier,
    reference_denoiser,
)
from .metrics import accuracy, cross_entropy, mse, psnr
from .tensor import Tensor


class Adamax:
    def __init__(self, named_params, lr: float = 0.002, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.named = list(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.m = [np.zeros_like(p.data) for _, p in self.named]
        self.u = [np.zeros_like(p.data) for _, p in self.named]
        self.t = 0
        self._decay = [name.endswith("weight") for name, _ in self.named]

    def step(self) -> None:
        self.t += 1
        correction = 1.0 - self.beta1 ** self.t
        scale = self.lr / correction
        for i, (name, p) in enumerate(self.named):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay and self._decay[i]:
                g = g + (2.0 * self.weight_decay) * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.u[i] = np.maximum(self.beta2 * self.u[i], np.abs(g))
            new = p.data - scale * (self.m[i] / (self.u[i] + self.eps))
            new = new.astype(p.data.dtype, copy=False)
            new.setflags(write=False)
            p.data = new


def gate_sparsity_penalty(gate_outputs, lam: float) -> Tensor:
    """lam times the L1 norm of the captured gate masks; since every gate
    element lies in (0,1) the L1 norm is the plain sum.  Differentiable."""
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda_g must be finite and >= 0, got {lam}")
    if lam == 0.0 or not gate_outputs:
        return T.constant(np.zeros((), dtype=np.float64))
    total = T.tsum(gate_outputs[0])
    for g in gate_outputs[1:]:
        total = T.add(total, T.tsum(g))
    return T.mul(total, float(lam))


def mean_gate_activation(net, x) -> float:
    """Average sigmoid mask value across all gate layers for input batch x."""
    with T.no_grad():
        net.forward(x, train=False)
    gates = net.gate_outputs()
    if not gates:
        return float("nan")
    total = sum(float(g.data.sum()) for g in gates)
    count = sum(g.size for g in gates)
    return total / count


# ---------------------------------------------------------------------------
# configuration and reports
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    task: str = "classify"            # classify | denoise
    net: str = "auto"                 # auto | builtin name | path to a .net file
    data: str = ""                    # dataset root; CLI --data overrides
    activation: str = "wig"
    precision: str = "f32"
    seed: int = 0
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_wd: float = 0.0
    lambda_gate: float = 0.0
    init_mode: str = "scratch"
    gate_scale: float = 1.0
    # classification
    epochs: int = 5
    batch_size: int = 64
    augment: bool = False
    val_fraction: float = 0.1
    subset: int = 0                   # images to keep; 0 = all
    classes: int = 10
    # denoising
    total_batches: int = 2000
    patch: int = 32
    sigma_min: float = 0.0
    sigma_max: float = 55.0
    log_every: int = 100
    val_sigma: float = 25.0

    def echo(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read(), origin=str(path))

    @classmethod
    def from_text(cls, text: str, origin: str = "<config>") -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{origin}:{lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise FormatError(f"{origin}:{lineno}: unknown config key {key!r}")
            ftype = fields[key].type
            try:
                if ftype == "int":
                    kwargs[key] = int(val)
                elif ftype == "float":
                    kwargs[key] = float(val)
                elif ftype == "bool":
                    kwargs[key] = val.lower() in ("1", "true", "yes", "on")
                else:
                    kwargs[key] = val
            except ValueError as e:
                raise FormatError(f"{origin}:{lineno}: bad value for {key}: {e}") from e
        return cls(**kwargs)

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.echo().items()) + "\n"


_BUILTIN_SPECS = {
    "classifier_desk": lambda cfg: reference_classifier("desk", cfg.classes, cfg.activation),
    "classifier_paper": lambda cfg: reference_classifier("paper", cfg.classes, cfg.activation),
    "denoiser_desk": lambda cfg: reference_denoiser("desk", cfg.activation),
    "denoiser_paper": lambda cfg: reference_denoiser("paper", cfg.activation),
}


def resolve_net_spec(cfg: TrainConfig) -> NetworkSpec:
    """Builtin topology names get the config's activation and precision; a
    path to a .net file is loaded verbatim apart from precision.  "auto"
    picks the desk topology matching the task."""
    name = cfg.net
    if name == "auto":
        name = "denoiser_desk" if cfg.task == "denoise" else "classifier_desk"
    if name in _BUILTIN_SPECS:
        spec = _BUILTIN_SPECS[name](cfg)
    else:
        spec = load_spec(cfg.net)
    if spec.precision != cfg.precision:
        spec = dataclasses.replace(spec, precision=cfg.precision)
    return spec


def build_from_config(cfg: TrainConfig):
    policy = InitPolicy(mode=cfg.init_mode, gate_scale=cfg.gate_scale)
    return build_network(resolve_net_spec(cfg), seed=cfg.seed, policy=policy)


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_metric: float


@dataclass
class RunReport:
    config: dict
    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    aborted: bool = False
    wall_seconds: float = 0.0
    epoch_seconds: list = field(default_factory=list)

    def to_csv(self) -> str:
        # wall times stay out of the CSV so re-runs are byte-identical; they
        # are reported in the summary instead
        lines = ["epoch,train_loss,val_metric"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_metric!r}")
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = ["[config]"]
        lines += [f"{k}={v}" for k, v in self.config.items()]
        lines.append("")
        lines.append("[epochs]")
        for r, secs in zip(self.rows, self.epoch_seconds):
            lines.append(f"epoch {r.epoch}: train_loss={r.train_loss!r} "
                         f"val_metric={r.val_metric!r} wall={secs:.3f}s")
        lines.append("")
        lines.append("[final]")
        for k in sorted(self.final):
            lines.append(f"{k}={self.final[k]!r}")
        lines.append(f"aborted={self.aborted}")
        lines.append(f"wall_seconds={self.wall_seconds:.3f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def evaluate_accuracy(net, image_set, batch: int = 256) -> float:
    hits = 0
    n = len(image_set)
    with T.no_grad():
        for start in range(0, n, batch):
            xb = image_set.images[start:start + batch]
            logits = net.forward(xb, train=False).data
            hits += int((np.argmax(logits, axis=1) == image_set.labels[start:start + batch]).sum())
    return hits / n


def _total_loss(net, task_loss: Tensor, lam_gate: float, batch_size: int) -> Tensor:
    total = task_loss
    if lam_gate > 0.0:
        gates = net.gate_outputs()
        if gates:
            penalty = gate_sparsity_penalty(gates, lam_gate)
            total = T.add(total, T.mul(penalty, 1.0 / batch_size))
    return total


def train_classifier(net, train_set, val_set, cfg: TrainConfig) -> RunReport:
    """Mini-batch training with cross-entropy; per-epoch loss is the epoch
    average of batch losses, the val metric is accuracy."""
    tune_malloc()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    opt = Adamax(net.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                 eps=cfg.eps, weight_decay=cfg.lambda_wd)
    report = RunReport(config=cfg.echo())
    t0 = time.perf_counter()
    n = len(train_set)
    last_good = [p.data for _, p in opt.named]
    for epoch in range(cfg.epochs):
        et0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = train_set.images[idx]
            if cfg.augment:
                xb = np.stack([data_mod.augment(im, rng) for im in xb])
            yb = train_set.labels[idx]
            logits = net.forward(xb.astype(net.dtype, copy=False), train=True, rng=rng)
            loss = cross_entropy(logits, yb)
            lval = loss.item()
            if not np.isfinite(lval):
                _restore(opt, last_good)
                report.aborted = True
                report.wall_seconds = time.perf_counter() - t0
                raise _abort(f"non-finite training loss at epoch {epoch}", report)
            total = _total_loss(net, loss, cfg.lambda_gate, len(idx))
            total.backward()
            opt.step()
            net.zero_grad()
            losses.append(lval)
        val_metric = evaluate_accuracy(net, val_set) if val_set is not None else float("nan")
        report.rows.append(EpochRow(epoch, float(np.mean(losses)), val_metric))
        report.epoch_seconds.append(time.perf_counter() - et0)
        last_good = [p.data for _, p in opt.named]
    report.final["train_loss"] = report.rows[-1].train_loss if report.rows else float("nan")
    if val_set is not None:
        report.final["val_accuracy"] = (
            report.rows[-1].val_metric if report.rows else evaluate_accuracy(net, val_set)
        )
    report.wall_seconds = time.perf_counter() - t0
    return report


def _restore(opt: Adamax, snapshot) -> None:
    for (name, p), old in zip(opt.named, snapshot):
        p.data = old


def _abort(msg: str, report: RunReport) -> TrainingError:
    err = TrainingError(msg)
    err.report = report
    return err


def make_validation_pairs(images, cfg: TrainConfig, count: int = 8):
    """Fixed, seed-determined clean/noisy patch pairs at the val sigma."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 977))
    pairs = data_mod.sample_denoise_batch(
        images, count, cfg.patch, (cfg.val_sigma, cfg.val_sigma), rng)
    return data_mod.stack_pairs(pairs)


def train_denoiser(net, corpus, cfg: TrainConfig, val_images=None) -> RunReport:
    """Patch-based residual training; one report row per log_every batches,
    val metric is PSNR on a fixed noisy patch set from val_images."""
    tune_malloc()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    opt = Adamax(net.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                 eps=cfg.eps, weight_decay=cfg.lambda_wd)
    report = RunReport(config=cfg.echo())
    t0 = time.perf_counter()
    val_clean, val_noisy = make_validation_pairs(
        val_images if val_images is not None else corpus, cfg)
    last_good = [p.data for _, p in opt.named]
    losses = []
    et0 = time.perf_counter()
    for step in range(cfg.total_batches):
        pairs = data_mod.sample_denoise_batch(
            corpus, cfg.batch_size, cfg.patch, (cfg.sigma_min, cfg.sigma_max), rng)
        clean, noisy = data_mod.stack_pairs(pairs)
        out = net.forward(noisy.astype(net.dtype, copy=False), train=True, rng=rng)
        loss = mse(out, clean.astype(net.dtype, copy=False))
        lval = loss.item()
        if not np.isfinite(lval):
            _restore(opt, last_good)
            report.aborted = True
            report.wall_seconds = time.perf_counter() - t0
            raise _abort(f"non-finite training loss at batch {step}", report)
        total = _total_loss(net, loss, cfg.lambda_gate, cfg.batch_size)
        total.backward()
        opt.step()
        net.zero_grad()
        losses.append(lval)
        if (step + 1) % cfg.log_every == 0 or step + 1 == cfg.total_batches:
            val_psnr = _denoise_psnr(net, val_clean, val_noisy)
            report.rows.append(EpochRow(len(report.rows), float(np.mean(losses)), val_psnr))
            report.epoch_seconds.append(time.perf_counter() - et0)
            et0 = time.perf_counter()
            losses = []
            last_good = [p.data for _, p in opt.named]
    report.final["val_psnr"] = report.rows[-1].val_metric if report.rows else float("nan")
    report.wall_seconds = time.perf_counter() - t0
    return report


def _denoise_psnr(net, clean, noisy) -> float:
    with T.no_grad():
        out = net.forward(noisy.astype(net.dtype, copy=False), train=False).data
    return psnr(clean, np.clip(out, 0.0, 1.0))


def denoise_image(net, noisy: np.ndarray) -> np.ndarray:
    """Run the denoiser on one (1,H,W) image; output clipped to [0,1]."""
    with T.no_grad():
        out = net.forward(noisy.astype(net.dtype, copy=False)[None], train=False).data[0]
    return np.clip(out, 0.0, 1.0).astype(np.float64)
