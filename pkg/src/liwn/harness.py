"""Run configuration and the experiment drivers behind the command line.

A run is fully described by a :class:`RunConfig` (plain ``key = value`` text,
``#`` comments) together with the dataset bytes.  Every driver validates the
configuration and its inputs before creating any output, and writes the
resolved configuration next to its outputs.

Training is deterministic: epoch ``e`` draws its shuffle order and
augmentation from ``default_rng([seed, e])`` and batch ``b`` reseeds dropout
from ``[seed, e, b]``.  Together with the saved optimiser velocities and batch
norm statistics this makes a resumed run reproduce an uninterrupted one.
"""
import csv
import dataclasses
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import audit as audit_mod
from . import checkpoint, data, gradcheck, models, nn, scattering

MODEL_KINDS = ("ref", "scatnet", "scatter-linear", "graph")
DATASETS = ("cifar10", "cifar100", "textures")
METRIC_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "test_acc", "wall_time")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    model: str = "ref"
    variant: str = "A"
    swaps: str = ""
    width: int = 64
    conv_width: int = 96
    dropout: float = 0.3
    downsample: str = "stride"
    graph: str = ""
    # data
    dataset: str = "cifar10"
    data_dir: str = ""
    subset: int = 0
    n_train: int = 500
    n_test: int = 200
    data_seed: int = 0
    augment: str = "standard"
    # run
    seed: int = 0
    precision: str = "float32"
    out: str = "runs/default"
    # optimisation (defaults follow the reference schedule)
    lr0: float = 0.5
    momentum: float = 0.85
    batch: int = 128
    weight_decay: float = 1e-4
    milestones: str = "60,80,100"
    gamma: float = 0.2
    epochs: int = 120
    halt_after: int = 0
    resume: str = ""
    # eval / extract
    checkpoint: str = ""
    layer: str = ""
    images: str = ""
    split: str = "test"
    count: int = 0
    # stability
    source: str = "auto"
    n_images: int = 20
    shifts: str = "1,2"
    warp_levels: str = "0,0.25,0.5,0.75,1.0"
    warp_seeds: int = 3
    # gradcheck
    inject_fault: int = 0

    @classmethod
    def from_items(cls, items):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in items:
            key = key.strip()
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            raw = raw.strip()
            try:
                values[key] = kinds[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {kinds[key].__name__}") from exc
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def milestone_list(self):
        return [int(v) for v in self.milestones.split(",") if v.strip()]

    def train_config(self):
        try:
            return nn.TrainConfig(self.lr0, self.momentum, self.batch, self.weight_decay,
                                  tuple(self.milestone_list()), self.gamma, self.epochs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.model in MODEL_KINDS, f"model must be one of {MODEL_KINDS}")
        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        need(self.variant in models.SCATNET_LEARNED, "variant must be A, B, C or D")
        need(set(self.swaps.replace(",", "")) <= set(models.VGG_NAMES), "swaps must name layers A-F")
        need(self.precision in ("float32", "float64"), "precision must be float32 or float64")
        need(self.augment in ("standard", "none"), "augment must be standard or none")
        need(self.downsample in ("stride", "maxpool"), "downsample must be stride or maxpool")
        need(self.split in ("train", "test"), "split must be train or test")
        need(self.source in ("auto", "cifar", "natural"), "source must be auto, cifar or natural")
        need(0 <= self.dropout < 1, "dropout must be in [0, 1)")
        need(min(self.width, self.conv_width, self.n_train, self.n_test, self.n_images,
                 self.warp_seeds) > 0, "sizes must be positive")
        need(min(self.subset, self.halt_after, self.count) >= 0, "counts must be >= 0")
        need(self.model != "graph" or self.graph, "model=graph needs graph=<path>")
        try:
            self.shift_list()
            levels = self.warp_level_list()
        except ValueError as exc:
            raise ConfigError(f"bad shifts/warp_levels list: {exc}") from exc
        need(all(0 <= t <= 1 for t in levels), "warp_levels must lie in [0, 1]")
        self.train_config()

    def shift_list(self):
        return [int(v) for v in self.shifts.split(",") if v.strip()]

    def warp_level_list(self):
        return [float(v) for v in self.warp_levels.split(",") if v.strip()]


def parse_assignments(lines, origin="config"):
    items = []
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{n}: expected key = value, got {line!r}")
        items.append((key, value))
    return items


def load_config(path=None, overrides=()):
    items = []
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path} not found")
        with open(path) as fh:
            items += parse_assignments(fh.read().splitlines(), path)
    items += parse_assignments(overrides, "--set")
    return RunConfig.from_items(items)


# ---------------------------------------------------------------------------
# models and data from a config

def build_graph(cfg):
    dataset = cfg.dataset
    if cfg.model == "ref":
        g = models.build_reference_vgg(dataset, cfg.width, cfg.downsample)
        return models.apply_inv_swaps(g, cfg.swaps.replace(",", ""))
    if cfg.model == "scatnet":
        return models.build_scatnet(cfg.variant, cfg.conv_width, dataset, cfg.dropout)
    if cfg.model == "scatter-linear":
        return models.build_scatter_linear(dataset)
    if not os.path.isfile(cfg.graph):
        raise ConfigError(f"graph file {cfg.graph} not found")
    with open(cfg.graph) as fh:
        return models.ModelGraph.from_text(fh.read())


def check_data(cfg):
    if cfg.dataset in ("cifar10", "cifar100") and not data.cifar_files_present(cfg.data_dir, cfg.dataset):
        raise ConfigError(f"{cfg.dataset} binary files not found under data_dir={cfg.data_dir!r}")


def load_data(cfg):
    """(train, test) datasets after subsetting; images in [0, 1]."""
    if cfg.dataset == "textures":
        return (data.synth_oriented_textures(cfg.n_train, [cfg.data_seed, 0]),
                data.synth_oriented_textures(cfg.n_test, [cfg.data_seed, 1]))
    loader = data.load_cifar10 if cfg.dataset == "cifar10" else data.load_cifar100
    train, test = loader(cfg.data_dir)
    if cfg.subset:
        train = data.subset(train, cfg.subset, cfg.data_seed)
    return train, test


# ---------------------------------------------------------------------------
# training

class Trainer:
    def __init__(self, cfg, net, train, test, log=print):
        self.cfg = cfg
        self.net = net
        self.train = train
        self.test = test
        self.tcfg = cfg.train_config()
        self.opt = nn.SGD(self.tcfg)
        self.norm = data.Normalizer.fit(train.pixels)
        self.x_test = self.norm(test.images).astype(net.dtype)
        self.epoch = 0
        self.best_acc = -1.0
        self.log = log

    def run_epoch(self):
        cfg, net, e = self.cfg, self.net, self.epoch
        rng = np.random.default_rng([cfg.seed, e])
        total_loss, correct, seen = 0.0, 0, 0
        for b, idx in enumerate(data.iterate_batches(len(self.train), self.tcfg.batch, rng)):
            x = data.augment(self.train.float_images(idx), rng, cfg.augment)
            x = self.norm(x).astype(net.dtype)
            y = self.train.labels[idx]
            net.reseed_dropout([cfg.seed, e, b])
            logits = net.forward(x, train=True)
            loss, g = nn.softmax_cross_entropy(logits.astype(np.float64), y)
            net.backward(g.astype(net.dtype))
            self.opt.step(net.params(), net.grads(), e)
            net.project()
            total_loss += loss * len(idx)
            correct += int((logits.argmax(1) == y).sum())
            seen += len(idx)
        self.epoch += 1
        return total_loss / seen, correct / seen

    def evaluate(self):
        return float((self.net.predict(self.x_test) == self.test.labels).mean())

    # checkpoint state --------------------------------------------------
    def state(self):
        s = dict(self.net.state())
        s.update({f"opt.{k}": v for k, v in self.opt.velocity.items()})
        s["data.mean"], s["data.std"] = self.norm.mean, self.norm.std
        s["meta.epoch"] = np.array([self.epoch], dtype=np.float32)
        s["meta.best_acc"] = np.array([self.best_acc], dtype=np.float32)
        s["meta.steps"] = np.array([self.opt.steps], dtype=np.float32)
        return s

    def load_state(self, s):
        self.net.load_state(s)
        self.opt.velocity = {k[4:]: v.astype(self.net.dtype) for k, v in s.items() if k.startswith("opt.")}
        self.epoch = int(s["meta.epoch"][0])
        self.best_acc = float(s["meta.best_acc"][0])
        self.opt.steps = int(s["meta.steps"][0])


def _read_metrics(path, upto):
    if not os.path.isfile(path):
        return []
    with open(path) as fh:
        return [row for row in csv.DictReader(fh) if int(row["epoch"]) <= upto]


def _write_metrics(path, rows):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_FIELDS)
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)


def _prepare_out(cfg, name):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, name), "w") as fh:
        fh.write(cfg.to_text())


def cmd_train(cfg, log=print):
    check_data(cfg)
    if cfg.resume and not os.path.isfile(cfg.resume):
        raise ConfigError(f"resume checkpoint {cfg.resume} not found")
    graph = build_graph(cfg)
    train, test = load_data(cfg)
    if train.classes != graph.classes:
        raise ConfigError(f"model has {graph.classes} outputs, dataset {train.classes} classes")
    net = models.Network(graph, cfg.seed, cfg.dtype)
    trainer = Trainer(cfg, net, train, test, log)
    if cfg.resume:
        trainer.load_state(checkpoint.load(cfg.resume))
    _prepare_out(cfg, "config.txt")
    metrics_path = os.path.join(cfg.out, "metrics.csv")
    rows = _read_metrics(metrics_path, trainer.epoch) if cfg.resume else []
    start = time.perf_counter()
    stop = cfg.epochs if not cfg.halt_after else min(cfg.epochs, trainer.epoch + cfg.halt_after)
    while trainer.epoch < stop:
        lr = trainer.tcfg.lr(trainer.epoch)
        loss, acc = trainer.run_epoch()
        test_acc = trainer.evaluate()
        rows.append(dict(epoch=trainer.epoch, lr=f"{lr:.6g}", train_loss=f"{loss:.6f}",
                         train_acc=f"{acc:.6f}", test_acc=f"{test_acc:.6f}",
                         wall_time=f"{time.perf_counter() - start:.3f}"))
        _write_metrics(metrics_path, rows)
        if test_acc > trainer.best_acc:
            trainer.best_acc = test_acc
            checkpoint.save(os.path.join(cfg.out, "best.ckpt"), trainer.state())
        checkpoint.save(os.path.join(cfg.out, "final.ckpt"), trainer.state())
        log(f"epoch {trainer.epoch:4d} lr {lr:.4g} loss {loss:.4f} train {acc:.4f} test {test_acc:.4f}")
    return rows


def restore_network(cfg):
    """Network and normaliser from ``cfg.checkpoint``."""
    if not os.path.isfile(cfg.checkpoint):
        raise ConfigError(f"checkpoint {cfg.checkpoint!r} not found")
    state = checkpoint.load(cfg.checkpoint)
    net = models.Network(build_graph(cfg), cfg.seed, cfg.dtype)
    net.load_state(state)
    return net, data.Normalizer(state["data.mean"], state["data.std"])


def cmd_eval(cfg, log=print):
    check_data(cfg)
    net, norm = restore_network(cfg)
    _, test = load_data(cfg)
    acc = float((net.predict(norm(test.images).astype(net.dtype)) == test.labels).mean())
    _prepare_out(cfg, "eval_config.txt")
    with open(os.path.join(cfg.out, "eval.txt"), "w") as fh:
        fh.write(f"checkpoint\t{cfg.checkpoint}\ntest_acc\t{acc:.6f}\n")
    log(f"test accuracy {acc:.4f}")
    return acc


def _extract_inputs(cfg):
    if cfg.images:
        if not os.path.isfile(cfg.images):
            raise ConfigError(f"images file {cfg.images} not found")
        t = checkpoint.load(cfg.images)
        if "images" not in t or t["images"].ndim != 4:
            raise ConfigError("images file must hold a 4-D tensor named 'images'")
        return t["images"].astype(np.float64)
    check_data(cfg)
    train, test = load_data(cfg)
    split = train if cfg.split == "train" else test
    return split.float_images(np.arange(cfg.count or len(split))).astype(np.float64)


def extract_features(cfg, images):
    if cfg.layer:
        net, norm = restore_network(cfg)
        return net.truncated_forward(norm(images), cfg.layer)
    return scattering.scatter(images, order=2)


def cmd_extract(cfg, log=print):
    images = _extract_inputs(cfg)
    if cfg.layer and not cfg.checkpoint:
        raise ConfigError("extracting a network layer needs checkpoint=<path>")
    feats = extract_features(cfg, images)
    _prepare_out(cfg, "extract_config.txt")
    path = os.path.join(cfg.out, "features.liwn")
    checkpoint.save(path, {f"{i:06d}": f for i, f in enumerate(feats)})
    log(f"wrote {len(feats)} features of shape {feats.shape[1:]} to {path}")
    return path


def cmd_audit(cfg, log=print):
    graph = build_graph(cfg)
    report = audit_mod.audit(graph)
    _prepare_out(cfg, "audit_config.txt")
    table = report.to_table() + (f"measured level-1 wavelet mults per pixel: "
                                 f"{float(audit_mod.measured_wavelet_mults_per_pixel()):.2f} "
                                 f"(model {float(audit_mod.wavelet_mults_per_pixel()):.2f})\n")
    with open(os.path.join(cfg.out, "audit.txt"), "w") as fh:
        fh.write(table)
    with open(os.path.join(cfg.out, "audit.tsv"), "w") as fh:
        fh.write(report.to_tsv())
    with open(os.path.join(cfg.out, "graph.txt"), "w") as fh:
        fh.write(graph.to_text())
    log(table)
    return report


def stability_images(cfg):
    """Stability test images in [0, 1]: CIFAR test images when available."""
    use_cifar = cfg.source == "cifar" or (cfg.source == "auto"
                                          and data.cifar_files_present(cfg.data_dir, "cifar10"))
    if use_cifar:
        check_data(dataclasses.replace(cfg, dataset="cifar10"))
        _, test = data.load_cifar10(cfg.data_dir)
        idx = np.random.default_rng(cfg.seed).choice(len(test), cfg.n_images, replace=False)
        return test.float_images(np.sort(idx)).astype(np.float64), "cifar10"
    return data.natural_patches(cfg.n_images, cfg.seed), "natural"


def stability_table(images, shifts, warp_levels, warp_seeds, orders=(1, 2), grad_budget=0.25):
    """Median relative distances over images for shifts and random smooth warps.

    A warp level ``t`` in [0, 1] scales each random field so that
    ``||grad tau||_inf = t * grad_budget``; the reported amount is the median
    ``||tau||_inf`` in pixels over the seeds.
    """
    fields_ = [scattering.smooth_displacement(images.shape[-2:], seed) for seed in range(warp_seeds)]
    rows = []
    for order in orders:
        base = [scattering.scatter(x, order) for x in images]
        for s in [0] + list(shifts):
            sc, px = [], []
            for x, sx in zip(images, base):
                xs = scattering.shift_image(x, s)
                nx = np.linalg.norm(x)
                sc.append(np.linalg.norm(scattering.scatter(xs, order) - sx) / nx)
                px.append(np.linalg.norm(xs - x) / nx)
            rows.append(_stab_row("shift", float(s), 0.0, order, sc, px))
        for t in warp_levels:
            sc, px, amps = [], [], []
            for field_, g in fields_:
                a = t * grad_budget / g
                amps.append(a)
                probe = scattering.StabilityProbe(a * field_)
                for x, sx in zip(images, base):
                    xw = scattering.warp_image(x, probe)
                    nx = np.linalg.norm(x)
                    sc.append(np.linalg.norm(scattering.scatter(xw, order) - sx) / nx)
                    px.append(np.linalg.norm(xw - x) / nx)
            rows.append(_stab_row("warp", float(np.median(amps)), t * grad_budget, order, sc, px))
    return rows


def _stab_row(kind, amount, grad, order, sc, px):
    sc, px = np.asarray(sc), np.asarray(px)
    ratio = np.divide(sc, px, out=np.zeros_like(sc), where=px > 0)
    return dict(transform=kind, amount=amount, max_grad=grad, order=order,
                scatter_dist=float(np.median(sc)), pixel_dist=float(np.median(px)),
                ratio=float(np.median(ratio)))


def cmd_stability(cfg, log=print):
    images, source = stability_images(cfg)
    rows = stability_table(images, cfg.shift_list(), cfg.warp_level_list(), cfg.warp_seeds)
    _prepare_out(cfg, "stability_config.txt")
    cols = ("transform", "amount", "max_grad", "order", "scatter_dist", "pixel_dist", "ratio")
    lines = ["\t".join(cols)] + ["\t".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c])
                                           for c in cols) for r in rows]
    text = "\n".join(lines) + "\n"
    with open(os.path.join(cfg.out, "stability.tsv"), "w") as fh:
        fh.write(f"# images: {len(images)} ({source})\n" + text)
    log(text)
    return rows


def gradcheck_suite(seed=0, inject=False, hw=8):
    """Results for every layer kind and every built variant at 2 x ``hw`` x ``hw``."""
    results = []
    zoo = gradcheck.layer_zoo(seed)
    for i, (name, layer, x) in enumerate(zoo):
        if inject and i == 0:
            with gradcheck.inject_fault(layer):
                results += gradcheck.check_layer(layer, x, name, seed)
        else:
            results += gradcheck.check_layer(layer, x, name, seed)
    x = np.random.default_rng([seed, 1]).standard_normal((2, 3, hw, hw))
    for g in variant_graphs(hw):
        net = models.Network(g, seed, np.float64)
        results += gradcheck.check_network(net, x, g.name, seed, n_coords=4)
    return results


def variant_graphs(hw=8, width=4):
    ref = models.build_reference_vgg("cifar10", width, input_hw=(hw, hw))
    out = [ref, models.apply_inv_swaps(ref, "B"), models.apply_inv_swaps(ref, "BD")]
    out += [models.build_scatnet(v, width, input_hw=(hw, hw)) for v in "ABCD"]
    out.append(models.build_scatter_linear("textures", (hw, hw)))
    return out


def cmd_gradcheck(cfg, log=print):
    results = gradcheck_suite(cfg.seed, bool(cfg.inject_fault))
    _prepare_out(cfg, "gradcheck_config.txt")
    text = "\n".join(r.line() for r in results) + "\n"
    ok = all(r.passed for r in results)
    text += f"{'ALL PASS' if ok else 'FAILURES'}: {sum(r.passed for r in results)}/{len(results)}\n"
    with open(os.path.join(cfg.out, "gradcheck.txt"), "w") as fh:
        fh.write(text)
    log(text)
    return ok


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "extract": cmd_extract,
            "gradcheck": cmd_gradcheck, "audit": cmd_audit, "stability": cmd_stability}


def run(command, cfg, log=print):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    return COMMANDS[command](cfg, log)


def log_stderr(msg):
    print(msg, file=sys.stderr)
