"""Command-line pipeline: synthesize, split, train, attack, augment, retrain, evaluate, simulate.

Every subcommand writes its artifacts into ``--out`` together with a
``manifest.json`` listing inputs, outputs, content hashes, the resolved
config and package versions. Outputs are write-once: a subcommand refuses to
run if any file it would create already exists.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure (non-finite loss, reported with its epoch).
"""
import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, advgan, data, evaluation, models
from . import drivesim as sim
from .config import ATTACK_GROUPS, load_config
from .errors import ConfigError, FormatError, NumericalError
from .tensor import derive_seed
from .tensor.kernels import BACKEND
from .training import fit_classifier, predict

log = logging.getLogger("advdrive")

MANIFEST = "manifest.json"
VOLATILE_KEYS = ("wall_time_s",)


# hashing and manifests --------------------------------------------------------

def _strip_volatile(doc):
    if isinstance(doc, dict):
        return {k: _strip_volatile(v) for k, v in doc.items() if k not in VOLATILE_KEYS}
    if isinstance(doc, list):
        return [_strip_volatile(v) for v in doc]
    return doc


def content_hash(path):
    """sha256 of a file; JSON files are hashed without their wall-clock fields."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        doc = _strip_volatile(json.loads(raw))
        raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(raw).hexdigest()


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def versions():
    return {"advdrive": __version__, "numpy": np.__version__,
            "python": platform.python_version(), "kernels": BACKEND}


class Stage:
    """Bookkeeping for one subcommand: input checks, write-once outputs, manifest."""

    def __init__(self, command, out, cfg, inputs=None):
        self.command = command
        self.out = Path(out)
        self.cfg = cfg
        self.inputs = {}
        for name, path in (inputs or {}).items():
            if path is None:
                continue
            if not Path(path).is_file():
                raise ConfigError(f"{command}: input {name} not found: {path}")
            self.inputs[name] = Path(path)
        self.outputs = {}
        self.info = {}
        self.t0 = time.perf_counter()

    def plan(self, *names):
        """Reserve output file names; fails before any work if one already exists."""
        for name in (*names, MANIFEST):
            p = self.out / name
            if p.exists():
                raise ConfigError(f"{self.command}: refusing to overwrite {p}")
        return [self.out / n for n in names]

    def record(self, path):
        self.outputs[Path(path).name] = Path(path)
        return path

    def elapsed(self):
        return round(time.perf_counter() - self.t0, 3)

    def finish(self):
        manifest = {
            "command": self.command,
            "seed": self.cfg["seed"],
            "config": self.cfg,
            "inputs": {k: {"path": str(p), "sha256": content_hash(p)}
                       for k, p in sorted(self.inputs.items())},
            "outputs": {k: {"path": str(p), "sha256": content_hash(p)}
                        for k, p in sorted(self.outputs.items())},
            "versions": versions(),
            **self.info,
            "wall_time_s": self.elapsed(),
        }
        write_json(self.out / MANIFEST, manifest)
        return manifest


def _open_stage(command, out, cfg, inputs, outputs):
    stage = Stage(command, out, cfg, inputs)
    paths = stage.plan(*outputs)
    stage.out.mkdir(parents=True, exist_ok=True)
    return stage, paths


def _metrics_doc(stage_name, net, x, y, class_count, epochs, seed, wall):
    cm = evaluation.confusion(predict(net, x), y, class_count)
    m = evaluation.metrics(cm)
    return cm, m, evaluation.metrics_json(m, stage=stage_name, epochs=epochs, seed=seed,
                                          wall_time_s=wall)


def _load_model(path):
    try:
        return models.load_network(path, models.build_classifier)
    except (KeyError, IndexError) as exc:
        raise FormatError(f"{path} is not a classifier checkpoint") from exc


def _budget(cfg):
    a = cfg["advgan"]
    return models.PerturbationBudget(epsilon=a["epsilon"], hinge_c=a["hinge_c"])


def _advgan_config(cfg, seed, epochs=None, groups=None):
    a = cfg["advgan"]
    return advgan.AdvGanConfig(
        batch_size=a["batch_size"], epochs=a["epochs"] if epochs is None else epochs,
        alpha=a["alpha"], beta=a["beta"], budget=_budget(cfg), kappa=a["kappa"],
        groups=groups, lr_g=a["lr_g"], lr_d=a["lr_d"], seed=seed)


def _weathers(cfg):
    return tuple(sim.Weather(kind, float(i)) for kind, i in cfg["sim"]["weathers"])


def _track(cfg):
    t = cfg["sim"]["track"]
    return sim.polar_track(radius=t["radius"], waist=t["waist"], half_width=t["half_width"],
                           sign_spacing=t["sign_spacing"])


# subcommands ------------------------------------------------------------------

def cmd_synth_data(cfg, args):
    stage, (path,) = _open_stage("synth-data", args.out, cfg, {}, ["dataset.asds"])
    d = cfg["data"]
    spec = data.SynthSpec(class_count=d["class_count"], per_class=d["per_class"], size=d["size"],
                          degrade=d["degrade"], seed=derive_seed(cfg["seed"], "synth"))
    spec.validate()
    data.save(data.synthesize(spec), stage.record(path))
    return stage.finish()


def cmd_split(cfg, args):
    src = args.data or cfg["data"]["path"]
    if src is None:
        raise ConfigError("split: no dataset given (--data or data.path)")
    stage, paths = _open_stage("split", args.out, cfg, {"data": src},
                               ["train.asds", "val.asds", "test.asds"])
    s = cfg["split"]
    spec = data.SplitSpec(s["train"], s["val"], s["test"], seed=derive_seed(cfg["seed"], "split"))
    spec.validate()
    for part, path in zip(data.split(data.load(src), spec), paths):
        data.save(part, stage.record(path))
    return stage.finish()


def cmd_train_classifier(cfg, args):
    stage, (ckpt, metrics) = _open_stage(
        "train-classifier", args.out, cfg, {"train": args.train, "val": args.val},
        ["classifier.asdm", "train_metrics.json"])
    c = cfg["classifier"]
    train = data.load(args.train)
    x, y = data.as_arrays(train)
    xv, yv = data.as_arrays(data.load(args.val)) if args.val else (x, y)
    seed = derive_seed(cfg["seed"], "classifier")
    net = models.build_classifier(train.class_count, seed=seed)
    fit_classifier(net, x, y, c["epochs"], c["batch_size"], c["lr"], seed=seed,
                   x_val=xv, y_val=yv)
    models.save_checkpoint(net, stage.record(ckpt))
    _, _, doc = _metrics_doc("train-classifier", net, xv, yv, train.class_count, c["epochs"],
                             cfg["seed"], stage.elapsed())
    write_json(stage.record(metrics), doc)
    stage.info["epochs"] = c["epochs"]
    return stage.finish()


def cmd_attack(cfg, args, epochs=None):
    stage, (g_path, d_path, report_path) = _open_stage(
        "attack", args.out, cfg, {"model": args.model, "train": args.train, "val": args.val},
        ["generator.asdm", "discriminator.asdm", "advgan_report.json"])
    target = _load_model(args.model)
    x, y = data.as_arrays(data.load(args.train))
    xv, yv = data.as_arrays(data.load(args.val)) if args.val else (None, None)
    groups = None
    if args.groups == "steer":
        if models.n_classes_of(target) != sim.N_ACTIONS:
            raise ConfigError(f"--groups steer needs a {sim.N_ACTIONS}-action driver, "
                              f"got {models.n_classes_of(target)} classes")
        groups = sim.STEER_GROUPS
    acfg = _advgan_config(cfg, derive_seed(cfg["seed"], "advgan"), epochs, groups)
    g, d, report = advgan.train_advgan(x, y, target, acfg, xv, yv)
    models.save_checkpoint(g, stage.record(g_path))
    models.save_checkpoint(d, stage.record(d_path))
    doc = {"stage": "attack", "epochs": acfg.epochs, "seed": cfg["seed"],
           "final_d_accuracy": report.d_accuracy[-1] if len(report) else None,
           "final_target_accuracy": report.target_accuracy[-1] if len(report) else None,
           "groups": args.groups or "class",
           "report": report.to_dict(), "wall_time_s": stage.elapsed()}
    write_json(stage.record(report_path), doc)
    stage.info["epochs"] = acfg.epochs
    return stage.finish()


def cmd_augment(cfg, args):
    out_name = args.name or "adversarial.asds"
    stage, (path,) = _open_stage("augment", args.out, cfg,
                                 {"generator": args.generator, "data": args.data}, [out_name])
    g = models.load_network(args.generator, models.build_generator)
    adv = advgan.generate_adversarial_dataset(g, data.load(args.data), _budget(cfg))
    data.save(adv, stage.record(path))
    return stage.finish()


def cmd_retrain(cfg, args, section="retrain", name="retrained.asdm", warm_start=False):
    stage, (ckpt, metrics) = _open_stage(
        "retrain", args.out, cfg,
        {"model": args.model, "train": args.train, "adversarial": args.adversarial,
         "val": args.val},
        [name, Path(name).stem + "_metrics.json"])
    r = cfg[section]
    clean = data.load(args.train)
    adv = data.load(args.adversarial)
    if args.model:
        init = _load_model(args.model)
    else:
        init = (lambda k, s: models.build_classifier(k, seed=s))
    xv, yv = data.as_arrays(data.load(args.val)) if args.val else data.as_arrays(clean)
    seed = derive_seed(cfg["seed"], section)
    net, _ = advgan.retrain_combined(init, clean, adv, r["epochs"], r["batch_size"], r["lr"],
                                     seed=seed, adv_fraction=r.get("adv_fraction", 1.0),
                                     x_val=xv, y_val=yv, warm_start=warm_start)
    models.save_checkpoint(net, stage.record(ckpt))
    _, _, doc = _metrics_doc("retrain", net, xv, yv, clean.class_count, r["epochs"],
                             cfg["seed"], stage.elapsed())
    write_json(stage.record(metrics), doc)
    stage.info["epochs"] = r["epochs"]
    return stage.finish()


def cmd_eval(cfg, args):
    name = args.name or "eval"
    stage, _ = _open_stage("eval", args.out, cfg, {"model": args.model, "data": args.data},
                           [f"{name}.csv", f"{name}_metrics.json", f"{name}.pgm"])
    net = _load_model(args.model)
    ds = data.load(args.data)
    if ds.class_count != models.n_classes_of(net):
        raise ConfigError(f"eval: model has {models.n_classes_of(net)} classes, "
                          f"dataset has {ds.class_count}")
    x, y = data.as_arrays(ds, net.input_shape[0])
    cm = evaluation.confusion(predict(net, x), y, ds.class_count)
    m = evaluation.metrics(cm)
    files = evaluation.export(cm, m, stage.out, stem=name, stage=name, epochs=_epochs_of(args.model),
                              seed=cfg["seed"], wall_time_s=stage.elapsed())
    for p in files.values():
        stage.record(p)
    stage.info["accuracy"] = m["accuracy"]
    return stage.finish()


def _epochs_of(model_path):
    manifest = Path(model_path).parent / MANIFEST
    if manifest.is_file():
        return json.loads(manifest.read_text()).get("epochs")
    return None


def cmd_sim_collect(cfg, args):
    stage, (path,) = _open_stage("sim-collect", args.out, cfg, {}, ["drive.asds"])
    s = cfg["sim"]
    ds = sim.collect(_track(cfg), _weathers(cfg), s["collect_steps"],
                     seed=derive_seed(cfg["seed"], "sim-collect"),
                     cfg=sim.CollectConfig(n_cars=s["collect_cars"]))
    data.save(ds, stage.record(path))
    return stage.finish()


def cmd_sim_train(cfg, args):
    s = cfg["sim"]
    if args.adversarial:
        if not args.model:
            raise ConfigError("sim-train: --adversarial needs --model (the baseline driver)")
        sub = {**cfg, "sim_retrain": {"epochs": s["retrain_epochs"],
                                      "batch_size": s["driver_batch_size"], "lr": 1e-3}}
        args.train = args.data
        args.val = None
        return cmd_retrain(sub, args, section="sim_retrain", name="driver_retrained.asdm",
                           warm_start=True)
    stage, (ckpt, metrics) = _open_stage("sim-train", args.out, cfg, {"data": args.data},
                                         ["driver.asdm", "driver_metrics.json"])
    ds = data.load(args.data)
    net, _ = sim.train_driver(ds, s["driver_epochs"], seed=derive_seed(cfg["seed"], "sim-train"),
                              batch_size=s["driver_batch_size"])
    models.save_checkpoint(net, stage.record(ckpt))
    x, y = data.as_arrays(ds)
    _, _, doc = _metrics_doc("sim-train", net, x, y, ds.class_count, s["driver_epochs"],
                             cfg["seed"], stage.elapsed())
    write_json(stage.record(metrics), doc)
    stage.info["epochs"] = s["driver_epochs"]
    return stage.finish()


def cmd_sim_benchmark(cfg, args):
    name = args.name or "benchmark"
    outputs = [f"{name}.json"] + ([f"{name}_trace.csv"] if args.trace else [])
    stage, paths = _open_stage("sim-benchmark", args.out, cfg,
                               {"driver": args.driver, "generator": args.generator}, outputs)
    s = cfg["sim"]
    driver = _load_model(args.driver)
    perturbation = None
    if args.generator:
        perturbation = (models.load_network(args.generator, models.build_generator), _budget(cfg))
    result = sim.run_benchmark(driver, _track(cfg), _weathers(cfg), s["bench_steps"],
                               perturbation=perturbation,
                               seed=derive_seed(cfg["seed"], "sim-benchmark"),
                               n_cars=s["bench_cars"], trace=args.trace)
    result.write_json(stage.record(paths[0]), stage=name, seed=cfg["seed"],
                      wall_time_s=stage.elapsed())
    if args.trace:
        result.write_trace(stage.record(paths[1]))
    stage.info["total_collisions"] = result.total_collisions
    return stage.finish()


def cmd_pipeline(cfg, args):
    """Every stage in order, each in its own subdirectory of ``--out``."""
    root = Path(args.out)
    if root.exists() and any(root.iterdir()):
        raise ConfigError(f"pipeline: output directory {root} is not empty")
    if cfg["data"]["path"] is not None and not Path(cfg["data"]["path"]).is_file():
        raise ConfigError(f"pipeline: dataset not found: {cfg['data']['path']}")
    ns = argparse.Namespace
    stages = []

    def run(fn, sub, **kw):
        extra = kw.pop("_extra", {})
        a = ns(out=str(root / sub), data=None, train=None, val=None, model=None, generator=None,
               adversarial=None, driver=None, name=None, groups=None, trace=False)
        for k, v in kw.items():
            setattr(a, k, str(v) if isinstance(v, Path) else v)
        log.info("pipeline: %s -> %s", fn.__name__[4:].replace("_", "-"), sub)
        stages.append({"stage": sub, **fn(cfg, a, **extra)["outputs"]})

    if cfg["data"]["path"] is None:
        run(cmd_synth_data, "data")
        source = root / "data" / "dataset.asds"
    else:
        source = Path(cfg["data"]["path"])
    run(cmd_split, "split", data=source)
    sp = root / "split"
    run(cmd_train_classifier, "baseline", train=sp / "train.asds", val=sp / "val.asds")
    baseline = root / "baseline" / "classifier.asdm"
    run(cmd_attack, "attack", model=baseline, train=sp / "train.asds", val=sp / "val.asds")
    gen = root / "attack" / "generator.asdm"
    run(cmd_augment, "adversarial", generator=gen, data=sp / "train.asds", name="train_adv.asds")
    run(cmd_augment, "adversarial_test", generator=gen, data=sp / "test.asds",
        name="test_adv.asds")
    run(cmd_retrain, "retrained", train=sp / "train.asds",
        adversarial=root / "adversarial" / "train_adv.asds", val=sp / "val.asds")
    retrained = root / "retrained" / "retrained.asdm"
    adv_test = root / "adversarial_test" / "test_adv.asds"
    for sub, model, ds in (("eval_baseline_clean", baseline, sp / "test.asds"),
                           ("eval_baseline_adversarial", baseline, adv_test),
                           ("eval_retrained_clean", retrained, sp / "test.asds"),
                           ("eval_retrained_adversarial", retrained, adv_test)):
        run(cmd_eval, sub, model=model, data=ds, name=sub[5:])

    run(cmd_sim_collect, "sim_collect")
    drive = root / "sim_collect" / "drive.asds"
    run(cmd_sim_train, "sim_driver", data=drive)
    driver = root / "sim_driver" / "driver.asdm"
    run(cmd_attack, "sim_attack", model=driver, train=drive, groups=cfg["sim"]["attack_groups"],
        _extra={"epochs": cfg["sim"]["advgan_epochs"]})
    sim_gen = root / "sim_attack" / "generator.asdm"
    run(cmd_augment, "sim_adversarial", generator=sim_gen, data=drive, name="drive_adv.asds")
    run(cmd_sim_train, "sim_retrained", data=drive, model=driver,
        adversarial=root / "sim_adversarial" / "drive_adv.asds")
    retrained_driver = root / "sim_retrained" / "driver_retrained.asdm"
    for sub, drv, g in (("bench_baseline", driver, None),
                        ("bench_baseline_perturbed", driver, sim_gen),
                        ("bench_retrained_perturbed", retrained_driver, sim_gen)):
        run(cmd_sim_benchmark, sub, driver=drv, generator=g, name=sub[6:])
    manifest = {"command": "pipeline", "seed": cfg["seed"], "config": cfg, "stages": stages,
                "versions": versions()}
    write_json(root / MANIFEST, manifest)
    return manifest


COMMANDS = {
    "synth-data": (cmd_synth_data, "synthesize the procedural sign dataset", ()),
    "split": (cmd_split, "seeded train/val/test split of a dataset", ("data",)),
    "train-classifier": (cmd_train_classifier, "train the baseline classifier", ("train", "val")),
    "attack": (cmd_attack, "train the AdvGAN generator against a classifier",
               ("model", "train", "val", "groups")),
    "augment": (cmd_augment, "emit the generator-perturbed copy of a dataset",
                ("generator", "data", "name")),
    "retrain": (cmd_retrain, "train a classifier on clean plus adversarial data",
                ("model", "train", "adversarial", "val")),
    "eval": (cmd_eval, "confusion matrix and metrics of a model on a dataset",
             ("model", "data", "name")),
    "sim-collect": (cmd_sim_collect, "record oracle driving observations", ()),
    "sim-train": (cmd_sim_train, "behavior-clone a driver (with --adversarial: retrain it)",
                  ("data", "model", "adversarial")),
    "sim-benchmark": (cmd_sim_benchmark, "closed-loop collision benchmark",
                      ("driver", "generator", "name", "trace")),
    "pipeline": (cmd_pipeline, "run every stage in order", ()),
}

ARG_HELP = {
    "data": "input dataset (ASDS)",
    "train": "training dataset (ASDS)",
    "val": "validation dataset (ASDS)",
    "model": "classifier or driver checkpoint (ASDM)",
    "generator": "generator checkpoint (ASDM)",
    "adversarial": "adversarial dataset (ASDS)",
    "driver": "driver checkpoint (ASDM)",
    "name": "output file stem",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(prog="advdrive", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"advdrive {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, extra) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        for arg in extra:
            if arg == "trace":
                p.add_argument("--trace", action="store_true", help="also write a per-step CSV")
            elif arg == "groups":
                p.add_argument("--groups", choices=ATTACK_GROUPS, default="class",
                               help="class: any misclassification counts; steer: the driver "
                                    "attack must change the steering decision")
            else:
                p.add_argument(f"--{arg}", help=ARG_HELP[arg])
        p.set_defaults(**{a: None for a in ("data", "train", "val", "model", "generator",
                                            "adversarial", "driver", "name", "groups")
                          if a not in extra})
        if "trace" not in extra:
            p.set_defaults(trace=False)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.set, args.seed)
        fn(cfg, args)
    except (ConfigError, FormatError) as exc:
        print(f"advdrive {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        where = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"advdrive {args.command}: numerical failure{where}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
