"""Command-line front end: ``ace <command> --config run.yaml [path=value ...]``.

Commands share one working directory::

    gen-data   character_data.json, human_data.json
    pretrain   prior.ckpt, prior_history.json
    map-ee     mapping.json
    train      generator.ckpt, discriminator.ckpt, train_curves.json
    retarget   retargeted/<name>.json
    eval       metrics.json

Each run also writes ``manifests/<command>.json``. Exit codes: 0 success,
2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ace import __version__
from ace.autodiff.checkpoint import atomic_write
from ace.config import RunConfig, load_config
from ace.datagen import gen_character_dataset, gen_human_dataset, import_bvh, load_dataset, load_motion, save_dataset
from ace.datagen.io import save_motion
from ace.errors import NumericalError, ValidationError
from ace.kinematics.characters import get_rig
from ace.metrics import MetricsReport, diversity, evaluate, frechet_distance, GaussianStats, unrealistic_frame_ratio
from ace.prior import PriorModel, train_prior
from ace.retarget import (
    EEMapping,
    GeneratorModel,
    TrainingDiverged,
    auto_map_end_effectors,
    character_features,
    parse_mapping,
    retarget,
    train_ace,
)
from ace.retarget.networks import save_model

log = logging.getLogger("ace")

FILES = {
    "character": "character_data.json",
    "human": "human_data.json",
    "prior": "prior.ckpt",
    "prior_history": "prior_history.json",
    "mapping": "mapping.json",
    "generator": "generator.ckpt",
    "discriminator": "discriminator.ckpt",
    "curves": "train_curves.json",
    "metrics": "metrics.json",
}


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    seed: int = 0
    version: str = __version__
    wall_time: float = 0.0


class Run:
    """Paths, config and the manifest being filled for one command."""

    def __init__(self, command: str, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.workdir)
        self.manifest = RunManifest(command, cfg.to_dict(), seed=cfg.seed)
        self.t0 = time.perf_counter()

    def path(self, key: str) -> Path:
        return self.dir / FILES[key]

    def need(self, key_or_path) -> Path:
        p = self.path(key_or_path) if key_or_path in FILES else Path(key_or_path)
        if not p.exists():
            raise ValidationError(f"missing input {p}; run the earlier pipeline step first", field="inputs")
        self.manifest.inputs.append(str(p))
        return p

    def wrote(self, p: Path):
        self.manifest.outputs.append(str(p))

    def write_json(self, key_or_path, doc) -> Path:
        p = self.path(key_or_path) if key_or_path in FILES else Path(key_or_path)
        atomic_write(p, json.dumps(doc, indent=1, sort_keys=True))
        self.wrote(p)
        return p

    def finish(self):
        self.manifest.wall_time = time.perf_counter() - self.t0
        p = self.dir / "manifests" / f"{self.manifest.command}.json"
        atomic_write(p, json.dumps(asdict(self.manifest), indent=1, sort_keys=True))


def _mapping(run: Run) -> EEMapping:
    return EEMapping.from_dict(json.loads(run.need("mapping").read_text()))


# ------------------------------------------------------------------ commands


def cmd_gen_data(run: Run, args) -> None:
    cfg = run.cfg
    d = cfg.data
    cds = gen_character_dataset(
        get_rig(d.character), profile=d.profile(cfg.seed), n_frames=d.n_frames, dt=d.dt,
        segment_frames=d.segment_frames,
    )
    hds = gen_human_dataset(d.profile(cfg.seed), d.templates, d.human_clips, d.human_frames, d.dt)
    for key, ds in (("character", cds), ("human", hds)):
        save_dataset(run.path(key), ds)
        run.wrote(run.path(key))
    ufr = np.mean([unrealistic_frame_ratio(t)[0] for t in cds.trajectories])
    print(f"character {d.character}: {cds.n_frames} frames in {len(cds)} clips, mean UFR {100 * ufr:.3f}%")
    print(f"human: {hds.n_frames} frames in {len(hds)} clips ({', '.join(d.templates)})")


def cmd_pretrain(run: Run, args) -> None:
    cds = load_dataset(run.need("character"))
    model, hist = train_prior(cds, run.cfg.prior)
    model.save(run.path("prior"))
    run.wrote(run.path("prior"))
    run.write_json("prior_history", {"steps": hist.steps, "loss": hist.loss, "mse": hist.mse})
    print(f"prior: {len(hist.steps)} log points, final loss {hist.loss[-1]:.4g}, mse {hist.mse[-1]:.4g}")


def cmd_map_ee(run: Run, args) -> None:
    cds = load_dataset(run.need("character"))
    hds = load_dataset(run.need("human"))
    override = run.cfg.mapping.override
    auto = auto_map_end_effectors(hds, cds)
    m = auto if override is None else EEMapping(parse_mapping(override, cds.skeleton, hds.skeleton).pairs, "manual", auto.kl)
    run.write_json("mapping", m.to_dict())
    cnames = [cds.skeleton.joints[e.joint].name for e in cds.skeleton.end_effectors]
    hnames = [hds.skeleton.joints[e.joint].name for e in hds.skeleton.end_effectors]
    width = max(map(len, cnames + hnames)) + 2
    print("KL(character || human)".ljust(width) + "".join(n.rjust(width) for n in hnames))
    for name, row, j in zip(cnames, auto.kl, m.pairs):
        print(name.ljust(width) + "".join(f"{v:{width}.3g}" for v in row) + f"  -> {hnames[j]}")
    print(f"mapping source: {m.source}")


def cmd_train(run: Run, args) -> None:
    cds = load_dataset(run.need("character"))
    hds = load_dataset(run.need("human"))
    prior = PriorModel.load(run.need("prior"))
    mapping = _mapping(run)
    ckpt_dir = run.dir / "checkpoints" if run.cfg.train.checkpoint_every else None
    try:
        res = train_ace(hds, cds, prior, mapping, run.cfg.train, ckpt_dir)
    except TrainingDiverged as exc:
        # keep the last finite weights for inspection
        save_model(run.dir / "generator.last_finite.ckpt", exc.result.generator)
        raise
    meta = {"steps": run.cfg.train.steps, "seed": run.cfg.seed}
    for key, model in (("generator", res.generator), ("discriminator", res.discriminator)):
        save_model(run.path(key), model, meta)
        run.wrote(run.path(key))
    run.write_json("curves", res.history.to_dict())
    h = res.history
    print(f"trained {run.cfg.train.steps} steps: g_loss {h.g_loss[-1]:.4g} (adv {h.g_adv[-1]:.4g}, "
          f"fea {h.g_fea[-1]:.4g}), d_loss {h.d_loss[-1]:.4g}")


def _load_models(run: Run):
    prior = PriorModel.load(run.need("prior"))
    g = GeneratorModel.from_bytes(run.need("generator").read_bytes())
    return prior, g


def _load_human(path: Path):
    if path.suffix.lower() == ".bvh":
        return import_bvh(path.read_text(), name=path.stem)
    return load_motion(path)


def cmd_retarget(run: Run, args) -> None:
    if not args.motions:
        raise ValidationError("give at least one human motion file", field="motions")
    prior, g = _load_models(run)
    out_dir = Path(args.output) if args.output else run.dir / "retargeted"
    for src in args.motions:
        human = _load_human(run.need(src))
        traj, _ = retarget(g, prior, human)
        traj = type(traj)(traj.skeleton, traj.dt, traj.root_positions, traj.root_orientations, traj.joint_values,
                          {**traj.meta, "source": str(src)})
        out = out_dir / f"{Path(src).stem}.json"
        save_motion(out, traj)
        run.wrote(out)
        flag = " (truncated)" if traj.meta["truncated"] else ""
        print(f"{src} -> {out}: {len(traj)} frames{flag}")


def _self_report(run: Run) -> MetricsReport:
    """Score the character dataset against itself: a seeded random half of its
    frames against the other half. UFR covers every clip."""
    cds = load_dataset(run.need("character"))
    mapping = _mapping(run)
    feats = character_features(cds.skeleton, mapping)(cds.all_states())
    perm = np.random.default_rng(run.cfg.seed).permutation(len(feats))
    fa, fb = feats[perm[: len(feats) // 2]], feats[perm[len(feats) // 2 :]]
    ev = run.cfg.eval
    flags = []
    for t in cds.trajectories:
        flags += unrealistic_frame_ratio(t, thresholds=ev.thresholds())[1]
    return MetricsReport(
        div=diversity(fb, ev.sample_size, run.cfg.seed),
        fid=frechet_distance(GaussianStats.from_samples(fa), GaussianStats.from_samples(fb)),
        feature_loss=0.0,
        ufr=sum(f.any for f in flags) / max(1, len(flags)),
        per_frame_flags=flags,
        config={"mode": "split-halves", "sample_size": ev.sample_size, "seed": run.cfg.seed,
                "thresholds": ev.thresholds().to_dict()},
    )


def cmd_eval(run: Run, args) -> None:
    cfg = run.cfg
    if args.split_halves:
        report = _self_report(run)
    else:
        cds = load_dataset(run.need("character"))
        mapping = _mapping(run)
        if args.motions:
            pairs = []
            for p in args.motions:
                r = load_motion(run.need(p))
                src = r.meta.get("source")
                if src is None:
                    raise ValidationError(f"{p} has no source clip in its meta", field="meta.source")
                pairs.append((_load_human(run.need(src)), r))
        else:
            prior, g = _load_models(run)
            d = cfg.data
            test = gen_human_dataset(d.profile(cfg.seed + 1), d.templates, cfg.eval.test_clips, d.human_frames, d.dt)
            pairs = [(h, retarget(g, prior, h)[0]) for h in test.trajectories]
        report = evaluate(pairs, cds.all_states(), mapping, cfg.eval.sample_size, cfg.seed, cfg.eval.thresholds())
    out = Path(args.output) if args.output else run.path("metrics")
    run.write_json(out, report.to_dict())
    print(f"DIV {report.div:.4f}  FID {report.fid:.4f}  L_fea {report.feature_loss:.4f}  "
          f"UFR {100 * report.ufr:.3f}%  -> {out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "map-ee": cmd_map_ee,
    "train": cmd_train,
    "retarget": cmd_retarget,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ace", description="Cross-morphology motion retargeting pipeline.")
    p.add_argument("--version", action="version", version=f"ace {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config field by dotted path, e.g. train.steps=200")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("retarget", "eval"):
            sp.add_argument("motions", nargs="*", help="motion files (JSON or BVH)")
            sp.add_argument("-o", "--output", help="output directory (retarget) or report path (eval)")
        if name == "eval":
            sp.add_argument("--split-halves", action="store_true",
                            help="score two random halves of the character dataset against each other")
    return p


def _split_overrides(extra: list[str]) -> list[str]:
    """Turn ``--a.b=v`` and ``--a.b v`` leftovers into ``a.b=v``."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise ValidationError(f"unrecognized argument {tok!r}", field="argv")
        tok = tok[2:]
        if "=" not in tok:
            if i + 1 >= len(extra):
                raise ValidationError(f"missing value for --{tok}", field=tok)
            tok = f"{tok}={extra[i + 1]}"
            i += 1
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set + _split_overrides(extra))
        run = Run(args.command, cfg)
        COMMANDS[args.command](run, args)
        run.finish()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
