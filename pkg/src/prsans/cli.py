"""Command-line entry point: ``prsans <subcommand> --config <path> [--seed N] [--out DIR]``.

Every subcommand reads a JSON config (validated, unknown keys rejected),
writes its artifacts plus ``resolved_config.json`` and ``manifest.json``
into the output directory, and exits with one of:

    0  success
    2  a referenced input file does not exist
    3  invalid config, bad input data or an unmet precondition
    4  solver divergence
    5  theory certification failure
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .core import (ContractViolation, DetectorImage, ImageFormatError, compute_metrics, metrics_csv,
                   denormalize, normalize, read_image, substream, write_image)
from .experiments import SansBenchmarkConfig, run_adaptation_sweep, run_restoration_benchmark
from .learned import (LearnedPrior, PairDataset, TrainConfig, adapt, extract_patches,
                      load_checkpoint, load_image_dir, pretrain, save_checkpoint, texture_images)
from .priors import EpsilonSchedule, GaussianBlurPrior, GmmPrior, TVPrior, apply_prior
from .sansdata import (FormFactorModel, ScatteringGeometry, acquisition_pairs, azimuthal_average,
                       sans_corpus, simulate_acquisition, synth_clean_pattern)
from .solver import SolveConfig, SolverDivergenceError, pr_sans_solve
from .theory import CertifyConfig, TheoryProblem, certify_theorem1

log = logging.getLogger("prsans")

EXIT_OK, EXIT_MISSING, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CERT = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# Schemas
# --------------------------------------------------------------------------


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


POS = {"type": "number", "exclusiveMinimum": 0}
NONNEG = {"type": "number", "minimum": 0}
SEED = {"type": "integer", "minimum": 0, "default": 0}
PATH = {"type": "string", "minLength": 1}

GEOMETRY = _obj({
    "wavelength": {**POS, "default": 6.0},
    "sample_detector_distance": {**POS, "default": 15.5},
    "pixel_pitch": {**POS, "default": 5.5e-3},
    "width": {"type": "integer", "minimum": 1, "default": 256},
    "height": {"type": "integer", "minimum": 1, "default": 256},
    "beam_center": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2,
                    "maxItems": 2, "default": None},
})

MODEL = _obj({
    "kind": {"enum": ["sphere", "guinier_porod", "flat"], "default": "sphere"},
    "radius": {**POS, "default": 50.0},
    "rg": {**POS, "default": 30.0},
    "porod_exponent": {**POS, "default": 4.0},
    "scale": {**POS, "default": 1.0},
    "background": {**NONNEG, "default": 0.0},
})

TRAIN = _obj({
    "epochs": {"type": "integer", "minimum": 0, "default": 30},
    "lr": {**POS, "default": 0.3},
    "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1, "default": 0.9},
    "batch": {"type": "integer", "minimum": 1, "default": 8},
    "seed": SEED,
    "patch": {"type": "integer", "minimum": 1, "default": 40},
    "sigma": {**POS, "default": 5.0 / 255.0},
    "depth": {"type": "integer", "minimum": 1, "default": 5},
    "channels": {"type": "integer", "minimum": 1, "default": 16},
    "kernel": {"type": "integer", "minimum": 1, "default": 3},
    "val_fraction": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.1},
    "clip": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": 0.1},
})

SOLVER = _obj({
    "gamma": {**POS, "default": 0.7},
    "tau": {**POS, "default": 1.0},
    "max_iter": {"type": "integer", "minimum": 1, "default": 20},
    "fp_tol": {**NONNEG, "default": 0.0},
    "trace_level": {"enum": ["final", "norms", "full"], "default": "norms"},
})

SCHEMAS = {
    "synth": _obj({
        "seed": SEED,
        "geometry": {**GEOMETRY, "default": {}},
        "model": {**MODEL, "default": {}},
        "time_factors": {"type": "array", "items": POS, "minItems": 1, "default": [1.0, 12.0]},
        "flux_scale": {**POS, "default": 1000.0},
        "noise": {"enum": ["poisson", "awgn"], "default": "poisson"},
        "awgn_sigma": {**NONNEG, "default": 0.0},
        "normalize_peak": {"type": "boolean", "default": True},
    }),
    "reduce": _obj({
        "image": PATH,
        "geometry": {**GEOMETRY, "default": {}},
        "n_bins": {"type": "integer", "minimum": 2, "default": 100},
        "binning": {"enum": ["linear", "log"], "default": "log"},
        "q_range": {"type": ["array", "null"], "items": POS, "minItems": 2, "maxItems": 2,
                    "default": None},
    }, required=["image"]),
    "pretrain": _obj({
        "seed": SEED,
        "train": {**TRAIN, "default": {}},
        "n_images": {"type": "integer", "minimum": 1, "default": 60},
        "image_size": {"type": "integer", "minimum": 8, "default": 64},
        "patches_per_image": {"type": "integer", "minimum": 1, "default": 8},
        "image_dir": {"type": ["string", "null"], "default": None},
    }),
    "adapt": _obj({
        "seed": SEED,
        "checkpoint": PATH,
        "train": {**TRAIN, "default": {}},
        "n_pairs": {"type": "integer", "minimum": 0, "default": 80},
        "size": {"type": "integer", "minimum": 8, "default": 64},
        "flux_scale": {**POS, "default": 160.0},
        "ratio": {**POS, "default": 12.0},
    }, required=["checkpoint"]),
    "restore": _obj({
        "seed": SEED,
        "input": PATH,
        "reference": {"type": ["string", "null"], "default": None},
        "method": {"enum": ["pr_sans", "prior"], "default": "pr_sans"},
        "normalize": {"type": "boolean", "default": True},
        "prior": _obj({
            "kind": {"enum": ["tv", "learned", "gaussian_blur"]},
            "strength": NONNEG,
            "tol": POS,
            "max_iter": {"type": "integer", "minimum": 1},
            "checkpoint": PATH,
            "width": NONNEG,
        }, required=["kind"]),
        "solver": {**SOLVER, "default": {}},
    }, required=["input", "prior"]),
    "eval": _obj({
        "reference": PATH,
        "estimates": {"type": "array", "items": PATH, "minItems": 1},
        "labels": {"type": ["array", "null"], "items": {"type": "string"}, "default": None},
        "geometry": {"anyOf": [GEOMETRY, {"type": "null"}], "default": None},
        "n_bins": {"type": "integer", "minimum": 2, "default": 100},
        "binning": {"enum": ["linear", "log"], "default": "log"},
    }, required=["reference", "estimates"]),
    "verify-theory": _obj({
        "seed": SEED,
        "pairs": {"type": "array", "minItems": 1, "items": _obj({
            "problem": _obj({
                "seed": SEED,
                "dim": {"type": "integer", "minimum": 1, "default": 2},
                "n_components": {"type": "integer", "minimum": 1, "default": 3},
                "sigma": {**POS, "default": 1.0},
                "tau": {**POS, "default": 1.0},
                "gmm": _obj({
                    "weights": {"type": "array", "items": POS, "minItems": 1},
                    "means": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                    "variances": {"type": "array", "items": POS},
                }, required=["weights", "means", "variances"]),
                "y": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            }),
            "schedule": {"type": "string", "pattern": "^(zero|const:.*|pow:.*|list:.*)$"},
        }, required=["problem", "schedule"])},
        "certify": {**_obj({
            "gamma": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
            "max_iter": {"type": "integer", "minimum": 1, "default": 500},
            "slack": {**NONNEG, "default": 1e-7},
            "abs_floor": {**NONNEG, "default": 1e-12},
            "asymptote_tol": {**POS, "default": 1e-8},
            "lipschitz_samples": {"type": "integer", "minimum": 2, "default": 4000},
            "M": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
            "b2_scale": {**POS, "default": 1.0},
        }), "default": {}},
    }, required=["pairs"]),
    "sweep-adaptation": _obj({
        "seed": SEED,
        "size": {"type": "integer", "minimum": 8, "default": 64},
        "flux_scale": {**POS, "default": 160.0},
        "ratio": {**POS, "default": 12.0},
        "sigma": {**POS, "default": 5.0 / 255.0},
        "n_source_images": {"type": "integer", "minimum": 1, "default": 60},
        "source_image_size": {"type": "integer", "minimum": 8, "default": 64},
        "patches_per_image": {"type": "integer", "minimum": 1, "default": 8},
        "pretrain": {**TRAIN, "default": {"epochs": 20}},
        "adapt": {**TRAIN, "default": {"epochs": 30}},
        "k_values": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1,
                     "default": [0, 20, 40, 60, 80]},
        "n_val": {"type": "integer", "minimum": 1, "default": 10},
        "n_tune": {"type": "integer", "minimum": 1, "default": 10},
        "n_test": {"type": "integer", "minimum": 1, "default": 10},
        "gamma": {**POS, "default": 0.7},
        "max_iter": {"type": "integer", "minimum": 1, "default": 20},
        "tau_grid": {"type": "array", "items": POS, "minItems": 1,
                     "default": [1.0, 1.5, 2.0, 2.5, 3.0, 3.25, 3.5]},
        "tv_grid": {"type": "array", "items": POS, "minItems": 1,
                    "default": [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08]},
        "iq_bins": {"type": "integer", "minimum": 2, "default": 30},
        "benchmark": {"type": "boolean", "default": True},
    }),
}

def fill_defaults(schema: dict, doc):
    """Return a copy of ``doc`` with schema defaults filled in at every object level."""
    if schema.get("type") != "object" or not isinstance(doc, dict):
        return doc
    out = copy.deepcopy(doc)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if key in out:
            if sub.get("type") == "object":
                out[key] = fill_defaults(sub, out[key])
            elif sub.get("type") == "array" and isinstance(sub.get("items"), dict):
                out[key] = [fill_defaults(sub["items"], v) for v in out[key]]
            elif "anyOf" in sub and isinstance(out[key], dict):
                out[key] = fill_defaults(sub["anyOf"][0], out[key])
    return out


def validate(command: str, doc) -> dict:
    schema = SCHEMAS[command]
    errors = sorted(Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        if e.validator == "additionalProperties":
            raise CliError(EXIT_CONFIG, f"config error at {where}: {e.message}")
        raise CliError(EXIT_CONFIG, f"config error in field '{where}': {e.message}")
    resolved = fill_defaults(schema, doc)
    # the resolved document must satisfy the same schema it came from
    Draft202012Validator(schema).validate(resolved)
    return resolved


def bundled_config(command: str) -> dict:
    ref = resources.files("prsans") / "configs" / f"{command}.json"
    if not ref.is_file():
        raise CliError(EXIT_CONFIG, f"'{command}' has no bundled default; pass --config")
    return json.loads(ref.read_text())


# --------------------------------------------------------------------------
# Run context
# --------------------------------------------------------------------------


class Run:
    def __init__(self, command: str, config: dict, out: Path, base: Path):
        self.command = command
        self.config = config
        self.out = out
        self.base = base
        self.outputs: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, rel) -> Path:
        p = Path(rel)
        if not p.is_absolute():
            p = self.base / p
        if not p.exists():
            raise CliError(EXIT_MISSING, f"file not found: {p}")
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        self.outputs.append(p)
        return p

    def write_image(self, name: str, image: DetectorImage) -> Path:
        p = self.out / name
        write_image(p, image)
        self.outputs.append(p)
        return p

    def write_checkpoint(self, name: str, params) -> Path:
        p = self.out / name
        save_checkpoint(p, params)
        self.outputs.append(p)
        return p

    def finish(self) -> None:
        self.write_text("resolved_config.json", json.dumps(self.config, indent=2, sort_keys=True) + "\n")
        entries = []
        for p in self.outputs:
            raw = p.read_bytes()
            entries.append({"path": p.name, "bytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
        manifest = {"command": self.command, "outputs": entries}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _geometry(d: dict) -> ScatteringGeometry:
    return ScatteringGeometry.from_dict(d)


def _train_config(d: dict, seed: int) -> TrainConfig:
    return TrainConfig(**{**d, "seed": seed})


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_synth(run: Run) -> int:
    c = run.config
    geom = _geometry(c["geometry"])
    model = FormFactorModel.from_dict(c["model"])
    clean = synth_clean_pattern(model, geom)
    if c["normalize_peak"]:
        clean = clean.with_data(clean.data / clean.data.max())
    run.write_image("clean.prsim", clean)
    for i, tf in enumerate(c["time_factors"]):
        seed = int(substream(c["seed"], f"acquisition-{i}").integers(0, 2**31 - 1))
        acq = simulate_acquisition(clean, tf, c["flux_scale"], seed=seed,
                                   mode=c["noise"], awgn_sigma=c["awgn_sigma"])
        run.write_image(f"acquisition_{i}.prsim", acq)
    run.write_text("geometry.json", geom.to_json() + "\n")
    run.write_text("model.json", json.dumps(asdict(model), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_reduce(run: Run) -> int:
    c = run.config
    image = read_image(run.path(c["image"]))
    geom = _geometry({**c["geometry"], "width": image.width, "height": image.height,
                      "beam_center": c["geometry"]["beam_center"] or list(image.beam_center)})
    curve = azimuthal_average(image, geom, c["n_bins"], c["binning"],
                              tuple(c["q_range"]) if c["q_range"] else None)
    run.write_text("iq.csv", curve.to_csv())
    return EXIT_OK


def cmd_pretrain(run: Run) -> int:
    c = run.config
    tcfg = _train_config(c["train"], c["seed"])
    images = texture_images(c["n_images"], c["image_size"], c["seed"])
    if c["image_dir"]:
        images += load_image_dir(run.path(c["image_dir"]), c["image_size"])
    patches = extract_patches(images, min(tcfg.patch, c["image_size"]), c["patches_per_image"], c["seed"])
    data = PairDataset.synthesize(patches, tcfg.sigma, "source", c["seed"])
    params, curve = pretrain(data, tcfg)
    run.write_checkpoint("pretrained.ckpt", params)
    run.write_text("training_curve.csv", curve.to_csv())
    return EXIT_OK


def cmd_adapt(run: Run) -> int:
    c = run.config
    source = load_checkpoint(run.path(c["checkpoint"]))
    tcfg = _train_config(c["train"], c["seed"])
    clean = sans_corpus(c["n_pairs"], c["size"], c["seed"])
    highs = [hi.data for _, hi in acquisition_pairs(clean, c["flux_scale"], c["ratio"], c["seed"] + 1)]
    highs = np.array(highs).reshape(-1, c["size"], c["size"])
    target = PairDataset.synthesize(highs, tcfg.sigma, "target", c["seed"] + 2)
    params, curve = adapt(source, target, tcfg)
    run.write_checkpoint("adapted.ckpt", params)
    run.write_text("training_curve.csv", curve.to_csv())
    return EXIT_OK


def _prior(run: Run, spec: dict):
    kind = spec["kind"]
    need = {"tv": "strength", "learned": "checkpoint", "gaussian_blur": "width"}[kind]
    if need not in spec:
        raise CliError(EXIT_CONFIG, f"config error in field 'prior.{need}': required for kind '{kind}'")
    if kind == "tv":
        return TVPrior(spec["strength"], spec.get("tol", 1e-6), spec.get("max_iter", 500))
    if kind == "gaussian_blur":
        return GaussianBlurPrior(spec["width"])
    return LearnedPrior(load_checkpoint(run.path(spec["checkpoint"])))


def cmd_restore(run: Run) -> int:
    c = run.config
    prior = _prior(run, c["prior"])
    noisy = read_image(run.path(c["input"]))
    reference = read_image(run.path(c["reference"])) if c["reference"] else None
    scfg = SolveConfig(**c["solver"])
    work = normalize(noisy) if c["normalize"] else noisy
    if c["method"] == "prior":
        x, trace = apply_prior(prior, work.data), None
    else:
        x, trace = pr_sans_solve(work.data, prior, scfg)
    restored = work.with_data(x)
    if c["normalize"]:
        restored = denormalize(restored)
    run.write_image("restored.prsim", restored)
    if trace is not None:
        run.write_text("trace.csv", trace.to_csv())
    if reference is not None:
        recs = [compute_metrics(reference, noisy.with_data(noisy.data)),
                compute_metrics(reference, restored)]
        run.write_text("metrics.csv", metrics_csv(recs, ["noisy", "restored"]))
    return EXIT_OK


def cmd_eval(run: Run) -> int:
    c = run.config
    ref = read_image(run.path(c["reference"]))
    ests = [read_image(run.path(p)) for p in c["estimates"]]
    labels = c["labels"] or [Path(p).stem for p in c["estimates"]]
    if len(labels) != len(ests):
        raise CliError(EXIT_CONFIG, "config error in field 'labels': one label per estimate required")
    run.write_text("metrics.csv", metrics_csv([compute_metrics(ref, e) for e in ests], labels))
    if c["geometry"] is not None:
        g = c["geometry"]
        geom = _geometry({**g, "width": ref.width, "height": ref.height,
                          "beam_center": g["beam_center"] or list(ref.beam_center)})
        ref_iq = azimuthal_average(ref, geom, c["n_bins"], c["binning"])
        recs = []
        for e in ests:
            iq = azimuthal_average(e, geom, c["n_bins"], c["binning"])
            ok = ref_iq.valid & iq.valid
            recs.append(compute_metrics(ref_iq.intensity[ok], iq.intensity[ok]))
        run.write_text("iq_metrics.csv", metrics_csv(recs, labels))
    return EXIT_OK


def _theory_problem(p: dict) -> TheoryProblem:
    """Seeded random mixture problem, or an explicit one when ``gmm`` is given."""
    if "gmm" not in p:
        problem = TheoryProblem.random(p["seed"], p["dim"], p["n_components"], p["sigma"], p["tau"])
        return problem if "y" not in p else TheoryProblem(problem.gmm, p["sigma"], p["tau"], p["y"])
    g = p["gmm"]
    gmm = GmmPrior(np.asarray(g["weights"], dtype=float), np.asarray(g["means"], dtype=float),
                   np.asarray(g["variances"], dtype=float))
    y = p.get("y", np.zeros(gmm.dim))
    return TheoryProblem(gmm, p["sigma"], p["tau"], y)


def cmd_verify_theory(run: Run) -> int:
    c = run.config
    cc = c["certify"]
    ccfg = CertifyConfig(gamma=cc["gamma"], max_iter=cc["max_iter"], slack=cc["slack"],
                         abs_floor=cc["abs_floor"], asymptote_tol=cc["asymptote_tol"],
                         lipschitz_samples=cc["lipschitz_samples"], seed=c["seed"], M=cc["M"],
                         b2_scale=cc["b2_scale"])
    rows = ["pair,schedule,passed,first_violation,M,gamma,B1,B2,min_grad_sq"]
    failures = []
    for i, pair in enumerate(c["pairs"]):
        p = pair["problem"]
        try:
            schedule = EpsilonSchedule.parse(pair["schedule"])
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"config error in field 'pairs.{i}.schedule': {exc}")
        problem = _theory_problem(p)
        report = certify_theorem1(problem, schedule, ccfg)
        run.write_text(f"report_{i:03d}.json", report.to_json() + "\n")
        run.write_text(f"report_{i:03d}.csv", report.to_csv())
        k = report.constants
        fv = "" if report.first_violation is None else str(report.first_violation)
        rows.append(f"{i},{report.schedule},{int(report.passed)},{fv},{k.M:.10g},{k.gamma:.10g},"
                    f"{k.B1:.10g},{k.B2 * ccfg.b2_scale:.10g},{report.min_grad_sq[-1]:.6g}")
        if not report.passed:
            failures.append((i, report.first_violation))
    run.write_text("summary.csv", "\n".join(rows) + "\n")
    if failures:
        i, step = failures[0]
        raise CliError(EXIT_CERT, f"certification failed for pair {i} at step {step}")
    return EXIT_OK


def cmd_sweep_adaptation(run: Run) -> int:
    c = dict(run.config)
    do_bench = c.pop("benchmark")
    cfg = SansBenchmarkConfig.from_dict(c)
    sweep = run_adaptation_sweep(cfg)
    run.write_text("adaptation.csv", sweep.to_csv())
    for k, params in sweep.models.items():
        run.write_checkpoint(f"model_{k}.ckpt", params)
    if do_bench:
        best = sweep.models[max(cfg.k_values)]
        bench = run_restoration_benchmark(cfg, best)
        run.write_text("restoration.csv", bench.to_csv())
        run.write_text("restoration_summary.json", json.dumps(bench.summary(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "reduce": cmd_reduce,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "restore": cmd_restore,
    "eval": cmd_eval,
    "verify-theory": cmd_verify_theory,
    "sweep-adaptation": cmd_sweep_adaptation,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"prsans: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prsans", description="PnP restoration of SANS detector images")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config (bundled default if omitted)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
    return parser


def run_command(command: str, config_path=None, seed=None, out=None) -> int:
    if config_path is None:
        doc, base = bundled_config(command), Path.cwd()
    else:
        config_path = Path(config_path)
        if not config_path.exists():
            raise CliError(EXIT_MISSING, f"file not found: {config_path}")
        try:
            doc = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config is not valid JSON: {exc}")
        base = config_path.resolve().parent
    if seed is not None:
        if not isinstance(doc, dict) or "seed" not in SCHEMAS[command]["properties"]:
            raise CliError(EXIT_CONFIG, f"'{command}' takes no seed")
        doc = {**doc, "seed": seed}
    config = validate(command, doc)
    run = Run(command, config, Path(out) if out else Path(f"prsans-{command}"), base)
    try:
        return COMMANDS[command](run)
    finally:
        run.finish()


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args.command, args.config, args.seed, args.out)
    except CliError as exc:
        print(f"prsans: {exc}", file=sys.stderr)
        return exc.code
    except SolverDivergenceError as exc:
        print(f"prsans: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"prsans: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (ContractViolation, ImageFormatError, ValueError, TypeError, KeyError) as exc:
        print(f"prsans: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # keep the exit-code set closed
        log.exception("unexpected failure")
        print(f"prsans: unexpected failure: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
