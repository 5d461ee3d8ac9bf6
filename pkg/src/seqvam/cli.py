"""Batch command-line front door.

Subcommands: simulate, fit, weights, compare, summarize.  Every subcommand
reads an optional JSON config file plus flag overrides, validates it before
any compute, writes a resolved-config copy beside its outputs, and is
deterministic given (config, seed).

Exit codes: 0 success, 2 validation/configuration error, 3 convergence
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

from . import compare as cmp
from .archive import ChainArchive, PosteriorSummary
from .diagnostics import DiagnosticsError, convergence_report, dic
from .gls import VarianceProfile, average_weights_by_count, weight_report
from .linkage import build_design, classroom_rosters
from .model import ModelError, ModelSpec, PriorSpec
from .panel import PanelError, group_patterns, load_panel, save_panel
from .sampler import run_chains
from .simgen import (GeneratorConfig, MissingnessMechanism, apply_missingness,
                     save_truth, simulate_panel)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _require_file(path):
    if not os.path.isfile(path):
        raise CliError(f"input file not found: {path}", EXIT_IO)
    return path


def _write_resolved_config(out_dir, cfg):
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)


def _merge_config(args, parser_defaults):
    """Layer config-file values under explicit flags; reject unknown keys."""
    cfg = dict(parser_defaults)
    if getattr(args, "config", None):
        path = _require_file(args.config)
        with open(path) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"config file is not valid JSON: {exc}")
        unknown = set(file_cfg) - set(parser_defaults)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in parser_defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _floats(text):
    return tuple(float(x) for x in str(text).split(","))


# ---------------------------------------------------------------------------
# simulate


_SIM_DEFAULTS = {
    "out": None, "students": 2000, "teachers_per_year": 20, "seed": 0,
    "assignment": "random", "mixing": 0.5,
    "mechanism": "none", "rate": 0.1, "mech_a": "0,0,0,0", "mech_beta": "0",
    "mech_intercept": 1.0, "mech_coef": 0.0, "keep_links": False,
}


def cmd_simulate(cfg):
    if not cfg["out"]:
        raise CliError("simulate requires --out")
    gen = GeneratorConfig(
        students=int(cfg["students"]), teachers_per_year=int(cfg["teachers_per_year"]),
        seed=int(cfg["seed"]), assignment=cfg["assignment"], mixing=float(cfg["mixing"]))
    beta = _floats(cfg["mech_beta"])
    mech = MissingnessMechanism(
        kind=cfg["mechanism"], rate=float(cfg["rate"]), a=_floats(cfg["mech_a"]),
        beta=beta[0] if len(beta) == 1 else beta,
        intercept=float(cfg["mech_intercept"]), coef=float(cfg["mech_coef"]),
        co_delete_links=not cfg["keep_links"])
    panel, truth = simulate_panel(gen)
    if mech.kind != "none":
        panel = apply_missingness(panel, truth, mech, seed=int(cfg["seed"]) + 1)
    os.makedirs(cfg["out"], exist_ok=True)
    save_panel(panel, os.path.join(cfg["out"], "panel.csv"))
    save_truth(truth, os.path.join(cfg["out"], "truth.csv"))
    _write_resolved_config(cfg["out"], cfg)
    print(f"wrote panel with {panel.n_students} students, "
          f"{panel.n_observed_scores} observed scores to {cfg['out']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


_FIT_DEFAULTS = {
    "panel": None, "model": "MAR", "out": None, "chains": 3, "burn_in": 5000,
    "keep": 5000, "thin": 1, "seed": 0, "pattern_threshold": 25,
    "selection_parameterization": "hazard", "rhat_threshold": 1.05,
    "raw_scores": False, "store_student_draws": False,
}


def cmd_fit(cfg):
    if not cfg["panel"] or not cfg["out"]:
        raise CliError("fit requires --panel and --out")
    _require_file(cfg["panel"])
    spec = ModelSpec(
        model=cfg["model"], chains=int(cfg["chains"]), burn_in=int(cfg["burn_in"]),
        keep=int(cfg["keep"]), thin=int(cfg["thin"]),
        selection_parameterization=cfg["selection_parameterization"],
        pattern_threshold=int(cfg["pattern_threshold"]),
        store_student_draws=bool(cfg["store_student_draws"]))
    panel, report = load_panel(cfg["panel"], raw_scores=bool(cfg["raw_scores"]))
    design = build_design(panel)
    grouping = group_patterns(panel, spec.pattern_threshold) if spec.model == "PMIX" else None

    archive = run_chains(spec, panel, design, grouping, seed=int(cfg["seed"]))

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    archive.save(os.path.join(out, "archive"))
    archive.write_draws_csv(os.path.join(out, "draws.csv"))
    summary = archive.summary()
    summary.save(os.path.join(out, "summary"))
    with open(os.path.join(out, "ingest_report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out, "ingest_report.kv"), "w") as fh:
        fh.write(report.to_kv())
    result = dic(archive)
    with open(os.path.join(out, "dic.json"), "w") as fh:
        json.dump({"model": result.model, "dic": result.dic, "lbar": result.lbar,
                   "l_at_mean": result.l_at_mean, "comparable": result.comparable},
                  fh, indent=1)
    _write_resolved_config(out, cfg)

    if spec.chains < 2:
        with open(os.path.join(out, "convergence.csv"), "w") as fh:
            fh.write("note\nunavailable (needs >= 2 chains)\n")
        print("convergence report unavailable (needs >= 2 chains)")
        return EXIT_OK
    conv = convergence_report(archive, threshold=float(cfg["rhat_threshold"]))
    conv.to_csv(os.path.join(out, "convergence.csv"), index=False,
                float_format="%.6g")
    n_bad = int((~conv["converged"]).sum())
    worst = float(conv["rhat"].max())
    print(f"fit {spec.model}: {archive.n_retained} retained draws x "
          f"{archive.n_chains} chains; max Rhat {worst:.4f}")
    if n_bad:
        print(f"convergence failure: {n_bad} parameters at Rhat >= "
              f"{cfg['rhat_threshold']}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# weights


_WEIGHTS_DEFAULTS = {
    "profile": None, "summary": None, "panel": None, "out": None,
}


def _profile_from_json(path):
    with open(_require_file(path)) as fh:
        data = json.load(fh)
    nu2 = data["nu"] ** 2 if "nu" in data else data["nu2"]
    sigma2 = (tuple(s ** 2 for s in data["sigma"]) if "sigma" in data
              else tuple(data["sigma2"]))
    tau2 = (tuple(t ** 2 for t in data["tau"]) if "tau" in data
            else tuple(data.get("tau2", (1.0,) * 5)))
    return VarianceProfile(nu2=nu2, sigma2=sigma2, tau2=tau2)


def _profile_from_summary(directory):
    summary = PosteriorSummary.load(directory)
    if summary.model == "PMIX":
        raise CliError("weights need a MAR/SEL/SEL2 summary (single nu, sigma)")
    nu = summary.scalar("nu")
    sigma = [summary.scalar(f"sigma[{t}]") for t in range(1, 6)]
    tau = [summary.scalar(f"tau[{t}]") for t in range(1, 6)]
    return VarianceProfile(nu2=nu ** 2, sigma2=tuple(s ** 2 for s in sigma),
                           tau2=tuple(t ** 2 for t in tau))


def cmd_weights(cfg):
    if not cfg["out"]:
        raise CliError("weights requires --out")
    if bool(cfg["profile"]) == bool(cfg["summary"]):
        raise CliError("weights needs exactly one of --profile or --summary")
    try:
        profile = (_profile_from_json(cfg["profile"]) if cfg["profile"]
                   else _profile_from_summary(cfg["summary"]))
    except (PanelError, KeyError, ValueError) as exc:
        raise CliError(f"invalid variance profile: {exc}")
    os.makedirs(cfg["out"], exist_ok=True)
    avg = average_weights_by_count(profile.nu2, profile.sigma2)
    pd.DataFrame({"n_observed": np.arange(1, 6), "mean_weight": avg}).to_csv(
        os.path.join(cfg["out"], "average_weights.csv"), index=False,
        float_format="%.6f")
    if cfg["panel"]:
        panel, _ = load_panel(_require_file(cfg["panel"]))
        scores, classrooms = weight_report(panel, profile)
        scores.to_csv(os.path.join(cfg["out"], "score_weights.csv"), index=False,
                      float_format="%.6f")
        classrooms.to_csv(os.path.join(cfg["out"], "classroom_weights.csv"),
                          index=False, float_format="%.6f")
    _write_resolved_config(cfg["out"], cfg)
    print("average weights by n_observed: "
          + ", ".join(f"{v:.2f}" for v in avg))
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


_COMPARE_DEFAULTS = {
    "fit_a": None, "fit_b": None, "panel": None, "out": None,
}


def _load_fit_outputs(directory):
    summary = PosteriorSummary.load(os.path.join(directory, "summary"))
    dic_path = os.path.join(directory, "dic.json")
    dic_info = None
    if os.path.isfile(dic_path):
        with open(dic_path) as fh:
            dic_info = json.load(fh)
    return summary, dic_info


def cmd_compare(cfg):
    for key in ("fit_a", "fit_b", "panel", "out"):
        if not cfg[key]:
            raise CliError(f"compare requires --{key.replace('_', '-')}")
    _require_file(cfg["panel"])
    try:
        summary_a, dic_a = _load_fit_outputs(cfg["fit_a"])
        summary_b, dic_b = _load_fit_outputs(cfg["fit_b"])
    except FileNotFoundError as exc:
        raise CliError(f"fit outputs not found: {exc}", EXIT_IO)
    panel, _ = load_panel(cfg["panel"])
    rosters = classroom_rosters(panel)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)

    lines = [f"# Model comparison: {summary_a.model} vs {summary_b.model}", ""]
    corr = cmp.teacher_correlations(summary_a, summary_b)
    pd.DataFrame({"grade": np.arange(1, 6), "correlation": corr}).to_csv(
        os.path.join(out, "teacher_correlations.csv"), index=False,
        float_format="%.6f")
    lines.append("Per-grade correlations of posterior-mean teacher effects: "
                 + ", ".join("nan" if np.isnan(c) else f"{c:.4f}" for c in corr))

    scatter, slopes = cmp.completeness_gradient(summary_a, summary_b, rosters)
    scatter.to_csv(os.path.join(out, "completeness_gradient.csv"), index=False,
                   float_format="%.6f")
    slopes.to_csv(os.path.join(out, "completeness_slopes.csv"), index=False,
                  float_format="%.6f")
    pooled = slopes.loc[slopes["grade"] == 0, "slope"].iloc[0]
    lines.append(f"Pooled completeness-gradient slope ({summary_b.model} - "
                 f"{summary_a.model}): {pooled:.5f}")

    if "PMIX" not in (summary_a.model, summary_b.model):
        shift = cmp.student_effect_shift(summary_a, summary_b, panel)
        shift.to_csv(os.path.join(out, "student_effect_shift.csv"), index=False,
                     float_format="%.6f")
        lines.append("Median standardized student-effect shift by n_observed: "
                     + ", ".join(f"{v:.4f}" for v in shift["median"]))
        if dic_a and dic_b:
            lines.append(f"DIC: {summary_a.model} {dic_a['dic']:.1f} vs "
                         f"{summary_b.model} {dic_b['dic']:.1f} "
                         f"(difference {dic_a['dic'] - dic_b['dic']:+.1f})")
    else:
        lines.append("DIC: not comparable (pattern mixture fit changes the "
                     "student-effect structure)")
    with open(os.path.join(out, "report.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_resolved_config(out, cfg)
    print("\n".join(lines[2:]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# summarize


_SUMMARIZE_DEFAULTS = {"archive": None, "out": None, "rhat_threshold": 1.05}


def cmd_summarize(cfg):
    if not cfg["archive"] or not cfg["out"]:
        raise CliError("summarize requires --archive and --out")
    if not os.path.isdir(cfg["archive"]):
        raise CliError(f"archive directory not found: {cfg['archive']}", EXIT_IO)
    archive = ChainArchive.load(cfg["archive"])
    os.makedirs(cfg["out"], exist_ok=True)
    archive.summary().save(os.path.join(cfg["out"], "summary"))
    if archive.n_chains >= 2:
        conv = convergence_report(archive, threshold=float(cfg["rhat_threshold"]))
        conv.to_csv(os.path.join(cfg["out"], "convergence.csv"), index=False,
                    float_format="%.6g")
    _write_resolved_config(cfg["out"], cfg)
    print(f"summarized {archive.spec.model} archive "
          f"({archive.n_chains} chains x {archive.n_retained} draws)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its keys")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seqvam",
        description="Teacher value-added models for incomplete score panels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic panel with known truth")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--students", type=int)
    p.add_argument("--teachers-per-year", dest="teachers_per_year", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--assignment", choices=["random", "sorted"])
    p.add_argument("--mixing", type=float)
    p.add_argument("--mechanism", choices=["none", "mcar", "sel", "sel2", "score"])
    p.add_argument("--rate", type=float)
    p.add_argument("--mech-a", dest="mech_a")
    p.add_argument("--mech-beta", dest="mech_beta")
    p.add_argument("--mech-intercept", dest="mech_intercept", type=float)
    p.add_argument("--mech-coef", dest="mech_coef", type=float)
    p.add_argument("--keep-links", dest="keep_links", action="store_const", const=True)

    p = sub.add_parser("fit", help="fit one model by MCMC")
    _add_common(p)
    p.add_argument("--panel")
    p.add_argument("--model", choices=["MAR", "SEL", "SEL2", "PMIX"])
    p.add_argument("--out")
    p.add_argument("--chains", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--keep", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pattern-threshold", dest="pattern_threshold", type=int)
    p.add_argument("--selection-parameterization", dest="selection_parameterization",
                   choices=["hazard", "literal"])
    p.add_argument("--rhat-threshold", dest="rhat_threshold", type=float)
    p.add_argument("--raw-scores", dest="raw_scores", action="store_const", const=True)
    p.add_argument("--store-student-draws", dest="store_student_draws",
                   action="store_const", const=True)

    p = sub.add_parser("weights", help="closed-form leverage weights")
    _add_common(p)
    p.add_argument("--profile", help="JSON with nu/sigma (or nu2/sigma2)")
    p.add_argument("--summary", help="summary directory of a completed fit")
    p.add_argument("--panel")
    p.add_argument("--out")

    p = sub.add_parser("compare", help="cross-model comparison report")
    _add_common(p)
    p.add_argument("--fit-a", dest="fit_a")
    p.add_argument("--fit-b", dest="fit_b")
    p.add_argument("--panel")
    p.add_argument("--out")

    p = sub.add_parser("summarize", help="re-summarize a saved chain archive")
    _add_common(p)
    p.add_argument("--archive")
    p.add_argument("--out")
    p.add_argument("--rhat-threshold", dest="rhat_threshold", type=float)
    return parser


_DEFAULTS = {
    "simulate": _SIM_DEFAULTS,
    "fit": _FIT_DEFAULTS,
    "weights": _WEIGHTS_DEFAULTS,
    "compare": _COMPARE_DEFAULTS,
    "summarize": _SUMMARIZE_DEFAULTS,
}

_HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "weights": cmd_weights,
    "compare": cmd_compare,
    "summarize": cmd_summarize,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args, _DEFAULTS[args.command])
        return _HANDLERS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (PanelError, ModelError, DiagnosticsError, cmp.CompareError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
