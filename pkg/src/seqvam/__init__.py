"""Teacher value-added models for incomplete longitudinal score panels.

Sequential multi-membership random effects models fit by Markov chain
Monte Carlo under a missing-at-random assumption, two nonignorable
selection variants, and a pattern mixture stratification, plus the
closed-form fixed-variance machinery for classroom effects and per-score
leverage weights.
"""

from .archive import ChainArchive, PosteriorSummary
from .compare import (completeness_gradient, pattern_means_table,
                      student_effect_shift, teacher_correlations)
from .diagnostics import (DicResult, compare_dic, convergence_report, dic,
                          gelman_rubin, split_gelman_rubin)
from .gls import (VarianceProfile, alpha_matrix, average_weights_by_count,
                  gls_teacher_effects, leverage_weights, weight_report)
from .linkage import Design, Roster, build_design, classroom_rosters
from .model import (ModelError, ModelSpec, ParameterState, PriorSpec,
                    selection_loglik)
from .panel import (ALL_PATTERNS, DEFAULT_STANDARDIZATION, N_YEARS,
                    IngestReport, PanelError, PatternGroup, PatternGrouping,
                    ResponsePattern, ScorePanel, StudentRecord, group_patterns,
                    load_panel, nobs_summary, panel_from_records, pattern_of,
                    save_panel, standardize)
from .sampler import (conditional_loglik, run_chain, run_chains,
                      sample_bounded_sd, score_loglik)
from .simgen import (GeneratorConfig, MissingnessMechanism, TruthRecord,
                     apply_missingness, hazard_count_probs, save_truth,
                     simulate_panel)

__version__ = "0.1.0"

__all__ = [
    "ALL_PATTERNS", "ChainArchive", "DEFAULT_STANDARDIZATION", "Design",
    "DicResult", "GeneratorConfig", "IngestReport", "MissingnessMechanism",
    "ModelError", "ModelSpec", "N_YEARS", "PanelError", "ParameterState",
    "PatternGroup", "PatternGrouping", "PosteriorSummary", "PriorSpec",
    "ResponsePattern", "Roster", "ScorePanel", "StudentRecord", "TruthRecord",
    "VarianceProfile", "alpha_matrix", "apply_missingness",
    "average_weights_by_count", "build_design", "classroom_rosters",
    "compare_dic", "completeness_gradient", "conditional_loglik",
    "convergence_report", "dic", "gelman_rubin", "gls_teacher_effects",
    "group_patterns", "hazard_count_probs", "leverage_weights", "load_panel",
    "nobs_summary", "panel_from_records", "pattern_means_table", "pattern_of",
    "run_chain", "run_chains", "sample_bounded_sd", "save_panel", "save_truth",
    "score_loglik", "selection_loglik", "simulate_panel",
    "split_gelman_rubin", "standardize", "student_effect_shift",
    "teacher_correlations", "weight_report",
]
