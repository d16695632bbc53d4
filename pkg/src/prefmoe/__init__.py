"""Mixture of a trainable classifier and human decision rules, trained to rely
on the rules as often as the data allows under an explicit performance bound."""

from .data import (Box, SplitSpec, SynthConfig, generate_synthetic, load_csv,
                   load_model, save_model, split_dataset, standardize, write_csv)
from .diagnostics import check_assumptions, check_gradients, monotonicity_diagnostic
from .errors import (DataFormatError, DimensionMismatchError, InfeasibleInitError,
                     MetricError, ModelFormatError, PrefmoeError,
                     ProjectionInfeasibleError, RuleParseError, SchemaError, SolverError)
from .metrics import (CurvePoint, accuracy_coverage_curve, auc, calibrate_thresholds,
                      curve_to_csv, hard_coverage, soft_coverage)
from .model import (Dataset, MoEModel, Standardization, coverage_gradient,
                    coverage_objective, expert_prob, gate_prob, loss,
                    loss_gradients, predict_proba)
from .rules import (BoundRuleSet, Clause, Rule, RuleSet, compliance_matrix,
                    evaluate_guideline, format_rules, parse_rules_file,
                    parse_rules_text, rule_report)
from .solvers import (SolverConfig, TrainReport, project_onto_feasible,
                      train_log_barrier, train_projected_gradient, train_unconstrained)

__version__ = "0.1.0"
