"""linrl: a laboratory for episodic MDPs with linearly realizable optimal
Q-functions.

Builds the leaking-complete-graph hard MDP family and its variants, computes
certified G-optimal designs, runs the design-exploring DMQ learner, and
scripts the online-vs-generative-model experiments.
"""

__version__ = "0.1.0"

from .design import (AvgDesignReport, DegenerateInput, DesignDistribution,
                     StatePolicyDesigns, avg_design_bound, kw_design, state_design)
from .dmq import (BudgetExhausted, DmqConfig, DmqState, DmqStats, InvariantViolation,
                  SingularCovariance, default_config, learn_level,
                  make_exploratory_policy, run_dmq, shift_check)
from .experiments import (AccessViolation, ExperimentSpec, SeparationReport,
                          SurvivalTable, TrialResult, generative_planner,
                          lsvi_greedy_learner, run_separation, survival_decay,
                          uniform_random_learner)
from .instances import (GapCheck, HardInstance, RealizabilityReport, UnsupportedVariant,
                        build_base, build_gap_complete, build_reachable,
                        build_reference, build_variant, closed_form_q,
                        instance_from_json_dict, instance_to_json_dict,
                        load_instance, save_instance, verify_gap,
                        verify_realizability)
from .mdp import (ContractViolation, DiscreteReward, FeatureMap, GenerativeModel,
                  MdpModel, OnlineEnv, Trajectory, TrajectoryBatch,
                  generative_query, rollout, sample_trajectory)
from .oracle import (GapReport, PolicyValues, ValueTables, min_gap, optimal_values,
                     policy_evaluation, visitation_distribution)
from .packs import (PackInfeasible, PackReport, VectorPack, build_pack, load_pack,
                    save_pack, verify_pack)
from .policies import (DesignSamplerPolicy, LinearGreedyPolicy, MixturePolicy,
                       TabularPolicy, UnsupportedPolicy, compile_policy,
                       deterministic_policy, eps_greedy_policy, uniform_policy)
from .regression import (ConditionReport, GaussianCovariates, RegressionSample,
                         RidgeResult, RiskCheckReport, estimate_c_hyper,
                         estimate_c_var, epsilon_n, ridge_fit, ridge_risk_check,
                         sparse_bias_risk_check)
from .reports import emit_results, write_csv, write_json
