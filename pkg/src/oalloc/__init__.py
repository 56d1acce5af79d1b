"""Online resource allocation with replenishable budgets.

Competitive allocators (conservative pricing, with and without doubling-frame
budget batching), a learning-augmented wrapper with worst-case utility
guarantees, offline oracles, baselines, a synthetic workload generator, and
an evaluation harness.
"""

from .core import (FEAS_TOL, InfeasibleAllocationError, Instance, Linear, LogServe,
                   Trace, UtilitySpec, eval_utility, step_budget,
                   utility_supergradient, validate_trace)
from .dual import DualState, ReferenceFunction, bregman, initial_mu, mirror_step
from .la_oacp import (LaResult, RobustnessConfig, constrained_projection,
                      fallback_action, feasibility_margin, reservation_utility,
                      run_la_oacp)
from .oacp import OacpConfig, TheoremMu, optimal_eta, preselect, run_oacp, theorem_bound
from .oacp_plus import (FramePlan, build_frame_plan, delta_rho,
                        effective_additive_budget, frame_eta, optimal_beta,
                        run_oacp_plus)
from .oracles import OptResult, run_baseline, solve_opt_concave, solve_opt_dp
from .predictor import PolicyNet, TrainConfig, featurize, forward, load_model, save_model, train
from .workload import (Dataset, GeneratorParams, generate_dataset, min_replenishment,
                       perturb_ood, read_dataset, read_instance_csv, write_dataset,
                       write_instance_csv)

__version__ = "0.1.0"
