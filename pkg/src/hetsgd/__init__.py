"""Time complexity of parallel SGD methods on workers with time-varying computation power."""
from .power import (INFINITY, Constant, PeriodicOutage, PiecewiseConstant, PiecewiseTrend,
                    PolyGrowth, ScaledTrend, SineOffset, Trace, completion_time, grad_count,
                    inverse_work, power_at, random_outage_trace, work)
from .bounds import (HarmonicCount, HarmonicScaled, LowerConstants, ProblemConstants, SumCount,
                     baseline_time, bound_sequence, closed_form, iterations_needed, next_time,
                     prefix_min)
from .objectives import (Exact, Gaussian, HeterQuadratic, ProblemSpec, Quadratic,
                         WorstCaseChain, ZeroOut, noisy_grad, prog, scaled_worst_case,
                         worst_case_grad, zero_out_oracle)
from .engine import OracleState, RunResult, Simulation, oracle_step, run_protocol
from .optimizers import AlgorithmDriver, accelerated_update, method_params, run_method
from .lowerbound import (homog_adversary_run, markov_window_run, sample_geometric,
                         tail_bound_check, window_params)

__version__ = "0.1.0"
