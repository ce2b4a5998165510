from .dpm import (BaseMeasure, DpmConfig, dpm_gibbs, dpm_summaries, mle_base_measure,
                  run_dpm)
from .rjmcmc import (RjConfig, RjState, log_joint, quadrature_partition_posterior,
                     quadrature_posterior, rj_summaries, run_rj_chain, split_merge_move)
