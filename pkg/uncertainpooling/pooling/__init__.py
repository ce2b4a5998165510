from .covariates import CovariateDesign, beta_conditional, load_covariates, sample_mu_beta
from .diagnostics import (PpcResult, SimilarityMatrix, SimilaritySource,
                          dominant_cluster_probability, partition_class_probability,
                          posterior_predictive_pvalue, render_similarity, similarity_from_grid)
from .draws import (PosteriorDraws, gold_standard_posterior, overall_effect_interval,
                    sample_mu, summarize)
from .moments import (ConditionalMoments, conditional_moments, lambda_weights,
                      log_joint_weight, q_statistic, subset_mean)
from .partitions import (Partition, PartitionPrior, bell_number, dominant_block_predicate,
                         enumerate_partitions)
from .posterior import (GridSpec, JointPosterior, VariancePrior, compute_joint_posterior,
                        pool_all_delta2_posterior, sweep_joint_posterior)
