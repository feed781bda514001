"""Learned task-based analog-to-digital acquisition.

Jointly trains an analog combiner, non-uniform sampler, non-uniform
quantizer, and digital decoder, and meta-optimizes the acquisition
configuration under a bit budget with GP-based Bayesian optimization.
"""

from .adc import (AnnealSchedule, HardAdc, SoftQuantizer, SoftSampler,
                  anneal_step, hard_forward, harden_quantizer, harden_sampler,
                  soft_quantize, soft_sample)
from .baselines import (UniformQuantizer, map_full, map_full_perturbed,
                        map_sampled, map_sampled_quantized)
from .harness import (EvalEntry, learned_detector, load_checkpoint,
                      load_dataset, map_full_detector,
                      map_full_perturbed_detector, map_sampled_detector,
                      map_sampled_quantized_detector, monte_carlo_error_rate,
                      save_checkpoint, save_dataset, sweep_snr, wilson_ci)
from .meta import (GpState, MetaObjectiveConfig, SearchSpace, bayes_opt,
                   encode, expected_improvement, gp_posterior, learn_system,
                   meta_objective)
from .net import DenseLayer, adam_update, cross_entropy_loss, mse_loss
from .pipeline import (AdcHyperparams, TaskSystem, TrainConfig, bit_cost,
                       forward_hard, forward_soft, harden, train)
from .signal import (Dataset, SignalModel, db_to_linear, generate_dataset,
                     measurement_matrix, perturb_model, perturbation_variance,
                     sample_dense_signal)

__version__ = "0.1.0"
