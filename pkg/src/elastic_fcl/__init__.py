"""Federated continual learning with elastic importance-weighted transfer."""
from .engine import (AlgorithmSpec, ConfigError, DataLocalityError, DivergenceError,
                     RoundSchedule, aggregate, run_experiment, select_clients,
                     simulate, train_local)
from .metrics import amse, bwt, fwt, param_account
from .numeric import (LabeledSet, MlpSpec, fisher_diagonal, grad_mse, init_model,
                      mse_loss, predict, sgd_step)
from .penalty import Anchor, PenaltySet, penalty_grad, penalty_value
from .scenario import (ScenarioConfig, generate_synthetic, load_external,
                       scale_train_fraction, split)

__version__ = "0.1.0"
