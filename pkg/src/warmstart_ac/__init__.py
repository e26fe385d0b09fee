"""Warm-started online actor-critic for just-in-time adaptive interventions."""

__version__ = "0.1.0"

from .env import BETA_BASIC, Dataset, Transition, UserEnv, UserModel, gen_user_models, rollout
from .policy import LogisticPolicy, action_prob, policy_feature, value_feature
from .critic import SingularSystem, lstdq, lstdq_warm
from .actor import ActorConfig, actor_gradient, actor_objective, actor_objective_warm, maximize_actor
from .learner import LearnerConfig, PriorStudy, batch_learn, gen_prior_study, run_online
from .evaluation import ExperimentConfig, ResultsTable, elrar, long_run_avg_reward, run_experiment

__all__ = [
    "BETA_BASIC", "Dataset", "Transition", "UserEnv", "UserModel", "gen_user_models", "rollout",
    "LogisticPolicy", "action_prob", "policy_feature", "value_feature",
    "SingularSystem", "lstdq", "lstdq_warm",
    "ActorConfig", "actor_gradient", "actor_objective", "actor_objective_warm", "maximize_actor",
    "LearnerConfig", "PriorStudy", "batch_learn", "gen_prior_study", "run_online",
    "ExperimentConfig", "ResultsTable", "elrar", "long_run_avg_reward", "run_experiment",
]
