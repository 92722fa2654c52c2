"""Desk-scale lab for training-time and test-time FGSM attacks on DQN agents."""
from .adversary import AttackConfig, adversarial_loss, fgsm_perturb, mitm_filter
from .agent import AgentConfig, LearningCurve, ReplayBuffer, Trainer, clip_reward, run_training
from .envs import EnvSpec, make_env, optimal_return
from .nn import Network, apply_update, forward, input_gradient, param_gradients

__version__ = "0.1.0"
