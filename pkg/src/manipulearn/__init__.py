"""Learning task constraints and manipulability from demonstrations.

Pipeline: generate (or load) state-action demonstrations of a redundant chain
under an unknown task constraint, separate the null-space part of the actions,
estimate the constraint's selection rows, and use the learnt manipulability
index as a singularity-avoiding null-space policy.
"""
from .chains import SerialChain, forward_kinematics, get_chain, jacobian
from .constraints import ConstraintModel, PinvPolicy, constraint_preset, manipulability, pseudoinverse
from .demos import DemoConfig, default_demo_config, generate_demos
from .learning import LearnerConfig, learn_constraint
from .metrics import nmie, summarize, trajectory_rmse
from .policies import NullPolicy, TaskPolicy
from .simulator import simulate

__version__ = "0.1.0"
