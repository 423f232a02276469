"""Model-based reinforcement learning on random Fourier feature embeddings of Gaussian dynamics."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .agents import ModelConfig, RunConfig, oracle_value, run_agent, run_ts, run_ucb_approx
from .environments import ENVIRONMENTS, make_env
from .planner import PlannerConfig, plan_dp
from .spectral_features import RffMap, apply_rff, gaussian_kernel_exact, sample_rff

__all__ = [
    "ENVIRONMENTS", "ModelConfig", "PlannerConfig", "RffMap", "RunConfig", "apply_rff",
    "gaussian_kernel_exact", "make_env", "oracle_value", "plan_dp", "run_agent", "run_ts",
    "run_ucb_approx", "sample_rff",
]
