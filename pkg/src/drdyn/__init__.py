"""Douglas-Rachford iteration for a sphere and a line: dynamics, Lyapunov
certificate and empirical robust KL-stability checks."""

from .dynamics import Mode, PerturbationProfile, StopTolerances, iterate, simulate_perturbed
from .geometry import ProblemConfig, dr_step, fixed_points
from .lyapunov import SampleBox, eval_F, eval_U, eval_V, eval_W

__version__ = "0.1.0"
