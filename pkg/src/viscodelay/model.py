"""Runtime problem description assembled from a scenario configuration."""

from dataclasses import dataclass, field
import math

import numpy as np

from .delay import DelaySpec, GainSpec, InitialHistory
from .kernel import KernelSpec
from .operators import FeedbackOperator, NonlinearitySpec, Spectrum


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str = "rk4"
    corrector_tol: float = 1e-9
    max_corrector: int = 4
    blowup: float = 1e12

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.scheme != "rk4":
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if self.max_corrector < 1:
            raise ValueError("max_corrector must be at least 1")


@dataclass(frozen=True)
class AuditToggles:
    gronwall: bool = True
    lower_bound: bool = True
    derivative: bool = True


@dataclass(frozen=True, eq=False)
class Model:
    spectrum: Spectrum
    feedback: FeedbackOperator
    kernel: KernelSpec
    nonlinearity: NonlinearitySpec
    delay: DelaySpec
    gain: GainSpec
    history: InitialHistory
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    horizon: float = 50.0
    cadence: int = 10
    audits: AuditToggles = field(default_factory=AuditToggles)
    name: str = "scenario"

    @property
    def n_modes(self):
        return self.spectrum.n_modes

    @property
    def tau_bar(self):
        return self.delay.tau_bar

    @property
    def b(self):
        return self.feedback.b_norm

    @property
    def retention(self):
        return self.kernel.s_cut + self.tau_bar + 4 * self.integrator.dt


@dataclass
class SimState:
    """Modal positions u, velocities v and memory variables z at time t."""

    t: float
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray

    def copy(self):
        return SimState(self.t, self.u.copy(), self.v.copy(), self.z.copy())

    def flat(self):
        return np.concatenate([self.u, self.v, self.z.ravel()])
