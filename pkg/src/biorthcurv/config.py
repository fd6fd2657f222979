"""Central numerical tolerances and defaults.

Every threshold used by property checks and scans lives here so a single
record controls them.  Scans copy the values they use into their certificates.
"""

from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class Tolerances:
    unit_norm: float = 1e-12
    isometry: float = 1e-10
    structure: float = 1e-12
    plane_orthonormal: float = 1e-10
    degenerate_gram: float = 1e-12
    fd_convergence: float = 1e-6
    fd_step: float = 1e-3
    fd_halvings: int = 2
    sec_noise_floor: float = 5e-5
    flat: float = 1e-5
    chart_radius: float = 0.4
    chart_gram_min: float = 1e-8

    def as_dict(self):
        return asdict(self)

    def with_(self, **kw):
        return replace(self, **kw)


TOL = Tolerances()


@dataclass(frozen=True)
class DeformDefaults:
    r0: float = 0.1
    r1: float = 0.25
    theta: float = 0.1
    s_safety: float = 0.5
    potential: str = "synthetic"
    extra: dict = field(default_factory=dict)


DEFORM = DeformDefaults()
