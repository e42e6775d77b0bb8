"""Control-affine models ``zdot = f(z) + g(z) u`` with box-bounded inputs."""
from __future__ import annotations

from typing import Any

import numpy as np

REACH = "reach"
AVOID = "avoid"


class ControlAffineModel:
    """Base model. Subclasses implement `drift` and `input_map`.

    Both take states of shape ``(n_x, ...)`` so that a whole grid can be
    evaluated at once; `drift` returns ``(n_x, ...)`` and `input_map`
    returns ``(n_x, n_u, ...)``.
    """

    name = "model"
    n_x: int
    n_u: int
    #: state dimensions holding angles, wrapped to [-pi, pi) by `step`
    angle_dims: tuple[int, ...] = ()

    def __init__(self, u_min, u_max):
        self.u_min = np.atleast_1d(np.asarray(u_min, dtype=float))
        self.u_max = np.atleast_1d(np.asarray(u_max, dtype=float))
        if self.u_min.shape != (self.n_u,) or self.u_max.shape != (self.n_u,):
            raise ValueError(f"{self.name}: control bounds must have length {self.n_u}")
        if np.any(self.u_min > self.u_max):
            raise ValueError(f"{self.name}: requires u_min <= u_max")

    def drift(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def input_map(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, Any]:
        return {}

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "params": self.params()}

    def rhs(self, z, u) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.drift(z) + self.input_map(z) @ np.asarray(u, dtype=float)

    def clip(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.u_min, self.u_max)

    def wrap(self, z) -> np.ndarray:
        z = np.array(z, dtype=float)
        for i in self.angle_dims:
            z[i] = np.mod(z[i] + np.pi, 2 * np.pi) - np.pi
        return z


def optimal_control(model: ControlAffineModel, z, p, mode: str = REACH) -> np.ndarray:
    """Bang-bang control extremising ``p . (f(z) + g(z) u)`` over the control box.

    Reach minimises, avoid maximises. A zero switching coefficient picks
    ``u_max``.
    """
    c = np.asarray(p, dtype=float) @ model.input_map(np.asarray(z, dtype=float))
    if mode == REACH:
        return np.where(c > 0, model.u_min, model.u_max)
    if mode == AVOID:
        return np.where(c < 0, model.u_min, model.u_max)
    raise ValueError(f"unknown mode {mode!r}")


def step(model: ControlAffineModel, z, u, dt: float) -> np.ndarray:
    """One classical RK4 step with ``u`` held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = model.rhs(z, u)
    k2 = model.rhs(z + 0.5 * dt * k1, u)
    k3 = model.rhs(z + 0.5 * dt * k2, u)
    k4 = model.rhs(z + dt * k3, u)
    return model.wrap(z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


class Integrator1D(ControlAffineModel):
    name = "integrator1d"
    n_x, n_u = 1, 1

    def __init__(self, u_max: float = 1.0):
        super().__init__([-u_max], [u_max])

    def params(self):
        return {"u_max": float(self.u_max[0])}

    def drift(self, z):
        return np.zeros_like(z)

    def input_map(self, z):
        return np.ones((1, 1, *z.shape[1:]))


class Frozen(ControlAffineModel):
    """``f = 0, g = 0``: nothing moves."""

    name = "frozen"

    def __init__(self, n_x: int = 1, n_u: int = 1, u_max: float = 1.0):
        self.n_x, self.n_u = n_x, n_u
        super().__init__([-u_max] * n_u, [u_max] * n_u)

    def params(self):
        return {"n_x": self.n_x, "n_u": self.n_u, "u_max": float(self.u_max[0])}

    def drift(self, z):
        return np.zeros_like(z)

    def input_map(self, z):
        return np.zeros((self.n_x, self.n_u, *z.shape[1:]))


class Dubins3(ControlAffineModel):
    """Fixed-speed Dubins car, state ``(x, y, theta)``, input turn rate."""

    name = "dubins3"
    n_x, n_u = 3, 1
    angle_dims = (2,)

    def __init__(self, speed: float = 1.0, omega_max: float = 1.0):
        self.speed = float(speed)
        super().__init__([-omega_max], [omega_max])

    def params(self):
        return {"speed": self.speed, "omega_max": float(self.u_max[0])}

    def drift(self, z):
        return np.stack([self.speed * np.cos(z[2]), self.speed * np.sin(z[2]), np.zeros_like(z[2])])

    def input_map(self, z):
        g = np.zeros((3, 1, *z.shape[1:]))
        g[2, 0] = 1.0
        return g


class Bicycle5(ControlAffineModel):
    """Kinematic bicycle, state ``(x, y, theta, delta, v)``, input ``(steer rate, accel)``."""

    name = "bicycle5"
    n_x, n_u = 5, 2
    angle_dims = (2,)

    def __init__(self, wheelbase: float = 0.32, steer_rate_max: float = 0.5,
                 accel_max: float = 0.5):
        self.wheelbase = float(wheelbase)
        super().__init__([-steer_rate_max, -accel_max], [steer_rate_max, accel_max])

    def params(self):
        return {"wheelbase": self.wheelbase, "steer_rate_max": float(self.u_max[0]),
                "accel_max": float(self.u_max[1])}

    def drift(self, z):
        x, y, th, delta, v = z
        zero = np.zeros_like(x)
        return np.stack([v * np.cos(th), v * np.sin(th), v * np.tan(delta) / self.wheelbase, zero, zero])

    def input_map(self, z):
        g = np.zeros((5, 2, *z.shape[1:]))
        g[3, 0] = 1.0
        g[4, 1] = 1.0
        return g


MODELS = {cls.name: cls for cls in (Integrator1D, Frozen, Dubins3, Bicycle5)}


def make_model(name: str, **params) -> ControlAffineModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)
