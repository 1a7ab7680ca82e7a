from delayapp.grid import make_grid
from delayapp.kernels import KernelSpec
from delayapp.lq import LqSpec
from delayapp.system import DelaySystem, LinearCoefficients, QuadraticCost


def small_grid(steps=20, T=1.0, delta=0.1):
    return make_grid(0.0, T, steps, delta)


def linear_system(grid, **overrides):
    fields = dict(
        grid=grid,
        drift=LinearCoefficients(x=0.2, y=0.1, z=0.1, u=1.0, mu=0.5),
        diffusion=LinearCoefficients(x=0.1, u=0.2),
        running_cost=QuadraticCost(linear={'x': 1.0}, quadratic={'u': 1.0}),
        terminal_cost=QuadraticCost(quadratic={'x': 1.0}),
        xi=1.0,
    )
    fields.update(overrides)
    return DelaySystem(**fields)


def lq_spec(grid, **overrides):
    fields = dict(grid=grid, f=2.0, g=2.0, h=2.0, k=2.0, abar=0.2, r1=1.0, r2=1.0, xi=1.0,
                  phi2=KernelSpec.constant(2.0))
    fields.update(overrides)
    return LqSpec(**fields)
