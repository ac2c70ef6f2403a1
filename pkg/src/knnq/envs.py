"""Built-in environments and behavior policies.

Catalog:

* ``box``     - bounded [0,1]^d with sinusoidal Lipschitz rewards and a
  truncated-Gaussian transition kernel (closed-form density). Exercises the
  bounded-support assumptions.
* ``ar1``     - unbounded 1-D drift chain S' = rho*S + b(a) + N(0, tau^2)
  with a bounded Lipschitz reward. Exercises the unbounded-support regime.
* ``two_arm`` - state-independent uniform kernel on [0,1] with rewards 0 and
  1; its Q* is constant per action (closed form), used as an oracle check.
* ``const``   - constant reward, identity or uniform transitions; degenerate
  diagnostic environment for fixed-point tests (no kernel density when the
  transition is the identity).

All declared constants (R, L_r, C_p, sigma) are closed form; derivations are
noted inline where not obvious.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .mdp import EnvSpec, Policy

__all__ = [
    "box_env",
    "ar1_env",
    "two_arm_env",
    "const_env",
    "make_env",
    "uniform_policy",
    "tilted_policy",
    "make_policy",
    "ENV_BUILDERS",
    "POLICY_BUILDERS",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _phi(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


# ---------------------------------------------------------------------------
# Bounded box environment
# ---------------------------------------------------------------------------


def box_env(dim: int = 1, sigma: float = 0.25, tau: float = 0.25, drift: float = 0.9,
            noise_clip=None) -> EnvSpec:
    """Bounded [0,1]^d environment with a truncated-Gaussian kernel.

    Two actions. The kernel mean is affine per axis: action 0 drifts with the
    state (mu_i = m0 + drift*s_i), action 1 against it (mu_i = m1 - drift*s_i),
    keeping mu in [m0, m1] = [(1-drift)/2, (1+drift)/2]. Each axis then draws
    a Gaussian(mu_i, tau^2) truncated to [0,1] and renormalized, so the
    density is exact and the box invariant holds by construction.

    Rewards: r(s, a) = 0.5 + 0.45*sin(2*pi*mean(s) + a*pi/2), bounded in
    [0.05, 0.95] with L_r = 0.9*pi/sqrt(d) (Euclidean gradient bound).

    C_p: per axis, the density's derivative in the mean has integrated
    absolute value at most 2*sqrt(2/pi)/(tau*Z_min); the mean moves at most
    drift per unit state change, and product-kernel differences telescope
    across axes, giving C_p = d * drift * 2*sqrt(2/pi) / (tau * Z_min) with
    Z_min the smallest truncation mass over admissible means.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not 0 < drift < 1:
        raise ValueError("drift must be in (0,1)")
    m0 = (1.0 - drift) / 2.0
    m1 = (1.0 + drift) / 2.0

    def mu_map(s, a):
        s = np.asarray(s, dtype=np.float64)
        if a == 0:
            return m0 + drift * s
        return m1 - drift * s

    def z_mass(mu):
        return ndtr((1.0 - mu) / tau) - ndtr((0.0 - mu) / tau)

    def reward_fn(s, a):
        s = np.asarray(s, dtype=np.float64)
        m = s.mean(axis=-1)
        return 0.5 + 0.45 * np.sin(2.0 * math.pi * m + a * math.pi / 2.0)

    def transition_sampler(s, a, rng):
        # rejection sampling draws the truncated Gaussian exactly; acceptance
        # mass is at least z_min per axis, so a couple of draws suffice
        mu = mu_map(s, a)
        x = mu + tau * rng.standard_normal(mu.shape)
        bad = (x < 0.0) | (x > 1.0)
        while bad.any():
            x = np.where(bad, mu + tau * rng.standard_normal(mu.shape), x)
            bad = (x < 0.0) | (x > 1.0)
        return x

    def kernel_density(y, s, a):
        y = np.asarray(y, dtype=np.float64)
        mu = mu_map(s, a)
        z = z_mass(mu)
        inside = (y >= 0.0) & (y <= 1.0)
        dens = _phi((y - mu) / tau) / (tau * z) * inside
        return dens.prod(axis=-1)

    z_min = float(min(z_mass(np.array(m0)), z_mass(np.array(m1))))
    c_p = dim * drift * 2.0 * math.sqrt(2.0 / math.pi) / (tau * z_min)
    box = (np.zeros(dim), np.ones(dim))
    return EnvSpec(
        name=f"box{dim}d",
        dim=dim,
        num_actions=2,
        reward_fn=reward_fn,
        transition_sampler=transition_sampler,
        noise_sigma=sigma,
        reward_bound=1.0,
        reward_lipschitz=0.9 * math.pi / math.sqrt(dim),
        kernel_lipschitz_mass=c_p,
        support="bounded",
        support_box=box,
        kernel_density=kernel_density,
        initial_state=np.full(dim, 0.5),
        mixing_m=1,
        noise_clip=noise_clip,
        params={"dim": dim, "sigma": sigma, "tau": tau, "drift": drift},
    )


# ---------------------------------------------------------------------------
# Unbounded AR(1) environment
# ---------------------------------------------------------------------------


def ar1_env(sigma: float = 0.75, rho: float = 0.5, drift: float = 0.15, tau: float = 0.3,
            noise_clip=None) -> EnvSpec:
    """Unbounded 1-D drift chain S' = rho*S + b(a) + N(0, tau^2).

    Two actions with b = (-drift, +drift). Reward r(s, a) =
    exp(-(s - theta_a)^2 / 2) with theta = (-1, +1): bounded in (0, 1],
    L_r = exp(-1/2). The Gaussian kernel gives C_p = rho*sqrt(2/pi)/tau
    exactly (integrated |d p / d s|).

    The tail-regularity constants of the unbounded-support assumption have no
    closed form here (the infimum m-step kernel g has none); they are left
    unverified in ``tail_constants``.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must be in (0,1)")
    b = np.array([-drift, drift])
    theta = np.array([-1.0, 1.0])

    def reward_fn(s, a):
        s = np.asarray(s, dtype=np.float64)
        x = s[..., 0] - theta[a]
        return np.exp(-0.5 * np.square(x))

    def transition_sampler(s, a, rng):
        return rho * np.asarray(s, dtype=np.float64) + b[a] + tau * rng.standard_normal(1)

    def kernel_density(y, s, a):
        y = np.asarray(y, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        z = (y - rho * s - b[a]) / tau
        return (_phi(z) / tau).prod(axis=-1)

    # stationary spread bound used by the oracle truncation heuristic
    sd_stat = tau / math.sqrt(1.0 - rho * rho)
    center = drift / (1.0 - rho)
    return EnvSpec(
        name="ar1",
        dim=1,
        num_actions=2,
        reward_fn=reward_fn,
        transition_sampler=transition_sampler,
        noise_sigma=sigma,
        reward_bound=1.0,
        reward_lipschitz=math.exp(-0.5),
        kernel_lipschitz_mass=rho * math.sqrt(2.0 / math.pi) / tau,
        support="unbounded",
        support_box=None,
        kernel_density=kernel_density,
        initial_state=np.zeros(1),
        mixing_m=1,
        noise_clip=noise_clip,
        tail_constants={"verified": False, "stationary_sd_bound": sd_stat,
                        "stationary_center_bound": center},
        params={"sigma": sigma, "rho": rho, "drift": drift, "tau": tau},
    )


# ---------------------------------------------------------------------------
# Closed-form diagnostic environments
# ---------------------------------------------------------------------------


def two_arm_env() -> EnvSpec:
    """State-independent uniform kernel on [0,1]; r(.,0)=0, r(.,1)=1, sigma=0.

    Q* is constant per action: V = 1 + gamma*V, so Q*(.,1) = 1/(1-gamma) and
    Q*(.,0) = gamma/(1-gamma). At gamma = 0.5 that is 2 and 1.
    """

    def reward_fn(s, a):
        s = np.asarray(s, dtype=np.float64)
        return np.full(s.shape[:-1], float(a))

    def transition_sampler(s, a, rng):
        return rng.random(1)

    def kernel_density(y, s, a):
        y = np.asarray(y, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        inside = (y >= 0.0) & (y <= 1.0)
        dens = np.ones(np.broadcast_shapes(y.shape, s.shape)) * inside
        return dens.prod(axis=-1)

    return EnvSpec(
        name="two_arm",
        dim=1,
        num_actions=2,
        reward_fn=reward_fn,
        transition_sampler=transition_sampler,
        noise_sigma=0.0,
        reward_bound=1.0,
        reward_lipschitz=0.0,
        kernel_lipschitz_mass=0.0,
        support="bounded",
        support_box=(np.zeros(1), np.ones(1)),
        kernel_density=kernel_density,
        initial_state=np.full(1, 0.5),
    )


def const_env(c: float = 1.0, sigma: float = 0.0, num_actions: int = 2,
              transition: str = "identity", noise_clip=None) -> EnvSpec:
    """Constant reward r = c for every action; identity or uniform transitions.

    With the identity transition the chain never moves (no kernel density, so
    the oracle rejects it); the unique fixed point of both learners is
    c/(1-gamma), which makes this the standard closed-form check.
    """
    if transition not in ("identity", "uniform"):
        raise ValueError("transition must be 'identity' or 'uniform'")

    def reward_fn(s, a):
        s = np.asarray(s, dtype=np.float64)
        return np.full(s.shape[:-1], c)

    if transition == "identity":
        def transition_sampler(s, a, rng):
            return np.asarray(s, dtype=np.float64)

        kernel_density = None
    else:
        def transition_sampler(s, a, rng):
            return rng.random(1)

        def kernel_density(y, s, a):
            y = np.asarray(y, dtype=np.float64)
            s = np.asarray(s, dtype=np.float64)
            inside = (y >= 0.0) & (y <= 1.0)
            dens = np.ones(np.broadcast_shapes(y.shape, s.shape)) * inside
            return dens.prod(axis=-1)

    return EnvSpec(
        name="const",
        dim=1,
        num_actions=num_actions,
        reward_fn=reward_fn,
        transition_sampler=transition_sampler,
        noise_sigma=sigma,
        reward_bound=c,
        reward_lipschitz=0.0,
        kernel_lipschitz_mass=0.0,
        support="bounded",
        support_box=(np.zeros(1), np.ones(1)),
        kernel_density=kernel_density,
        initial_state=np.full(1, 0.5),
        noise_clip=noise_clip,
        params={"c": c, "sigma": sigma, "transition": transition},
    )


ENV_BUILDERS = {
    "box": box_env,
    "ar1": ar1_env,
    "two_arm": two_arm_env,
    "const": const_env,
}


def make_env(name: str, **kwargs) -> EnvSpec:
    """Build a catalog environment by name. Unknown names raise ValueError."""
    if name not in ENV_BUILDERS:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(ENV_BUILDERS)}")
    builder = ENV_BUILDERS[name]
    if name != "box":
        dim = kwargs.pop("dim", None)
        if dim not in (None, 1):
            raise ValueError(f"environment {name!r} is 1-D only")
    return builder(**kwargs)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def uniform_policy(num_actions: int = 2) -> Policy:
    p = np.full(num_actions, 1.0 / num_actions)
    return Policy(num_actions=num_actions, floor=1.0 / num_actions, probs=p, name="uniform")


def tilted_policy(floor: float = 0.2) -> Policy:
    """Two-action policy tilted by a logistic function of the mean coordinate.

    P(a=1|s) = floor + (1 - 2*floor) * logistic(mean(s)); respects the floor
    on unbounded supports as well.
    """
    if not 0 < floor < 0.5:
        raise ValueError("tilted policy needs floor in (0, 0.5)")

    def probs_fn(s):
        h = 1.0 / (1.0 + math.exp(-float(np.mean(s))))
        p1 = floor + (1.0 - 2.0 * floor) * h
        return np.array([1.0 - p1, p1])

    return Policy(num_actions=2, floor=floor, probs_fn=probs_fn, name="tilted")


POLICY_BUILDERS = {"uniform": uniform_policy, "tilted": tilted_policy}


def make_policy(name: str, num_actions: int = 2, **kwargs) -> Policy:
    if name not in POLICY_BUILDERS:
        raise ValueError(f"unknown policy {name!r}; known: {sorted(POLICY_BUILDERS)}")
    if name == "uniform":
        return uniform_policy(num_actions=num_actions, **kwargs)
    if num_actions != 2:
        raise ValueError(f"policy {name!r} supports 2 actions only")
    return POLICY_BUILDERS[name](**kwargs)
