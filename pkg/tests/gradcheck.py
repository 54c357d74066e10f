"""Central finite-difference gradient checking for Mlp-based losses."""

import numpy as np

STEP = 1e-5
FLOOR = 1e-6


def numeric_grads(net, loss_fn, step=STEP):
    out = {}
    for k, p in net.params.items():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + step
            up = loss_fn()
            p[i] = orig - step
            down = loss_fn()
            p[i] = orig
            g[i] = (up - down) / (2 * step)
        out[k] = g
    return out


def max_rel_error(analytic, numeric, floor=FLOOR):
    """Largest elementwise |a - n| / max(|a|, |n|, floor) over all parameters."""
    worst = 0.0
    for k in numeric:
        a, n = analytic[k], numeric[k]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()))
    return worst


def loss_cases(rng, obs_dim=4, alloc_dim=3, batch=6, hidden=(5, 5)):
    """Random small instances of the four trainer losses as (name, net, loss_fn, grad_fn)."""
    from uavmec.nn import Mlp
    from uavmec.trainer import losses

    obs = rng.normal(size=(batch, obs_dim))
    adv = rng.normal(size=batch)
    flight = Mlp(obs_dim, 2, "gaussian", hidden, rng, out_gain=1.0)
    u = rng.normal(size=(batch, 2))
    old1 = rng.normal(-2.0, 0.5, size=batch)
    alloc = Mlp(obs_dim, alloc_dim, "dirichlet", hidden, rng, out_gain=1.0)
    x = rng.dirichlet(np.ones(alloc_dim), size=batch)
    old2 = rng.normal(0.5, 0.5, size=batch)
    critic = Mlp(obs_dim, 1, "value", hidden, rng, out_gain=1.0)
    ret = rng.normal(size=batch)
    disc = Mlp(obs_dim + 2 + alloc_dim, 1, "discriminator", hidden, rng, out_gain=1.0)
    agent_in = rng.normal(size=(batch, obs_dim + 2 + alloc_dim))
    expert_in = rng.normal(size=(batch - 1, obs_dim + 2 + alloc_dim))
    return [
        ("flight_actor", flight, lambda: losses.flight_actor_loss(flight, obs, u, old1, adv, 0.2)),
        ("alloc_actor", alloc, lambda: losses.alloc_actor_loss(alloc, obs, x, old2, adv, 0.2)),
        ("critic", critic, lambda: losses.critic_loss(critic, obs, ret)),
        ("discriminator", disc, lambda: losses.discriminator_loss(disc, agent_in, expert_in)),
    ]


def check_case(net, fn):
    analytic = fn()[1]
    numeric = numeric_grads(net, lambda: fn()[0])
    return max_rel_error(analytic, numeric)
