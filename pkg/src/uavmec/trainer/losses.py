"""Scalar losses with exact gradients for actor heads, critic and discriminator.

Every function returns ``(loss, grads, info)`` where ``grads`` matches
``net.params``.
"""

from __future__ import annotations

import numpy as np

from ..nn import (Mlp, dirichlet_concentration, dirichlet_log_prob, dirichlet_log_prob_grad,
                  gaussian_log_prob, gaussian_log_prob_grads, log_sigmoid, sigmoid)


def clipped_objective(ratio, adv, eps):
    """Per-sample min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def _surrogate(logp, old_logp, adv, eps):
    """Negated mean clipped objective and its gradient w.r.t. ``logp``."""
    ratio = np.exp(logp - old_logp)
    keep = np.isfinite(ratio)
    n = max(int(keep.sum()), 1)
    r = np.where(keep, ratio, 1.0)
    unclipped = r * adv
    clipped = np.clip(r, 1.0 - eps, 1.0 + eps) * adv
    obj = np.minimum(unclipped, clipped)
    loss = -float(np.sum(np.where(keep, obj, 0.0))) / n
    active = (unclipped <= clipped) & keep
    d_logp = np.where(active, -unclipped / n, 0.0)
    clip_frac = float(np.mean(np.abs(r[keep] - 1.0) > eps)) if keep.any() else 0.0
    return loss, d_logp, {"ratio": ratio, "skipped": int((~keep).sum()), "clip_frac": clip_frac}


def flight_actor_loss(net: Mlp, obs, u, old_logp, adv, eps: float):
    mean, acts = net.forward(obs)
    log_std = net.params["log_std"]
    logp = gaussian_log_prob(mean, log_std, u)
    loss, d_logp, info = _surrogate(logp, old_logp, adv, eps)
    d_mean, d_logstd = gaussian_log_prob_grads(mean, log_std, u)
    grads = net.backward(acts, d_logp[:, None] * d_mean)
    grads["log_std"] = np.sum(d_logp[:, None] * d_logstd, axis=0)
    return loss, grads, info


def alloc_actor_loss(net: Mlp, obs, x, old_logp, adv, eps: float):
    logits, acts = net.forward(obs)
    conc = dirichlet_concentration(logits)
    logp = dirichlet_log_prob(conc, x)
    loss, d_logp, info = _surrogate(logp, old_logp, adv, eps)
    d_conc = dirichlet_log_prob_grad(conc, x)
    d_logits = d_logp[:, None] * d_conc * sigmoid(logits)
    return loss, net.backward(acts, d_logits), info


def critic_loss(net: Mlp, obs, returns):
    out, acts = net.forward(obs)
    err = out[:, 0] - returns
    b = err.shape[0]
    loss = float(0.5 * np.sum(err * err) / b)
    return loss, net.backward(acts, (err / b)[:, None]), {}


def discriminator_loss(net: Mlp, agent_inputs, expert_inputs, variant: str = "bce"):
    """Adversarial-imitation loss; expert tuples are labelled 1, agent tuples 0.

    ``variant="paper_literal"`` evaluates
    -mean log D(agent) - mean(1 - log D(expert)) instead.
    """
    za, acts_a = net.forward(agent_inputs)
    ze, acts_e = net.forward(expert_inputs)
    za, ze = za[:, 0], ze[:, 0]
    ba, be = za.shape[0], ze.shape[0]
    if variant == "bce":
        loss = -float(np.mean(log_sigmoid(ze))) - float(np.mean(log_sigmoid(-za)))
        d_ze = -(1.0 - sigmoid(ze)) / be
        d_za = sigmoid(za) / ba
    elif variant == "paper_literal":
        loss = -float(np.mean(log_sigmoid(za))) - float(np.mean(1.0 - log_sigmoid(ze)))
        d_za = -(1.0 - sigmoid(za)) / ba
        d_ze = (1.0 - sigmoid(ze)) / be
    else:
        raise ValueError(f"unknown discriminator loss variant {variant!r}")
    ga = net.backward(acts_a, d_za[:, None])
    ge = net.backward(acts_e, d_ze[:, None])
    grads = {k: ga[k] + ge[k] for k in ga}
    return loss, grads, {"d_agent": float(np.mean(sigmoid(za))),
                         "d_expert": float(np.mean(sigmoid(ze)))}
