"""Slow, independent re-implementations of simulator pieces used as test oracles."""

from __future__ import annotations

import math

import numpy as np

from slotuner.simulator import SimConfig


def noise(cfg: SimConfig, rng: np.random.Generator) -> float:
    z = float(rng.standard_normal())
    if cfg.noise_rel_sd == 0:
        return 1.0
    return max(1e-3, 1.0 + cfg.noise_rel_sd * min(3.0, max(-3.0, z)))


def decode_walk(lens, W, k, cfg: SimConfig, rng: np.random.Generator, speculative=True):
    """Step-by-step decode: one loop iteration per round, one per drafted token.

    Consumes randomness exactly like the vectorized model: a noise normal, then
    a (max_len, n, window) block of uniforms addressed [round, member, position].
    """
    lens = [int(x) for x in lens]
    n = len(lens)
    factor = noise(cfg, rng)
    db, ds = cfg.decode_base_s_per_token, cfg.decode_per_seq_s_per_token
    remaining = list(lens)
    finish_t = [0.0] * n
    t = 0.0
    if not speculative or W <= 0:
        while any(r > 0 for r in remaining):
            active = [i for i in range(n) if remaining[i] > 0]
            t += db + ds * len(active)
            for i in active:
                remaining[i] -= 1
                if remaining[i] == 0:
                    finish_t[i] = t
        return t * factor, [x * factor for x in finish_t]

    window = W * math.ceil(k / W)
    u = rng.random((max(lens), n, window))
    r = 0
    while any(x > 0 for x in remaining):
        active = [i for i in range(n) if remaining[i] > 0]
        m = len(active)
        drafted = sum(min(window, remaining[i]) for i in active)
        cost = drafted * cfg.draft_s_per_token + cfg.verify_base_s + cfg.verify_per_seq_s * m
        correction = False
        for i in active:
            accepted = 0
            rejected = False
            for j in range(min(window, remaining[i])):
                if u[r, i, j] < cfg.p_acc:
                    accepted += 1
                else:
                    rejected = True
                    break
            if rejected and accepted < remaining[i]:
                correction = True
            remaining[i] -= accepted + (1 if rejected else 0)
        if correction:
            cost += db + ds * m
        t += cost
        for i in active:
            if remaining[i] <= 0:
                finish_t[i] = t
        r += 1
    return t * factor, [x * factor for x in finish_t]
