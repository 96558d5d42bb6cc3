"""Reference-user selection agent.

Within every recommendation step the selector runs a short inner episode:
it scores a similarity-ranked candidate pool, samples users without
replacement until the reference budget is filled, and earns an intrinsic
reward combining the running reward estimate with similarity and
diversity gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rewardmath as rm
from .nncore import Linear, Mlp, SeqEncoder, softmax_policy


@dataclass
class SelectorState:
    vec: np.ndarray
    s_rec: np.ndarray
    p_row: np.ndarray


@dataclass
class SelectionEpisode:
    user: int
    item: int
    s_rec: np.ndarray
    p_u: np.ndarray
    pool: np.ndarray
    selected: list = field(default_factory=list)  # user ids in selection order
    p_rows: list = field(default_factory=list)  # preference rows at selection time
    slots: list = field(default_factory=list)  # pool indices actually sampled
    logprobs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    sims: list = field(default_factory=list)
    divs: list = field(default_factory=list)
    ref_rewards: list = field(default_factory=list)
    rewards: list = field(default_factory=list)  # per-step intrinsic rewards
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None

    @property
    def length(self):
        return len(self.slots)

    def mean_sim(self):
        return float(np.mean(self.sims))

    def mean_div(self):
        return float(np.mean(self.divs))


class SelectorAgent:
    """Projection, windowed encoder, actor over the candidate pool, critic."""

    def __init__(
        self, n_items, d_rec, d_pref, pool_size, window, seed,
        heads=1, layers=1, hidden=(64,), critic_out=1,
    ):
        self.n_items = n_items
        self.d_rec = d_rec
        self.d_pref = d_pref
        self.d_state = d_rec + d_pref
        self.pool_size = pool_size
        self.window = window
        self.proj = Linear("sel/proj", d_rec + n_items, self.d_state, seed)
        self.encoder = SeqEncoder("sel/enc", self.d_state, window, seed, heads=heads, layers=layers)
        self.actor = Mlp("sel/actor", [self.d_state] + list(hidden) + [pool_size], seed)
        self.critic = Mlp("sel/critic", [self.d_state] + list(hidden) + [critic_out], seed)

    def blocks(self):
        return self.proj.blocks() + self.encoder.blocks() + self.actor.blocks() + self.critic.blocks()

    def token(self, s_rec, p_row):
        t, _ = self.proj.forward(np.concatenate([s_rec, p_row]))
        return t


def candidate_pool(u, matrix, C):
    """Top-C users by preference-row cosine to user u, ids ascending on ties.

    The current user is excluded; recomputed once per recommendation step.
    """
    rows = matrix.current
    n = rows.shape[0]
    p_u = rows[u]
    norms = np.linalg.norm(rows, axis=1)
    sims = rows @ p_u / (np.maximum(norms, 1e-30) * max(np.linalg.norm(p_u), 1e-30))
    ids = np.delete(np.arange(n), u)
    sims = sims[ids]
    order = np.lexsort((ids, -sims))
    return ids[order][: min(C, len(ids))]


def init_state(s_rec, p_u, agent: SelectorAgent) -> SelectorState:
    """Initial selection state: projected concatenation of both context parts."""
    s_rec = np.asarray(s_rec, dtype=np.float64)
    p_u = np.asarray(p_u, dtype=np.float64)
    if s_rec.shape != (agent.d_rec,) or p_u.shape != (agent.n_items,):
        raise ValueError("state parts do not match the agent widths")
    return SelectorState(vec=agent.token(s_rec, p_u), s_rec=s_rec, p_row=p_u)


def advance_state(ep: SelectionEpisode, newly_selected_p, agent: SelectorAgent) -> SelectorState:
    """Next selection state: encode the last window of projected tokens.

    Token t comes from the user picked at step t-1, so the state
    progressively absorbs the selected users' preference rows.
    """
    newly_selected_p = np.asarray(newly_selected_p, dtype=np.float64)
    tokens = [agent.token(ep.s_rec, ep.p_u)]
    for row in ep.p_rows[:-1]:
        tokens.append(agent.token(ep.s_rec, row))
    tokens.append(agent.token(ep.s_rec, newly_selected_p))
    vec, _ = agent.encoder.encode(tokens[-agent.window :])
    return SelectorState(vec=vec, s_rec=ep.s_rec, p_row=newly_selected_p)


def run_selection(
    u, i_t, s_rec, matrix, agent: SelectorAgent, k_sel, coeffs: rm.PenaltyCoeffs, rng,
    lambda_s=None, lambda_d=None,
) -> SelectionEpisode:
    """Sample k_sel distinct reference users for (u, i_t) with current policy.

    Per-step intrinsic reward: running mean of the selected users' reward
    estimates for i_t, plus weighted similarity and diversity gains. The
    gain coefficients default to the penalty config but can be overridden
    by ablation variants. Gains read the matrix as it stands before this
    recommendation step writes back.
    """
    lam_s = coeffs.lambda_s if lambda_s is None else lambda_s
    lam_d = coeffs.lambda_d if lambda_d is None else lambda_d
    pool = candidate_pool(u, matrix, agent.pool_size)
    if len(pool) < k_sel:
        raise ValueError(f"candidate pool exhausted: {len(pool)} users < k_sel={k_sel}")
    ep = SelectionEpisode(
        user=u, item=i_t, s_rec=np.array(s_rec, dtype=np.float64),
        p_u=matrix.current[u].copy(), pool=pool,
    )
    state = init_state(ep.s_rec, ep.p_u, agent)
    available = np.ones(agent.pool_size, dtype=bool)
    available[len(pool) :] = False
    running_sum = 0.0
    for t in range(k_sel):
        logits, _ = agent.actor.forward(state.vec)
        value, _ = agent.critic.forward(state.vec)
        slot, logprob, _ = softmax_policy(logits, mask=available, rng=rng)
        cand = int(pool[slot])
        p_cand = matrix.current[cand].copy()
        sim = rm.similarity_gain(ep.p_u, p_cand)
        div = rm.diversity_gain(p_cand, ep.p_rows)
        ref = float(matrix.current[cand, i_t])
        running_sum += ref
        prefix_mean = running_sum / (t + 1)
        reward = rm.intrinsic_reward(
            prefix_mean, rm.GainPair(sim, div), rm.PenaltyCoeffs(0.0, 0.0, lam_s, lam_d)
        )
        ep.slots.append(slot)
        ep.selected.append(cand)
        ep.p_rows.append(p_cand)
        ep.logprobs.append(logprob)
        ep.values.append(float(value.max()))  # scalar critic: the single entry
        ep.sims.append(sim)
        ep.divs.append(div)
        ep.ref_rewards.append(ref)
        ep.rewards.append(reward)
        available[slot] = False
        if t + 1 < k_sel:
            state = advance_state(ep, p_cand, agent)
    return ep


def episode_forward(agent: SelectorAgent, ep: SelectionEpisode):
    """Replay an episode with tapes for training; returns the forward bundle.

    Deterministic given the agent parameters and the episode record, so
    running it before any update reproduces the rollout numbers exactly.
    """
    n = ep.length
    inputs = [np.concatenate([ep.s_rec, ep.p_u])]
    for row in ep.p_rows[: n - 1]:
        inputs.append(np.concatenate([ep.s_rec, row]))
    tokens, tok_tapes = [], []
    for x in inputs:
        t, tape = agent.proj.forward(x)
        tokens.append(t)
        tok_tapes.append(tape)
    states, enc_tapes = [tokens[0]], [None]
    for t in range(1, n):
        lo = max(0, t + 1 - agent.window)
        vec, tape = agent.encoder.encode(tokens[lo : t + 1])
        states.append(vec)
        enc_tapes.append((lo, tape))
    logits, a_tapes, values, c_tapes = [], [], [], []
    for s in states:
        lg, at = agent.actor.forward(s)
        vl, ct = agent.critic.forward(s)
        logits.append(lg)
        a_tapes.append(at)
        values.append(vl)
        c_tapes.append(ct)
    return {
        "tokens": tokens, "tok_tapes": tok_tapes, "states": states,
        "enc_tapes": enc_tapes, "logits": logits, "a_tapes": a_tapes,
        "values": values, "c_tapes": c_tapes,
    }


def episode_backward(agent: SelectorAgent, fwd, dlogits, dvalues):
    """Push per-step head gradients back through encoder and projection."""
    n = len(fwd["states"])
    dtokens = [np.zeros(agent.d_state) for _ in fwd["tokens"]]
    for t in range(n):
        dstate = agent.actor.backward(fwd["a_tapes"][t], dlogits[t])
        dstate = dstate + agent.critic.backward(fwd["c_tapes"][t], dvalues[t])
        if t == 0:
            dtokens[0] += dstate
        else:
            lo, tape = fwd["enc_tapes"][t]
            for j, dt in enumerate(agent.encoder.backward(tape, dstate)):
                dtokens[lo + j] += dt
    for tape, dt in zip(fwd["tok_tapes"], dtokens):
        agent.proj.backward(tape, dt)
