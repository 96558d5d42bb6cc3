"""Item-recommendation agent with a windowed sequential state tracker.

Episode state is encoded from tokens built out of the user embedding, the
embedding of each interacted item, and the scalar reward received; the
item embedding table doubles as the action representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nncore import Linear, Mlp, SeqEncoder, make_block, rng_stream, softmax_policy


@dataclass
class RecState:
    user: int
    vec: np.ndarray
    tokens: list = field(default_factory=list)  # at most `window` retained


class RecommenderAgent:
    def __init__(
        self, n_users, n_items, d_emb, d_model, window, seed,
        heads=1, layers=1, hidden=(64,), critic_out=1,
    ):
        self.n_users = n_users
        self.n_items = n_items
        self.d_emb = d_emb
        self.d_model = d_model
        self.window = window
        self.emb_user = make_block(
            "rec/emb_user", (n_users, d_emb), rng_stream(seed, "init", "rec/emb_user")
        )
        self.emb_item = make_block(
            "rec/emb_item", (n_items, d_emb), rng_stream(seed, "init", "rec/emb_item")
        )
        self.proj = Linear("rec/proj", 2 * d_emb + 1, d_model, seed)
        self.encoder = SeqEncoder("rec/enc", d_model, window, seed, heads=heads, layers=layers)
        self.actor = Mlp("rec/actor", [d_model] + list(hidden) + [n_items], seed)
        self.critic = Mlp("rec/critic", [d_model] + list(hidden) + [critic_out], seed)

    def blocks(self):
        return (
            [self.emb_user, self.emb_item]
            + self.proj.blocks()
            + self.encoder.blocks()
            + self.actor.blocks()
            + self.critic.blocks()
        )

    def token_input(self, u, item, reward):
        e_u = self.emb_user.values[u]
        e_i = np.zeros(self.d_emb) if item is None else self.emb_item.values[item]
        return np.concatenate([e_u, e_i, [float(reward)]])

    def token(self, u, item, reward):
        t, _ = self.proj.forward(self.token_input(u, item, reward))
        return t


def init_episode(u, agent: RecommenderAgent) -> RecState:
    """Fresh episode state: encode a start token derived from the user."""
    start = agent.token(u, None, 0.0)
    vec, _ = agent.encoder.encode([start])
    return RecState(user=u, vec=vec, tokens=[start])


def track(state: RecState, item, reward, agent: RecommenderAgent) -> RecState:
    """Append the (item, reward) token and re-encode the retained window."""
    if not (0 <= item < agent.n_items):
        raise ValueError(f"item {item} out of range")
    tokens = (state.tokens + [agent.token(state.user, item, reward)])[-agent.window :]
    vec, _ = agent.encoder.encode(tokens)
    return RecState(user=state.user, vec=vec, tokens=tokens)


def recommend(state: RecState, agent: RecommenderAgent, mask, rng):
    """Sample an item from the actor's policy; mask excludes repeats."""
    logits, _ = agent.actor.forward(state.vec)
    item, logprob, _ = softmax_policy(logits, mask=mask, rng=rng)
    return item, logprob


def trajectory_forward(agent: RecommenderAgent, user, items, track_rewards):
    """Replay an episode with tapes: token and state caches plus both heads.

    `items` and `track_rewards` are the per-step recommended items and the
    rewards that entered the state-tracker tokens.
    """
    n = len(items)
    inputs = [agent.token_input(user, None, 0.0)]
    for j in range(n - 1):
        inputs.append(agent.token_input(user, items[j], track_rewards[j]))
    tokens, tok_tapes = [], []
    for x in inputs:
        t, tape = agent.proj.forward(x)
        tokens.append(t)
        tok_tapes.append(tape)
    states, enc_tapes = [], []
    for t in range(n):
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
        "user": user, "items": list(items), "tokens": tokens, "tok_tapes": tok_tapes,
        "states": states, "enc_tapes": enc_tapes, "logits": logits,
        "a_tapes": a_tapes, "values": values, "c_tapes": c_tapes,
    }


def trajectory_backward(agent: RecommenderAgent, fwd, dlogits, dvalues):
    """Backprop per-step head gradients down to the embedding tables."""
    n = len(fwd["states"])
    d = agent.d_emb
    dtokens = [np.zeros(agent.d_model) for _ in fwd["tokens"]]
    for t in range(n):
        dstate = agent.actor.backward(fwd["a_tapes"][t], dlogits[t])
        dstate = dstate + agent.critic.backward(fwd["c_tapes"][t], dvalues[t])
        lo, tape = fwd["enc_tapes"][t]
        for j, dt in enumerate(agent.encoder.backward(tape, dstate)):
            dtokens[lo + j] += dt
    user = fwd["user"]
    for j, (tape, dt) in enumerate(zip(fwd["tok_tapes"], dtokens)):
        dx = agent.proj.backward(tape, dt)
        agent.emb_user.grad[user] += dx[:d]
        if j > 0:  # token 0 carries the zero start-item slot
            agent.emb_item.grad[fwd["items"][j - 1]] += dx[d : 2 * d]
