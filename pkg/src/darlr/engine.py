"""Simulated environment, dual-agent training loop, and evaluation protocol.

Training interacts with the shaped reward matrix: each recommendation
step triggers a reference-user selection episode, writes the aggregated
estimate back into the matrix, derives dynamic penalties, and feeds the
composite reward to the recommender. Evaluation replays the same
termination protocol against the held-out ground-truth matrix.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import recommender as rec
from . import rewardmath as rm
from . import selector as sel
from . import worldmodel as wmod
from .nncore import (
    AdamConfig,
    adam_step,
    block_state,
    greedy_action,
    load_block_state,
    read_fragment,
    rng_stream,
    softmax,
    softmax_policy,
    write_fragment,
)

MAX_EPISODE_LEN = 30
CATEGORY_WINDOW = 4

VARIANTS = ("full", "r_static", "pu_static", "rhat", "rhat_rs", "rhat_rd")

# per-variant (lambda_s scale, lambda_d scale) applied to the selector's
# intrinsic reward; None means the variant runs no selection at all
_VARIANT_GAINS = {
    "full": (1.0, 1.0),
    "r_static": None,
    "pu_static": (1.0, 1.0),
    "rhat": (0.0, 0.0),
    "rhat_rs": (1.0, 0.0),
    "rhat_rd": (0.0, 1.0),
}


class ShapedRewardMatrix:
    """Mutable reward-estimate matrix with one level of write history."""

    def __init__(self, current, r_min, r_max):
        self.current = np.array(current, dtype=np.float64)
        self.previous = self.current.copy()
        self.write_count = np.zeros(self.current.shape, dtype=np.int64)
        self.r_min = float(r_min)
        self.r_max = float(r_max)

    @classmethod
    def from_prediction(cls, pm: wmod.PredictionMatrix, r_min, r_max):
        return cls(pm.mean, r_min, r_max)

    def write(self, u, i, value, alpha_shape=1.0):
        """Blend `value` into (u, i); the pre-write value becomes `previous`."""
        old = self.current[u, i]
        new = (1.0 - alpha_shape) * old + alpha_shape * value
        self.previous[u, i] = old
        self.current[u, i] = min(max(new, self.r_min), self.r_max)
        self.write_count[u, i] += 1


@dataclass
class RewardParts:
    r_hat: float
    r_prev: float
    p_u: float
    p_e: float
    mean_sim: float
    mean_div: float
    kind: str  # "dynamic" or "static" uncertainty


@dataclass
class Transition:
    state: np.ndarray
    action: int
    logprob: float
    reward: float
    value: float
    track_reward: float
    parts: RewardParts | None
    done: bool
    done_reason: str | None
    q_taken: float = 0.0


@dataclass
class Trajectory:
    user: int
    transitions: list = field(default_factory=list)
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def __len__(self):
        return len(self.transitions)


@dataclass
class EvalReport:
    r_tra: float
    r_tra_std: float
    r_each: float
    r_each_std: float
    length: float
    length_std: float
    mcd: float
    mcd_std: float
    reward_error: float
    n_episodes: int
    per_episode: dict = field(default_factory=dict, repr=False)


@dataclass
class TrainSettings:
    """Single-seed run configuration covering both agents and the loop."""

    variant: str = "full"
    gamma: float = 0.99
    k_sel: int = 10
    w_sel: int = 5
    w_rec: int = 5
    alpha_shape: float = 1.0
    lambda_s: float = 1.0
    lambda_d: float = 0.1
    lambda_u: float = 0.1
    lambda_e: float = 0.1
    uncertainty_eps: float = 1e-6
    candidate_pool: int = 100
    d_model: int = 32
    d_pref: int = 32
    d_emb: int = 16
    hidden: tuple = (64,)
    encoder_layers: int = 1
    encoder_heads: int = 1
    entropy_k: int = 1
    laplace_alpha: float = 1.0
    lr: float = 1e-3
    epochs: int = 20
    trajectories_per_epoch: int = 50
    eval_episodes: int = 50
    eval_every: int = 1
    eval_greedy: bool = False
    max_steps: int | None = None
    critic_mode: str = "v"
    seed: int = 0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'; valid: {', '.join(VARIANTS)}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        if self.k_sel < 1:
            raise ValueError("k_sel must be >= 1")
        for name in ("w_sel", "w_rec"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lambda_s", "lambda_d", "lambda_u", "lambda_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 < self.alpha_shape <= 1.0):
            raise ValueError("alpha_shape must be in (0, 1]")
        if self.critic_mode not in ("v", "qmax"):
            raise ValueError("critic_mode must be 'v' or 'qmax'")
        if self.entropy_k < 0:
            raise ValueError("entropy_k must be >= 0")
        if self.laplace_alpha <= 0:
            raise ValueError("laplace_alpha must be > 0")
        if self.lr <= 0 or self.epochs < 0 or self.trajectories_per_epoch < 1:
            raise ValueError("bad loop sizes")

    @property
    def coeffs(self):
        return rm.PenaltyCoeffs(self.lambda_u, self.lambda_e, self.lambda_s, self.lambda_d)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        s = cls(**kwargs)
        s.validate()
        return s


def config_hash(settings: TrainSettings) -> str:
    blob = json.dumps(settings.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def pool_width(settings: TrainSettings, n_users: int) -> int:
    return min(n_users - 1, settings.candidate_pool)


def build_agents(d: ds.Dataset, settings: TrainSettings):
    critic_out_rec = 1 if settings.critic_mode == "v" else d.n_items
    pw = pool_width(settings, d.n_users)
    critic_out_sel = 1 if settings.critic_mode == "v" else pw
    rec_agent = rec.RecommenderAgent(
        d.n_users, d.n_items, settings.d_emb, settings.d_model, settings.w_rec,
        settings.seed, heads=settings.encoder_heads, layers=settings.encoder_layers,
        hidden=settings.hidden, critic_out=critic_out_rec,
    )
    sel_agent = sel.SelectorAgent(
        d.n_items, settings.d_model, settings.d_pref, pw, settings.w_sel,
        settings.seed, heads=settings.encoder_heads, layers=settings.encoder_layers,
        hidden=settings.hidden, critic_out=critic_out_sel,
    )
    return rec_agent, sel_agent


# --- environment -------------------------------------------------------------

def env_step(u, item, step_index, mode, matrix, truth, recent_categories, item_categories):
    """One environment transition: reward source plus the quit rules.

    Terminates with `category_repeat` when the new item's category appears
    among the last four recommended items' categories, else `max_length`
    at the episode cap. `step_index` counts this transition (1-based).
    """
    if mode == "train":
        reward = float(matrix.current[u, item])
    elif mode == "eval":
        if truth is None:
            raise ValueError("evaluation requires a ground-truth matrix")
        reward = float(truth[u, item])
    else:
        raise ValueError(f"unknown mode '{mode}'")
    cat = int(item_categories[item])
    recent = list(recent_categories)[-CATEGORY_WINDOW:]
    if cat in recent:
        return reward, True, "category_repeat"
    if step_index >= MAX_EPISODE_LEN:
        return reward, True, "max_length"
    return reward, False, None


# --- rollout -----------------------------------------------------------------

class TrainContext:
    """Bundles everything a rollout needs; built once per training run."""

    def __init__(self, d, matrix, static_uncertainty, entropy, rec_agent, sel_agent, settings, rng):
        self.dataset = d
        self.matrix = matrix
        self.static_uncertainty = static_uncertainty
        self.entropy = entropy
        self.rec_agent = rec_agent
        self.sel_agent = sel_agent
        self.settings = settings
        self.rng = rng


def _critic_scalar(agent, state_vec, action, critic_mode):
    out, _ = agent.critic.forward(state_vec)
    if critic_mode == "v":
        return float(out[0]), 0.0
    return float(out.max()), float(out[action])


def rollout_recommendation_step(ctx: TrainContext, u, state, mask, recent_cats, step_index):
    """Recommend, select references, shape, penalize, step the environment.

    Returns (transition, selection_episode_or_None, next_state).
    """
    st = ctx.settings
    logits, _ = ctx.rec_agent.actor.forward(state.vec)
    item, logprob, _ = softmax_policy(logits, mask=mask, rng=ctx.rng)

    gains = _VARIANT_GAINS[st.variant]
    episode = None
    if gains is None:  # frozen-matrix variant: no selection, no write-back
        r_hat = float(ctx.matrix.current[u, item])
        parts = RewardParts(
            r_hat=r_hat, r_prev=r_hat,
            p_u=float(ctx.static_uncertainty[u, item]),
            p_e=ctx.entropy.penalty(recent_cats, item),
            mean_sim=0.0, mean_div=0.0, kind="static",
        )
    else:
        episode = sel.run_selection(
            u, item, state.vec, ctx.matrix, ctx.sel_agent, st.k_sel, st.coeffs, ctx.rng,
            lambda_s=st.lambda_s * gains[0], lambda_d=st.lambda_d * gains[1],
        )
        shaped = rm.shape_reward(episode.ref_rewards)
        ctx.matrix.write(u, item, shaped, st.alpha_shape)
        r_hat = float(ctx.matrix.current[u, item])
        r_prev = float(ctx.matrix.previous[u, item])
        mean_sim, mean_div = episode.mean_sim(), episode.mean_div()
        if st.variant == "pu_static":
            p_u = float(ctx.static_uncertainty[u, item])
            kind = "static"
        else:
            p_u = rm.dynamic_uncertainty(r_hat, r_prev, mean_sim, mean_div, st.uncertainty_eps)
            kind = "dynamic"
        parts = RewardParts(
            r_hat=r_hat, r_prev=r_prev, p_u=p_u,
            p_e=ctx.entropy.penalty(recent_cats, item),
            mean_sim=mean_sim, mean_div=mean_div, kind=kind,
        )

    reward = rm.recommender_reward(parts.r_hat, parts.p_u, parts.p_e, st.coeffs)
    base_r, done, reason = env_step(
        u, item, step_index, "train", ctx.matrix, None, recent_cats,
        ctx.dataset.items.primary_category,
    )
    value, q_taken = _critic_scalar(ctx.rec_agent, state.vec, item, st.critic_mode)
    transition = Transition(
        state=state.vec.copy(), action=item, logprob=logprob, reward=reward,
        value=value, track_reward=base_r, parts=parts, done=done,
        done_reason=reason, q_taken=q_taken,
    )
    next_state = rec.track(state, item, base_r, ctx.rec_agent)
    return transition, episode, next_state


def rollout_trajectory(ctx: TrainContext, u):
    """One full training episode for user u plus its selection episodes."""
    state = rec.init_episode(u, ctx.rec_agent)
    traj = Trajectory(user=u)
    episodes = []
    mask = np.ones(ctx.dataset.n_items, dtype=bool)
    recent_cats = []
    while True:
        step_index = len(traj) + 1
        tr, episode, state = rollout_recommendation_step(
            ctx, u, state, mask, recent_cats, step_index
        )
        traj.transitions.append(tr)
        if episode is not None:
            episodes.append(episode)
        mask[tr.action] = False
        recent_cats.append(int(ctx.dataset.items.primary_category[tr.action]))
        if tr.done or not mask.any():
            if not tr.done:  # catalog exhausted before the protocol cap
                tr.done = True
                tr.done_reason = "max_length"
            break
    return traj, episodes


# --- advantages and losses -----------------------------------------------

def discounted_returns(rewards, gamma):
    g = 0.0
    out = np.zeros(len(rewards))
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def compute_advantages(traj: Trajectory, gamma):
    """Monte-Carlo returns and advantages against the recorded critic values."""
    rewards = [tr.reward for tr in traj.transitions]
    values = np.array([tr.value for tr in traj.transitions])
    traj.returns = discounted_returns(rewards, gamma)
    traj.advantages = traj.returns - values
    return traj


def critic_targets(traj: Trajectory, gamma):
    """One-step TD targets, bootstrapping zero past terminal transitions."""
    n = len(traj)
    targets = np.zeros(n)
    for t, tr in enumerate(traj.transitions):
        if tr.done or t == n - 1:
            targets[t] = tr.reward
        else:
            targets[t] = tr.reward + gamma * traj.transitions[t + 1].value
    return targets


def actor_loss(traj: Trajectory) -> float:
    """Negative mean of logprob times advantage (advantages held constant)."""
    lp = np.array([tr.logprob for tr in traj.transitions])
    return float(-(lp * traj.advantages).mean())


def critic_loss(traj: Trajectory, gamma, critic_mode="v") -> float:
    """Mean squared TD error of the recorded critic predictions."""
    targets = critic_targets(traj, gamma)
    preds = np.array(
        [tr.q_taken if critic_mode == "qmax" else tr.value for tr in traj.transitions]
    )
    return float(((preds - targets) ** 2).mean())


def _head_grads(logits_list, actions, masks, advantages, preds_and_targets, critic_mode, scale):
    """Per-step dlogits/dvalues for the combined actor+critic objective."""
    dlogits, dvalues, aloss, closs = [], [], 0.0, 0.0
    n = len(actions)
    for t in range(n):
        z = np.where(masks[t], logits_list[t], -np.inf)
        probs = softmax(z)
        onehot = np.zeros_like(probs)
        onehot[actions[t]] = 1.0
        dlogits.append(-(advantages[t] * scale / n) * (onehot - probs))
        aloss += -np.log(probs[actions[t]]) * advantages[t] / n
        pred, target, width = preds_and_targets[t]
        err = pred - target
        closs += err * err / n
        if critic_mode == "v":
            dvalues.append(np.array([2.0 * err * scale / n]))
        else:
            dv = np.zeros(width)
            dv[actions[t]] = 2.0 * err * scale / n
            dvalues.append(dv)
    return dlogits, dvalues, float(aloss), float(closs)


def recommender_losses(ctx_agent, traj: Trajectory, gamma, critic_mode="v", accumulate=True, scale=1.0):
    """Replay the trajectory and (optionally) accumulate gradients.

    Returns (actor_loss, critic_loss) computed from the replayed forward
    pass; identical to the rollout numbers while parameters are unchanged.
    """
    items = [tr.action for tr in traj.transitions]
    track_rewards = [tr.track_reward for tr in traj.transitions]
    fwd = rec.trajectory_forward(ctx_agent, traj.user, items, track_rewards)
    targets = critic_targets(traj, gamma)
    masks = []
    m = np.ones(ctx_agent.n_items, dtype=bool)
    for it in items:
        masks.append(m.copy())
        m[it] = False
    pt = []
    for t in range(len(items)):
        v = fwd["values"][t]
        if critic_mode == "v":
            pt.append((float(v[0]), targets[t], 1))
        else:
            pt.append((float(v[items[t]]), targets[t], ctx_agent.n_items))
    dlogits, dvalues, aloss, closs = _head_grads(
        fwd["logits"], items, masks, traj.advantages, pt, critic_mode, scale
    )
    if accumulate:
        rec.trajectory_backward(ctx_agent, fwd, dlogits, dvalues)
    return aloss, closs


def selector_losses(agent, ep: sel.SelectionEpisode, gamma, critic_mode="v", accumulate=True, scale=1.0):
    """Replay a selection episode and (optionally) accumulate gradients.

    Advantages and TD targets come from the critic values recorded during
    the rollout; they are constants with respect to the replayed forward.
    """
    fwd = sel.episode_forward(agent, ep)
    recorded = np.asarray(ep.values)
    if ep.advantages is None:
        ep.returns = discounted_returns(ep.rewards, gamma)
        ep.advantages = ep.returns - recorded
    advantages = ep.advantages
    n = ep.length
    targets = np.zeros(n)
    for t in range(n):
        targets[t] = ep.rewards[t] + (gamma * recorded[t + 1] if t < n - 1 else 0.0)
    masks = []
    avail = np.ones(agent.pool_size, dtype=bool)
    avail[len(ep.pool) :] = False
    for slot in ep.slots:
        masks.append(avail.copy())
        avail[slot] = False
    pt = []
    for t in range(n):
        v = fwd["values"][t]
        if critic_mode == "v":
            pt.append((float(v[0]), targets[t], 1))
        else:
            pt.append((float(v[ep.slots[t]]), targets[t], agent.pool_size))
    dlogits, dvalues, aloss, closs = _head_grads(
        fwd["logits"], ep.slots, masks, advantages, pt, critic_mode, scale
    )
    if accumulate:
        sel.episode_backward(agent, fwd, dlogits, dvalues)
    return aloss, closs


def update_recommender(agent, traj, gamma, adam_cfg, critic_mode="v"):
    if traj.advantages is None:
        compute_advantages(traj, gamma)
    losses = recommender_losses(agent, traj, gamma, critic_mode, accumulate=True)
    adam_step(agent.blocks(), adam_cfg)
    return losses


def update_selector(agent, episodes, gamma, adam_cfg, critic_mode="v"):
    """One update over all selection episodes of a trajectory (batched)."""
    if not episodes:
        return 0.0, 0.0
    scale = 1.0 / len(episodes)
    aloss = closs = 0.0
    for ep in episodes:
        a, c = selector_losses(agent, ep, gamma, critic_mode, accumulate=True, scale=scale)
        aloss += a * scale
        closs += c * scale
    adam_step(agent.blocks(), adam_cfg)
    return aloss, closs


# --- evaluation --------------------------------------------------------------

def majority_category_ratio(categories) -> float:
    """Share of an episode taken by its most frequent item category."""
    counts = np.bincount(np.asarray(categories, dtype=np.int64))
    return float(counts.max() / len(categories))


def _eval_workers():
    raw = os.environ.get("DARLR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _eval_episode(agent, d: ds.Dataset, seed, idx, greedy):
    rng = rng_stream(seed, "eval-episode", idx)
    u = int(rng.integers(d.n_users))
    state = rec.init_episode(u, agent)
    mask = np.ones(d.n_items, dtype=bool)
    recent_cats = []
    cats = []
    total = 0.0
    visited = []
    step = 0
    while True:
        step += 1
        logits, _ = agent.actor.forward(state.vec)
        if greedy:
            item = greedy_action(logits, mask)
        else:
            item, _, _ = softmax_policy(logits, mask=mask, rng=rng)
        reward, done, _ = env_step(
            u, item, step, "eval", None, d.truth_matrix, recent_cats,
            d.items.primary_category,
        )
        total += reward
        visited.append((u, item))
        cats.append(int(d.items.primary_category[item]))
        recent_cats.append(cats[-1])
        mask[item] = False
        if done or not mask.any():
            break
        state = rec.track(state, item, reward, agent)
    return {
        "r_tra": total, "length": step, "r_each": total / step,
        "mcd": majority_category_ratio(cats), "visited": visited,
    }


def evaluate(agent, d: ds.Dataset, matrix, episodes, seed, greedy=False) -> EvalReport:
    """Roll out evaluation episodes against the ground-truth environment.

    Per-episode RNG streams derive from (seed, index), so results are
    identical no matter how many workers DARLR_THREADS allows.
    """
    if d.truth_matrix is None:
        raise ValueError("evaluation requires a ground-truth matrix")
    workers = _eval_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda i: _eval_episode(agent, d, seed, i, greedy), range(episodes))
            )
    else:
        results = [_eval_episode(agent, d, seed, i, greedy) for i in range(episodes)]

    arrays = {
        key: np.array([r[key] for r in results])
        for key in ("r_tra", "length", "r_each", "mcd")
    }
    visited = sorted({pair for r in results for pair in r["visited"]})
    if matrix is not None and visited:
        uu = np.array([p[0] for p in visited])
        ii = np.array([p[1] for p in visited])
        reward_error = float(np.abs(matrix.current[uu, ii] - d.truth_matrix[uu, ii]).mean())
    else:
        reward_error = float("nan")
    return EvalReport(
        r_tra=float(arrays["r_tra"].mean()), r_tra_std=float(arrays["r_tra"].std()),
        r_each=float(arrays["r_each"].mean()), r_each_std=float(arrays["r_each"].std()),
        length=float(arrays["length"].mean()), length_std=float(arrays["length"].std()),
        mcd=float(arrays["mcd"].mean()), mcd_std=float(arrays["mcd"].std()),
        reward_error=reward_error, n_episodes=episodes,
        per_episode=arrays,
    )


# --- training loop -----------------------------------------------------------

@dataclass
class TrainResult:
    settings: TrainSettings
    metrics_rows: list
    parts_log: list
    rec_agent: rec.RecommenderAgent
    sel_agent: sel.SelectorAgent
    matrix: ShapedRewardMatrix
    steps_total: int
    rng_state: dict
    dataset_hash: str


def train(d: ds.Dataset, wm: wmod.WorldModelEnsemble, settings: TrainSettings) -> TrainResult:
    """Run the dual-agent loop: epochs of trajectories with per-trajectory
    updates for both agents and periodic ground-truth evaluation."""
    settings.validate()
    if settings.eval_every > 0 and d.truth_matrix is None:
        raise ValueError("training evaluation requires a ground-truth matrix")
    pm = wmod.predict_matrix(wm)
    matrix = ShapedRewardMatrix.from_prediction(pm, d.r_min, d.r_max)
    stats = ds.behavior_stats(d, settings.entropy_k, settings.laplace_alpha)
    entropy = wmod.EntropyTable(stats)
    rec_agent, sel_agent = build_agents(d, settings)
    rng = rng_stream(settings.seed, "train")
    ctx = TrainContext(
        d, matrix, pm.static_uncertainty, entropy, rec_agent, sel_agent, settings, rng
    )
    adam_cfg = AdamConfig(lr=settings.lr)

    rows = []
    parts_log = []
    steps_total = 0
    budget_hit = False
    for epoch in range(settings.epochs):
        for ti in range(settings.trajectories_per_epoch):
            if settings.max_steps is not None and steps_total >= settings.max_steps:
                budget_hit = True
                break
            u = int(rng.integers(d.n_users))
            traj, episodes = rollout_trajectory(ctx, u)
            steps_total += len(traj)
            compute_advantages(traj, settings.gamma)
            update_recommender(rec_agent, traj, settings.gamma, adam_cfg, settings.critic_mode)
            update_selector(sel_agent, episodes, settings.gamma, adam_cfg, settings.critic_mode)
            for si, tr in enumerate(traj.transitions):
                parts_log.append(
                    {
                        "epoch": epoch, "trajectory": ti, "step": si, "user": u,
                        "item": tr.action, "reward": tr.reward, **dataclasses.asdict(tr.parts),
                    }
                )
        due = settings.eval_every > 0 and (
            (epoch + 1) % settings.eval_every == 0 or epoch == settings.epochs - 1 or budget_hit
        )
        if due:
            eval_seed = int(rng_stream(settings.seed, "eval-seed", epoch).integers(2**63))
            report = evaluate(
                rec_agent, d, matrix, settings.eval_episodes, eval_seed,
                greedy=settings.eval_greedy,
            )
            rows.append(
                {
                    "epoch": epoch, "steps": steps_total,
                    "R_tra": report.r_tra, "R_tra_std": report.r_tra_std,
                    "R_each": report.r_each, "Length": report.length,
                    "MCD": report.mcd, "reward_error": report.reward_error,
                }
            )
        if budget_hit:
            break
    return TrainResult(
        settings=settings, metrics_rows=rows, parts_log=parts_log,
        rec_agent=rec_agent, sel_agent=sel_agent, matrix=matrix,
        steps_total=steps_total, rng_state=rng.bit_generator.state,
        dataset_hash=ds.content_hash(d),
    )


METRICS_COLUMNS = ["epoch", "steps", "R_tra", "R_tra_std", "R_each", "Length", "MCD", "reward_error"]


def write_metrics_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in METRICS_COLUMNS:
                v = row[col]
                cells.append(str(v) if isinstance(v, int) else repr(float(v)))
            fh.write(",".join(cells) + "\n")


def read_metrics_csv(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = line.strip().split(",")
            row = {}
            for col, v in zip(header, vals):
                row[col] = int(v) if col in ("epoch", "steps") else float(v)
            rows.append(row)
    return rows


# --- checkpoint bundle ---------------------------------------------------

def save_bundle(dir_path, result: TrainResult, wm: wmod.WorldModelEnsemble):
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "settings": result.settings.to_dict(),
        "config_hash": config_hash(result.settings),
        "dataset_hash": result.dataset_hash,
        "steps_total": result.steps_total,
    }
    with open(out / "config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "recommender.frag", "w") as fh:
        write_fragment(fh, block_state(result.rec_agent.blocks()))
    with open(out / "selector.frag", "w") as fh:
        write_fragment(fh, block_state(result.sel_agent.blocks()))
    with open(out / "matrix.frag", "w") as fh:
        write_fragment(
            fh,
            {
                "matrix:current": result.matrix.current,
                "matrix:previous": result.matrix.previous,
                "matrix:write_count": result.matrix.write_count,
                "matrix:range": np.array([result.matrix.r_min, result.matrix.r_max]),
            },
        )
    with open(out / "rng.json", "w") as fh:
        json.dump(result.rng_state, fh, sort_keys=True)
        fh.write("\n")
    wmod.save_world_model(wm, out / "worldmodel.ckpt")


def load_bundle(dir_path, d: ds.Dataset):
    """Rebuild agents, matrix, and world model from a bundle directory."""
    root = Path(dir_path)
    with open(root / "config.json") as fh:
        config = json.load(fh)
    settings = TrainSettings.from_dict(config["settings"])
    if config["dataset_hash"] != ds.content_hash(d):
        raise ValueError("bundle was trained on a different dataset (hash mismatch)")
    rec_agent, sel_agent = build_agents(d, settings)
    with open(root / "recommender.frag") as fh:
        load_block_state(rec_agent.blocks(), read_fragment(fh))
    with open(root / "selector.frag") as fh:
        load_block_state(sel_agent.blocks(), read_fragment(fh))
    with open(root / "matrix.frag") as fh:
        state = read_fragment(fh)
    rng_range = state["matrix:range"]
    matrix = ShapedRewardMatrix(state["matrix:current"], rng_range[0], rng_range[1])
    matrix.previous = state["matrix:previous"].copy()
    matrix.write_count = state["matrix:write_count"].copy()
    wm = wmod.load_world_model(root / "worldmodel.ckpt", d)
    with open(root / "rng.json") as fh:
        rng_state = json.load(fh)
    return {
        "settings": settings, "rec_agent": rec_agent, "sel_agent": sel_agent,
        "matrix": matrix, "wm": wm, "rng_state": rng_state, "config": config,
    }
