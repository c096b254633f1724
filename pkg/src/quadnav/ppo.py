"""Clipped-surrogate policy optimization with generalized advantage
estimation, a Gaussian MLP policy/value pair, deterministic checkpoints,
and the episode-collection loop over parallel environment instances.

All torch work runs in float64 on a single thread: gradient checks pass at
tight tolerances and repeated runs are bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .env import obs_layout, obs_layout_hash

torch.set_num_threads(1)

DTYPE = torch.float64


class NonFiniteLossError(RuntimeError):
    """A PPO update produced a non-finite loss; the update is aborted."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or layout-incompatible checkpoint file."""


@dataclass
class PpoConfig:
    n_steps: int = 2048
    batch_size: int = 128
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    n_epochs: int = 10
    clip_range: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_timesteps: int = 3_000_000
    n_envs: int = 16
    eval_every_updates: int = 4
    eval_episodes: int = 20

    def __post_init__(self):
        if (self.n_steps * self.n_envs) % self.batch_size != 0:
            raise ValueError("n_steps * n_envs must be divisible by batch_size")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gamma in (0, 1], gae_lambda in [0, 1]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "PpoConfig":
        return cls(**d)


@dataclass
class PolicySpec:
    input_dim: int
    hidden: tuple = (256, 256)
    action_dim: int = 4

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "action_dim": self.action_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        return cls(input_dim=int(d["input_dim"]), hidden=tuple(d["hidden"]),
                   action_dim=int(d["action_dim"]))


def _mlp(sizes, out_dim, out_gain):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lin = nn.Linear(a, b, dtype=DTYPE)
        nn.init.orthogonal_(lin.weight, gain=math.sqrt(2))
        nn.init.zeros_(lin.bias)
        layers += [lin, nn.Tanh()]
    out = nn.Linear(sizes[-1], out_dim, dtype=DTYPE)
    nn.init.orthogonal_(out.weight, gain=out_gain)
    nn.init.zeros_(out.bias)
    layers.append(out)
    return nn.Sequential(*layers)


class PolicyValueNet(nn.Module):
    """Gaussian policy with a state-independent log-std head plus a separate
    value trunk of the same shape."""

    def __init__(self, spec: PolicySpec):
        super().__init__()
        self.spec = spec
        sizes = (spec.input_dim, *spec.hidden)
        self.actor = _mlp(sizes, spec.action_dim, 0.01)
        self.critic = _mlp(sizes, 1, 1.0)
        self.log_std = nn.Parameter(torch.zeros(spec.action_dim, dtype=DTYPE))

    def forward(self, obs: torch.Tensor):
        mean = self.actor(obs)
        value = self.critic(obs).squeeze(-1)
        return mean, self.log_std.expand_as(mean), value

    def evaluate_actions(self, obs: torch.Tensor, actions: torch.Tensor):
        mean, log_std, value = self(obs)
        logp = gaussian_logp(mean, log_std, actions)
        ent = gaussian_entropy(log_std).sum(-1)
        return logp, ent, value


def gaussian_logp(mean, log_std, x):
    var = torch.exp(2 * log_std)
    return (-0.5 * ((x - mean) ** 2 / var + 2 * log_std + math.log(2 * math.pi))).sum(-1)


def gaussian_entropy(log_std):
    """Per-dimension closed form 0.5*log(2*pi*e*sigma^2)."""
    return 0.5 * (1.0 + math.log(2 * math.pi)) + log_std


class RunningNorm:
    """Running mean/variance of observations; applied before the networks and
    frozen into checkpoints."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=float).reshape(-1, len(self.mean))
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        b_n = batch.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_n
        self.mean = self.mean + delta * b_n / tot
        m_a = self.var * self.count
        m_b = b_var * b_n
        self.var = (m_a + m_b + delta ** 2 * self.count * b_n / tot) / tot
        self.count = tot

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)


def compute_gae(rewards, values, dones, last_values, gamma, lam):
    """Advantages and returns from (T, N) reward/value/done arrays plus the
    bootstrap values of the observations after the last step. ``dones[t]``
    marks episodes that ended at step t, cutting both bootstrap and decay."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    last_values = np.asarray(last_values, dtype=float)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values, dones must share a (T, N) shape")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(last_values)
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        v_next = values[t + 1] if t < T - 1 else last_values
        delta = rewards[t] + gamma * v_next * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std over the whole update batch."""
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / max(adv.std(), 1e-8)


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    @classmethod
    def allocate(cls, n_steps: int, n_envs: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((n_steps, n_envs, obs_dim)),
            actions=np.zeros((n_steps, n_envs, act_dim)),
            log_probs=np.zeros((n_steps, n_envs)),
            values=np.zeros((n_steps, n_envs)),
            rewards=np.zeros((n_steps, n_envs)),
            dones=np.zeros((n_steps, n_envs)),
        )

    def finalize(self, last_values, gamma, lam) -> None:
        self.advantages, self.returns = compute_gae(
            self.rewards, self.values, self.dones, last_values, gamma, lam)


def policy_step(policy: PolicyValueNet, obs_batch: np.ndarray, gen: torch.Generator):
    """Sample stochastic actions for a batch of (already normalized)
    observations; returns actions, log-probs, values as numpy."""
    with torch.no_grad():
        t_obs = torch.as_tensor(obs_batch, dtype=DTYPE)
        mean, log_std, value = policy(t_obs)
        noise = torch.randn(mean.shape, generator=gen, dtype=DTYPE)
        actions = mean + noise * torch.exp(log_std)
        logp = gaussian_logp(mean, log_std, actions)
    return actions.numpy(), logp.numpy(), value.numpy()


def policy_values(policy: PolicyValueNet, obs_batch: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        _, _, value = policy(torch.as_tensor(obs_batch, dtype=DTYPE))
    return value.numpy()


def deterministic_action(policy: PolicyValueNet, obs_norm: RunningNorm, obs: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        z = obs_norm.normalize(obs).reshape(1, -1)
        mean, _, _ = policy(torch.as_tensor(z, dtype=DTYPE))
    return mean.numpy()[0]


class RolloutCollector:
    """Steps a set of environments with stochastic actions, auto-resetting
    finished episodes, and keeps per-env return accumulators across calls."""

    def __init__(self, envs, policy: PolicyValueNet, obs_norm: RunningNorm,
                 gen: torch.Generator, update_norm: bool = True):
        self.envs = envs
        self.policy = policy
        self.obs_norm = obs_norm
        self.gen = gen
        self.update_norm = update_norm
        self.cur_obs = np.stack([env.reset(None) for env in envs]).astype(float)
        self.ep_return = np.zeros(len(envs))
        self.ep_len = np.zeros(len(envs), dtype=int)

    def collect(self, n_steps: int, episode_stats: list | None = None):
        """Fill a buffer with ``n_steps`` transitions per environment; returns
        it together with bootstrap values for the observations after the last
        step. Completed episodes land in ``episode_stats`` as
        (return, length, finished) tuples."""
        policy, envs = self.policy, self.envs
        spec = policy.spec
        buf = RolloutBuffer.allocate(n_steps, len(envs), spec.input_dim, spec.action_dim)
        for t in range(n_steps):
            if self.update_norm:
                self.obs_norm.update(self.cur_obs)
            z = self.obs_norm.normalize(self.cur_obs)
            actions, logp, values = policy_step(policy, z, self.gen)
            buf.obs[t] = z
            buf.actions[t] = actions
            buf.log_probs[t] = logp
            buf.values[t] = values
            for i, env in enumerate(envs):
                try:
                    res = env.step(actions[i])
                except Exception as e:
                    raise RuntimeError(f"environment {i} failed during rollout: {e}") from e
                buf.rewards[t, i] = res.reward
                done = res.terminated or res.truncated
                buf.dones[t, i] = float(done)
                self.ep_return[i] += res.reward
                self.ep_len[i] += 1
                if done:
                    if episode_stats is not None:
                        episode_stats.append((float(self.ep_return[i]), int(self.ep_len[i]),
                                              bool(getattr(env, "finished", False))))
                    self.ep_return[i] = 0.0
                    self.ep_len[i] = 0
                    self.cur_obs[i] = env.reset(None)
                else:
                    self.cur_obs[i] = res.obs
        last_values = policy_values(policy, self.obs_norm.normalize(self.cur_obs))
        return buf, last_values


def collect_rollouts(envs, policy: PolicyValueNet, obs_norm: RunningNorm, n_steps: int,
                     gen: torch.Generator, update_norm: bool = True,
                     episode_stats: list | None = None) -> RolloutBuffer:
    """One-shot collection from freshly attached environments."""
    collector = RolloutCollector(envs, policy, obs_norm, gen, update_norm)
    buf, last_values = collector.collect(n_steps, episode_stats)
    buf._last_values = last_values
    return buf


def ppo_update(buf: RolloutBuffer, policy: PolicyValueNet, optimizer: torch.optim.Optimizer,
               config: PpoConfig, gen: torch.Generator) -> dict:
    """Epochs of shuffled minibatch ascent on the clipped surrogate minus the
    value error; advantages are normalized once over the whole buffer."""
    if buf.advantages is None:
        raise ValueError("buffer not finalized; call finalize() first")
    obs = torch.as_tensor(buf.obs.reshape(-1, buf.obs.shape[-1]), dtype=DTYPE)
    actions = torch.as_tensor(buf.actions.reshape(-1, buf.actions.shape[-1]), dtype=DTYPE)
    old_logp = torch.as_tensor(buf.log_probs.reshape(-1), dtype=DTYPE)
    returns = torch.as_tensor(buf.returns.reshape(-1), dtype=DTYPE)
    adv = torch.as_tensor(normalize_advantages(buf.advantages.reshape(-1)), dtype=DTYPE)

    total = obs.shape[0]
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "clip_frac": 0.0, "approx_kl": 0.0}
    n_batches = 0
    eps = config.clip_range
    for _ in range(config.n_epochs):
        perm = torch.randperm(total, generator=gen)
        for start in range(0, total, config.batch_size):
            idx = perm[start:start + config.batch_size]
            logp, entropy, value = policy.evaluate_actions(obs[idx], actions[idx])
            ratio = torch.exp(logp - old_logp[idx])
            a = adv[idx]
            surr = torch.min(ratio * a, torch.clamp(ratio, 1 - eps, 1 + eps) * a)
            policy_loss = -surr.mean()
            value_loss = ((value - returns[idx]) ** 2).mean()
            ent = entropy.mean()
            loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * ent
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss (policy={policy_loss.item()!r}, "
                    f"value={value_loss.item()!r})")
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            optimizer.step()
            with torch.no_grad():
                stats["policy_loss"] += policy_loss.item()
                stats["value_loss"] += value_loss.item()
                stats["entropy"] += ent.item()
                stats["clip_frac"] += ((ratio - 1.0).abs() > eps).double().mean().item()
                stats["approx_kl"] += (old_logp[idx] - logp).mean().item()
            n_batches += 1
    return {k: v / n_batches for k, v in stats.items()}


def evaluate(policy: PolicyValueNet, obs_norm: RunningNorm, env, episodes: int,
             seed_base: int = 10_000) -> dict:
    """Deterministic-action evaluation over seeded episodes."""
    successes = 0
    returns = []
    lengths = []
    for k in range(episodes):
        obs = env.reset(seed=seed_base + k)
        total = 0.0
        steps = 0
        while True:
            action = deterministic_action(policy, obs_norm, obs)
            res = env.step(action)
            total += res.reward
            steps += 1
            obs = res.obs
            if res.terminated or res.truncated:
                break
        successes += bool(env.finished)
        returns.append(total)
        lengths.append(steps)
    return {
        "success_rate": successes / episodes,
        "mean_return": float(np.mean(returns)),
        "mean_episode_time": float(np.mean(lengths)) * env.config.dt,
    }


# ----------------------------------------------------------------- checkpoint

CHECKPOINT_VERSION = 1
_MAGIC = b"QNCKPT"


def save_checkpoint(path, policy: PolicyValueNet, obs_norm: RunningNorm, tag: str,
                    env_config: dict | None = None, ppo_config: dict | None = None) -> None:
    """Deterministic binary: a JSON header (sorted keys) plus raw float64
    array bytes. Saving the same policy twice yields identical files."""
    arrays = []
    blobs = []
    for name, tensor in sorted(policy.state_dict().items()):
        a = tensor.detach().numpy().astype("<f8")
        arrays.append([name, list(a.shape)])
        blobs.append(a.tobytes(order="C"))
    for name, a in (("norm_mean", obs_norm.mean), ("norm_var", obs_norm.var)):
        a = np.asarray(a, dtype="<f8")
        arrays.append([name, list(a.shape)])
        blobs.append(a.tobytes(order="C"))
    header = {
        "format_version": CHECKPOINT_VERSION,
        "tag": tag,
        "obs_layout": obs_layout(),
        "obs_layout_hash": obs_layout_hash(),
        "policy_spec": policy.spec.to_dict(),
        "norm_count": float(obs_norm.count),
        "norm_clip": float(obs_norm.clip),
        "env_config": env_config,
        "ppo_config": ppo_config,
        "arrays": arrays,
    }
    payload = json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(blobs)
    with open(path, "wb") as f:
        f.write(_MAGIC + b"\n" + payload)


@dataclass
class Checkpoint:
    policy: PolicyValueNet
    obs_norm: RunningNorm
    tag: str
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not raw.startswith(_MAGIC + b"\n"):
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        head, blob = raw[len(_MAGIC) + 1:].split(b"\n", 1)
        meta = json.loads(head)
    except (ValueError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {meta.get('format_version')}")
    if meta["obs_layout"] != obs_layout():
        raise CheckpointError(
            f"{path}: observation layout mismatch: checkpoint has "
            f"{meta['obs_layout']!r}, library expects {obs_layout()!r}")
    spec = PolicySpec.from_dict(meta["policy_spec"])
    policy = PolicyValueNet(spec)
    state = {}
    offset = 0
    tensors = {}
    for name, shape in meta["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated array data at {name}")
        a = np.frombuffer(blob[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        tensors[name] = a
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after arrays")
    norm = RunningNorm(spec.input_dim, clip=meta.get("norm_clip", 10.0))
    norm.mean = tensors.pop("norm_mean")
    norm.var = tensors.pop("norm_var")
    norm.count = float(meta["norm_count"])
    for name, a in tensors.items():
        state[name] = torch.as_tensor(a, dtype=DTYPE)
    try:
        policy.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: weight shapes do not match spec: {e}") from e
    return Checkpoint(policy=policy, obs_norm=norm, tag=meta.get("tag", ""), meta=meta)


# ---------------------------------------------------------------------- train

METRICS_COLUMNS = ("update", "timesteps", "mean_return", "success_rate",
                   "clip_frac", "approx_kl")


def env_config_for_tag(tag: str, base=None):
    from .env import EnvConfig
    base = base.to_dict() if base is not None else EnvConfig().to_dict()
    if tag == "free":
        base.update(obstacle_count_min=0, obstacle_count_max=0)
    elif tag == "obstacle":
        base.update(obstacle_count_min=1, obstacle_count_max=6)
    else:
        raise ValueError(f"unknown policy tag {tag!r}; expected 'free' or 'obstacle'")
    from .env import EnvConfig as EC
    return EC.from_dict(base)


def train(tag: str, config: PpoConfig, out_dir, seed: int = 0, env_config=None,
          params=None, log=print) -> dict:
    """Alternate rollout collection and updates until the step budget runs
    out, evaluating deterministically every few updates and keeping the
    best-by-success checkpoint. Returns paths and final metrics."""
    from .env import QuadEnv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)

    ecfg = env_config_for_tag(tag, env_config)
    envs = [QuadEnv(ecfg, params=params, seed=seed * 100_000 + 17 * i)
            for i in range(config.n_envs)]
    eval_env = QuadEnv(ecfg, params=params)

    from .env import obs_dim
    spec = PolicySpec(input_dim=obs_dim())
    policy = PolicyValueNet(spec)
    obs_norm = RunningNorm(spec.input_dim)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)

    n_updates = max(1, config.total_timesteps // (config.n_steps * config.n_envs))
    metrics_path = out_dir / f"metrics_{tag}.csv"
    best_path = out_dir / f"{tag}_best.ckpt"
    last_path = out_dir / f"{tag}.ckpt"
    best_key = (-1.0, -np.inf)
    collector = RolloutCollector(envs, policy, obs_norm, gen)
    episode_stats: list = []
    timesteps = 0

    with open(metrics_path, "w") as metrics_file:
        metrics_file.write(",".join(METRICS_COLUMNS) + "\n")
        for update in range(1, n_updates + 1):
            buf, last_values = collector.collect(config.n_steps, episode_stats)
            buf.finalize(last_values, config.gamma, config.gae_lambda)
            try:
                stats = ppo_update(buf, policy, optimizer, config, gen)
            except NonFiniteLossError as e:
                diag = out_dir / f"{tag}_diagnostic.json"
                diag.write_text(json.dumps({
                    "update": update, "timesteps": timesteps, "error": str(e),
                    "recent_episodes": episode_stats[-20:],
                }, indent=2))
                raise
            timesteps += config.n_steps * config.n_envs
            recent = episode_stats[-100:]
            mean_return = float(np.mean([r for r, _, _ in recent])) if recent else float("nan")
            if not np.isfinite(np.array([stats["policy_loss"], stats["value_loss"]])).all():
                raise NonFiniteLossError("non-finite update statistics")

            row = {"update": update, "timesteps": timesteps, "mean_return": mean_return,
                   "success_rate": float("nan"), "clip_frac": stats["clip_frac"],
                   "approx_kl": stats["approx_kl"]}
            if update % config.eval_every_updates == 0 or update == n_updates:
                ev = evaluate(policy, obs_norm, eval_env, config.eval_episodes)
                row["success_rate"] = ev["success_rate"]
                key = (ev["success_rate"], ev["mean_return"])
                if key > best_key:
                    best_key = key
                    save_checkpoint(best_path, policy, obs_norm, tag,
                                    env_config=ecfg.to_dict(), ppo_config=config.to_dict())
                log(f"[{tag}] update {update}/{n_updates} steps {timesteps} "
                    f"return {mean_return:.1f} success {ev['success_rate']:.2f} "
                    f"ep_time {ev['mean_episode_time']:.2f}s kl {stats['approx_kl']:.4f}")
            metrics_file.write(",".join(
                repr(row[c]) if isinstance(row[c], float) else str(row[c])
                for c in METRICS_COLUMNS) + "\n")
            metrics_file.flush()

    save_checkpoint(last_path, policy, obs_norm, tag,
                    env_config=ecfg.to_dict(), ppo_config=config.to_dict())
    if not best_path.exists():
        save_checkpoint(best_path, policy, obs_norm, tag,
                        env_config=ecfg.to_dict(), ppo_config=config.to_dict())
    return {"best": str(best_path), "last": str(last_path),
            "metrics": str(metrics_path), "updates": n_updates,
            "timesteps": timesteps, "best_success": best_key[0]}
