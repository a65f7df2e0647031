"""DDPG with hand-written MLP forward/backward passes and SGD with momentum.

Networks work on row-major batches: ``x`` has shape ``(batch, features)``
and each layer computes ``x @ W + b``. The actor squashes its output with
``tanh`` and maps it onto ``[0, 1440]`` minutes; the critic is linear in its
last layer and sees the action divided by 1440.
"""

from __future__ import annotations

import io
import json
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import MINUTES_PER_DAY

CHECKPOINT_MAGIC = b"TWINSIM-CKPT"
CHECKPOINT_VERSION = 1


class BufferUnderfull(RuntimeError):
    pass


@dataclass
class Hyperparams:
    learning_rate: float = 0.01
    momentum: float = 0.9
    gamma: float = 0.8
    batch_size: int = 256
    epsilon_start: float = 0.9
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.6
    tau: float = 0.01
    buffer_capacity: int = 100_000
    hidden: tuple[int, ...] = (64, 64)
    reward_scale: float = 0.01  # 0 picks 1/|first reward| at the start of training
    exploration: str = "epsilon"
    gaussian_sigma_minutes: float = 30.0
    whatif_per_episode: int = 15

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.001 <= self.learning_rate <= 0.2:
            raise ValueError("learning_rate must lie in [0.001, 0.2]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0 <= eps <= 1:
                raise ValueError("epsilon must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if self.reward_scale < 0:
            raise ValueError("reward_scale must be >= 0 (0 means automatic)")
        if self.exploration not in ("epsilon", "gaussian"):
            raise ValueError("exploration must be 'epsilon' or 'gaussian'")

    def epsilon(self, episode: int, episodes: int) -> float:
        """Linear decay from start to end over the first fraction of episodes."""
        span = self.epsilon_decay_fraction * episodes
        if span <= 0:
            return self.epsilon_end
        frac = min(1.0, episode / span)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str  # "actor" or "linear"

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.output)

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors())


def init_mlp(sizes: list[int], output: str, rng: np.random.Generator) -> MlpParams:
    """Uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return MlpParams(weights, biases, output)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Returns the network output and the cache needed by :func:`mlp_backward`.

    Actor output is the raw ``tanh`` value in [-1, 1].
    """
    cache = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        cache.append((h, z))
        if i < last:
            h = np.maximum(z, 0.0)
        elif params.output == "actor":
            h = np.tanh(z)
        else:
            h = z
    return h, cache


def mlp_backward(params: MlpParams, cache: list, dy: np.ndarray):
    """Gradients of a scalar loss given ``dy = dL/d(output)``.

    Returns ``(grads, dx)`` where ``grads`` follows :meth:`MlpParams.tensors`.
    """
    grads: list[np.ndarray] = [None] * (2 * len(params.weights))
    last = len(params.weights) - 1
    delta = dy
    for i in range(last, -1, -1):
        h, z = cache[i]
        if i == last:
            if params.output == "actor":
                delta = delta * (1.0 - np.tanh(z) ** 2)
        else:
            delta = delta * (z > 0)
        grads[2 * i] = h.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
    return grads, delta


def _as_batch(x: np.ndarray, dim: int, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{name} has shape {x.shape}, expected (*, {dim})")
    return x, single


def actor_forward(params: MlpParams, state: np.ndarray) -> np.ndarray:
    """Transmission minutes in [0, 1440] for a normalised state (or batch)."""
    x, single = _as_batch(state, params.in_dim, "state")
    y, _ = mlp_forward(params, x)
    a = (y + 1.0) * (MINUTES_PER_DAY / 2.0)
    return a[0] if single else a


def critic_input(state: np.ndarray, action: np.ndarray) -> np.ndarray:
    return np.concatenate([state, action / MINUTES_PER_DAY], axis=-1)


def critic_forward(params: MlpParams, state: np.ndarray, action: np.ndarray):
    s, single = _as_batch(state, params.in_dim - np.asarray(action).shape[-1], "state")
    a = np.asarray(action, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[0] != s.shape[0]:
        raise ValueError("state and action batches differ in length")
    q, _ = mlp_forward(params, critic_input(s, a))
    q = q[:, 0]
    return float(q[0]) if single else q


def mse_loss(y: np.ndarray, q: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.mean((y - q) ** 2))


def critic_loss_and_grads(critic: MlpParams, s: np.ndarray, a: np.ndarray, y: np.ndarray):
    """Mean squared error between targets ``y`` and Q(s, a), with gradients."""
    q, cache = mlp_forward(critic, critic_input(s, a))
    q = q[:, 0]
    b = q.shape[0]
    dq = (-2.0 / b) * (y - q)
    grads, _ = mlp_backward(critic, cache, dq[:, None])
    return mse_loss(y, q), grads


def actor_objective_and_grads(actor: MlpParams, critic: MlpParams, s: np.ndarray):
    """Mean Q(s, actor(s)) and its gradient w.r.t. the actor parameters.

    The returned gradients are those of the *loss* ``-mean Q`` so that a
    descent step ascends Q; the critic is only differentiated, never changed.
    """
    y, a_cache = mlp_forward(actor, s)
    a = (y + 1.0) * (MINUTES_PER_DAY / 2.0)
    q, c_cache = mlp_forward(critic, critic_input(s, a))
    b = s.shape[0]
    _, dx = mlp_backward(critic, c_cache, np.full((b, 1), 1.0 / b))
    n_state = s.shape[1]
    # d(a/1440)/dy = 1/2
    dq_dy = dx[:, n_state:] * 0.5
    grads, _ = mlp_backward(actor, a_cache, -dq_dy)
    return float(q.mean()), grads


# ---------------------------------------------------------------------------
# Optimiser, target networks, replay buffer
# ---------------------------------------------------------------------------

@dataclass
class Sgdm:
    learning_rate: float
    momentum: float
    velocity: list[np.ndarray] = field(default_factory=list)

    def step(self, params: MlpParams, grads: list[np.ndarray]) -> None:
        tensors = params.tensors()
        if not self.velocity:
            self.velocity = [np.zeros_like(t) for t in tensors]
        for t, g, v in zip(tensors, grads, self.velocity):
            v *= self.momentum
            v -= self.learning_rate * g
            t += v


def soft_update(online: MlpParams, target: MlpParams, tau: float) -> MlpParams:
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    for src, dst in zip(online.tensors(), target.tensors()):
        if tau == 1.0:
            dst[...] = src
        else:
            dst *= 1.0 - tau
            dst += tau * src
    return target


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool = True


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.s[i], self.a[i], self.r[i] = t.s, t.a, t.r
        self.s_next[i], self.done[i] = t.s_next, t.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered(self) -> np.ndarray:
        """Indices of stored transitions from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size < batch_size:
            raise BufferUnderfull(f"buffer holds {self.size} < {batch_size} transitions")
        idx = rng.integers(0, self.size, batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx]


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

class Agent:
    def __init__(self, n_devices: int, hp: Hyperparams, seed: int = 0):
        self.n = n_devices
        self.hp = hp
        self.rng = np.random.default_rng(seed)
        sd = 2 * n_devices
        self.actor = init_mlp([sd, *hp.hidden, n_devices], "actor", self.rng)
        self.critic = init_mlp([sd + n_devices, *hp.hidden, 1], "linear", self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Sgdm(hp.learning_rate, hp.momentum)
        self.critic_opt = Sgdm(hp.learning_rate, hp.momentum)
        self.buffer = ReplayBuffer(hp.buffer_capacity, sd, n_devices)

    def select_action(self, state: np.ndarray, epsilon: float) -> np.ndarray:
        return select_action(self.actor, state, epsilon, self.rng, self.hp)

    def sample(self):
        return self.buffer.sample(self.hp.batch_size, self.rng)

    def learn(self) -> tuple[float, float]:
        batch = self.sample()
        loss = critic_update(self, batch, self.hp)
        objective = actor_update(self, batch, self.hp)
        soft_update(self.actor, self.actor_target, self.hp.tau)
        soft_update(self.critic, self.critic_target, self.hp.tau)
        return loss, objective

    # -- persistence ---------------------------------------------------
    def state_dict(self) -> tuple[dict, dict[str, np.ndarray]]:
        arrays: dict[str, np.ndarray] = {}
        for name, net in self._nets().items():
            for i, t in enumerate(net.tensors()):
                arrays[f"{name}.{i}"] = t
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            for i, v in enumerate(opt.velocity):
                arrays[f"{name}.{i}"] = v
        buf = self.buffer
        for key in ("s", "a", "r", "s_next", "done"):
            arrays[f"buffer.{key}"] = getattr(buf, key)[: buf.size]
        meta = {
            "n_devices": self.n,
            "hyperparams": asdict(self.hp),
            "rng": self.rng.bit_generator.state,
            "buffer": {"capacity": buf.capacity, "cursor": buf.cursor, "size": buf.size},
            "velocity": {"actor_opt": len(self.actor_opt.velocity),
                         "critic_opt": len(self.critic_opt.velocity)},
        }
        return meta, arrays

    def load_state_dict(self, meta: dict, arrays: dict[str, np.ndarray]) -> None:
        for name, net in self._nets().items():
            for i, t in enumerate(net.tensors()):
                t[...] = arrays[f"{name}.{i}"]
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            opt.velocity = [arrays[f"{name}.{i}"].copy()
                            for i in range(meta["velocity"][name])]
        buf = self.buffer
        size = meta["buffer"]["size"]
        for key in ("s", "a", "r", "s_next", "done"):
            getattr(buf, key)[:size] = arrays[f"buffer.{key}"]
        buf.cursor, buf.size = meta["buffer"]["cursor"], size
        self.rng.bit_generator.state = meta["rng"]

    def _nets(self) -> dict[str, MlpParams]:
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}


def select_action(actor: MlpParams, state: np.ndarray, epsilon: float,
                  rng: np.random.Generator, hp: Hyperparams | None = None) -> np.ndarray:
    """Epsilon-greedy: a uniform random schedule with probability ``epsilon``."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    n = actor.out_dim
    if hp is not None and hp.exploration == "gaussian":
        a = actor_forward(actor, state)
        if epsilon > 0:
            a = a + rng.normal(0.0, hp.gaussian_sigma_minutes, n)
        return np.clip(a, 0.0, MINUTES_PER_DAY)
    if rng.random() < epsilon:
        return rng.uniform(0.0, MINUTES_PER_DAY, n)
    return actor_forward(actor, state)


def critic_targets(agent: Agent, r, s_next, done, hp: Hyperparams) -> np.ndarray:
    y = np.asarray(r, dtype=np.float64) * hp.reward_scale
    live = ~np.asarray(done, dtype=bool)
    if live.any():
        a_next = actor_forward(agent.actor_target, s_next[live])
        y = y.copy()
        y[live] += hp.gamma * critic_forward(agent.critic_target, s_next[live], a_next)
    return y


def critic_update(agent: Agent, batch, hp: Hyperparams) -> float:
    s, a, r, s_next, done = batch
    y = critic_targets(agent, r, s_next, done, hp)
    loss, grads = critic_loss_and_grads(agent.critic, s, a, y)
    agent.critic_opt.step(agent.critic, grads)
    return loss


def actor_update(agent: Agent, batch, hp: Hyperparams) -> float:
    s = batch[0]
    objective, grads = actor_objective_and_grads(agent.actor, agent.critic, s)
    agent.actor_opt.step(agent.actor, grads)
    return objective


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Versioned binary dump: magic, JSON header, then one ``.npy`` blob per array.

    Output bytes depend only on the contents, so identical runs produce
    identical files.
    """
    header = dict(meta, version=CHECKPOINT_VERSION, arrays=sorted(arrays))
    head = json.dumps(header, sort_keys=True, default=_json_default).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for name in sorted(arrays):
            blob = io.BytesIO()
            np.save(blob, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            data = blob.getvalue()
            fh.write(len(data).to_bytes(8, "little"))
            fh.write(data)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\n") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        head = json.loads(fh.read(int.from_bytes(fh.read(8), "little")))
        if head.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {head.get('version')}")
        arrays = {}
        for name in head["arrays"]:
            size = int.from_bytes(fh.read(8), "little")
            arrays[name] = np.load(io.BytesIO(fh.read(size)), allow_pickle=False)
    return head, arrays


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def gradient_check(f: Callable[[], float], tensors: list[np.ndarray], analytic: list[np.ndarray],
                   step: float = 1e-5) -> float:
    """Largest per-tensor relative error ``|g_a - g_fd| / (|g_a| + |g_fd|)`` (2-norms)
    between analytic gradients and central finite differences of ``f``."""
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        fd = np.empty_like(t)
        flat, gflat = t.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        denom = np.linalg.norm(ga) + np.linalg.norm(fd)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(ga - fd) / denom))
    return worst


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

CURVE_FIELDS = ("episode", "r_total", "r_energy", "r_timeliness", "r_consecutive",
                "epsilon", "critic_loss", "p95_ms", "total_consumed_pct")


@dataclass
class CurvePoint:
    episode: int
    r_total: float
    r_energy: float
    r_timeliness: float
    r_consecutive: float
    epsilon: float
    critic_loss: float | None
    p95_ms: float
    total_consumed_pct: float


class Trainer:
    """Runs DDPG against a :class:`~twinsim.scheduler.SchedulingEnv`.

    Every episode is one real simulated day plus ``hp.whatif_per_episode``
    probe days started from what-if states; each stored transition is
    followed by one learning step once the buffer holds a full batch.
    """

    def __init__(self, env, hp: Hyperparams, episodes: int, seed: int = 0,
                 dt_min_schedule: tuple[float, float] | None = None):
        from .scheduler import whatif_generate

        self._whatif = whatif_generate
        self.env = env
        self.hp = hp
        self.episodes = episodes
        self.seed = seed
        self.dt_min_schedule = dt_min_schedule
        self.agent = Agent(env.n, hp, seed)
        self.episode = 0
        self.curve: list[CurvePoint] = []
        if not env.ready:
            env.reset()

    def dt_min(self) -> float | None:
        if self.dt_min_schedule is None:
            return None
        lo, hi = self.dt_min_schedule
        frac = self.episode / max(1, self.episodes - 1)
        return lo + frac * (hi - lo)

    def _store_and_learn(self, s, a, r, s_next, losses: list[float]) -> None:
        self.agent.buffer.add(Transition(s, a, r, s_next, True))
        if len(self.agent.buffer) >= self.hp.batch_size:
            loss, _ = self.agent.learn()
            losses.append(loss)

    def run_episode(self) -> CurvePoint:
        env, agent = self.env, self.agent
        eps = self.hp.epsilon(self.episode, self.episodes)
        dt_min = self.dt_min()
        losses: list[float] = []

        s = env.state().normalized()
        a = agent.select_action(s, eps)
        res = env.step(a, dt_min_minutes=dt_min)
        if self.hp.reward_scale == 0:
            scale = 1.0 / max(1.0, abs(res.reward.r_total))
            self.hp = self.agent.hp = replace(self.hp, reward_scale=scale)
        self._store_and_learn(s, a, res.reward.r_total, res.state.normalized(), losses)

        k = self.hp.whatif_per_episode
        if k > 0:
            for sw in self._whatif(self.seed * 1_000_003 + self.episode, k, env.n):
                s_w = sw.normalized()
                a_w = agent.select_action(s_w, eps)
                probe = env.probe(sw, a_w)
                self._store_and_learn(s_w, a_w, probe.reward.r_total,
                                      probe.state.normalized(), losses)

        point = CurvePoint(self.episode, res.reward.r_total, res.reward.r_energy,
                           res.reward.r_timeliness, res.reward.r_consecutive, eps,
                           float(np.mean(losses)) if losses else None, res.p95_ms,
                           env.total_consumed())
        self.curve.append(point)
        self.episode += 1
        return point

    def train(self, episodes: int | None = None) -> list[CurvePoint]:
        stop = self.episodes if episodes is None else min(self.episodes, self.episode + episodes)
        while self.episode < stop:
            self.run_episode()
        if not (self.agent.actor.all_finite() and self.agent.critic.all_finite()):
            raise FloatingPointError("non-finite network parameters after training")
        return self.curve

    # -- persistence ---------------------------------------------------
    def save(self, path) -> None:
        meta, arrays = self.agent.state_dict()
        meta["trainer"] = {"episode": self.episode, "episodes": self.episodes,
                           "seed": self.seed, "dt_min_schedule": self.dt_min_schedule,
                           "curve": [asdict(p) for p in self.curve]}
        meta["env"] = self.env.export_state()
        write_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path, env) -> Trainer:
        meta, arrays = read_checkpoint(path)
        hp = Hyperparams(**meta["hyperparams"])
        info = meta["trainer"]
        schedule = tuple(info["dt_min_schedule"]) if info["dt_min_schedule"] else None
        env.import_state(meta["env"])
        trainer = cls(env, hp, info["episodes"], info["seed"], schedule)
        trainer.agent.load_state_dict(meta, arrays)
        trainer.episode = info["episode"]
        trainer.curve = [CurvePoint(**p) for p in info["curve"]]
        return trainer


def train(env, hp: Hyperparams, episodes: int, seed: int = 0,
          dt_min_schedule: tuple[float, float] | None = None) -> tuple[Agent, list[CurvePoint]]:
    trainer = Trainer(env, hp, episodes, seed, dt_min_schedule)
    curve = trainer.train()
    return trainer.agent, curve


def evaluate(env, policy: Callable[[np.ndarray], np.ndarray], days: int) -> list:
    """Run ``policy`` (normalised state -> minutes) for ``days`` days."""
    out = []
    for _ in range(days):
        out.append(env.step(policy(env.state().normalized())))
    return out
