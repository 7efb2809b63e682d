"""Server and client state machines for federated averaging with growth.

One communication round is: sample clients, maybe grow the global model (the
server grows before dispatch and always sends full-depth weights; clients never
grow on their own), seal and send weights to every sampled client, run local
updates, collect and average the returned weights in client-id order, overwrite
the global model, evaluate on the held-out set, and append a ledger row.

Determinism: client sampling uses a per-round generator derived from
(seed, round); each client's local batch order is a pure function of
(seed, shard content, local epoch). Clients share nothing mutable, so running
them concurrently would be legal, but execution here is sequential and results
are defined to be identical either way.

Optimizer state stays on the clients: only raw weights travel. Moments for
blocks added by growth start at zero (optionally all moments reset at growth).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Sample, collate, generate, holdout, shard_fingerprint, split
from .errors import ConfigError, ContractError, ProtocolError, VerificationError
from .model import DynamicTransformer, ModelConfig, batch_loss
from .optim import AdamState, adam_step, sgd_step, zero_grads
from .rng import generator, subseed
from .tensor import backward, no_grad
from .wire import (
    CODECS,
    average_payloads,
    load_payload,
    parse_payload,
    seal,
    serialize_model,
    unseal,
)

MODE_FEDT = "fedt"
MODE_FEDDT = "feddt"
MODES = (MODE_FEDT, MODE_FEDDT)

OPTIMIZERS = ("adam", "sgd")

STAGING_TRIGGER = "trigger"
STAGING_UNIFORM = "uniform"
STAGINGS = (STAGING_TRIGGER, STAGING_UNIFORM)


# ---------------------------------------------------------------------------
# growth schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthSchedule:
    """Round count, growth partition, and the global-step growth thresholds."""

    rounds: int
    parts: int
    target_layers: int
    local_steps: int
    growth_steps: tuple[int, ...]

    def __post_init__(self):
        if self.rounds < 1 or self.parts < 1 or self.target_layers < 1 or self.local_steps < 0:
            raise ConfigError("schedule fields must be positive (local_steps may be zero)")
        if self.target_layers % self.parts != 0:
            raise ConfigError(
                f"schedule target_layers={self.target_layers} not divisible by parts={self.parts}"
            )
        last = 0
        for k in self.growth_steps:
            if k <= last:
                raise ConfigError(f"growth steps must be strictly increasing, got {self.growth_steps}")
            if self.local_steps == 0 or k % self.local_steps != 0:
                raise ConfigError(
                    f"growth step {k} is not a positive multiple of local_steps={self.local_steps}"
                )
            last = k

    @property
    def layers_per_growth(self) -> int:
        return self.target_layers // self.parts

    @property
    def initial_depth(self) -> int:
        return self.layers_per_growth


def default_growth_steps(
    rounds: int, parts: int, local_steps: int, staging: str = STAGING_TRIGGER
) -> tuple[int, ...]:
    """The parts-1 growth thresholds.

    ``trigger`` places them at global steps j*(rounds/parts)*local_steps, so
    growth fires the round its threshold is reached and each new depth arrives
    one round before a stage boundary. ``uniform`` shifts them one round later,
    holding every depth for exactly rounds/parts rounds; that staging is the
    one the closed-form stage-sum cost reproduces exactly.
    """
    if parts == 1:
        return ()
    if rounds % parts != 0:
        raise ConfigError(f"schedule rounds={rounds} not divisible by parts={parts}")
    if staging not in STAGINGS:
        raise ConfigError(f"unknown staging {staging!r}; expected one of {STAGINGS}")
    span = rounds // parts
    if staging == STAGING_TRIGGER:
        return tuple(j * span * local_steps for j in range(1, parts))
    return tuple((j * span + 1) * local_steps for j in range(1, parts))


def make_schedule(
    rounds: int,
    parts: int,
    target_layers: int,
    local_steps: int,
    staging: str = STAGING_TRIGGER,
    growth_steps: Optional[tuple[int, ...]] = None,
) -> GrowthSchedule:
    if growth_steps is None:
        growth_steps = default_growth_steps(rounds, parts, local_steps, staging)
    return GrowthSchedule(rounds, parts, target_layers, local_steps, tuple(growth_steps))


def maybe_grow(schedule: GrowthSchedule, t: int, layers: int) -> int:
    """Depth for round t given the depth after round t-1.

    Computes the global step k = t * local_steps and grows iff k is a
    threshold and the cap is not reached. Applied at the start of the round,
    before dispatch.
    """
    if not 1 <= t <= schedule.rounds:
        raise ContractError(f"round {t} outside 1..{schedule.rounds}")
    k = t * schedule.local_steps
    if k in schedule.growth_steps and layers < schedule.target_layers:
        return layers + schedule.layers_per_growth
    return layers


def depth_trace(schedule: GrowthSchedule) -> list[int]:
    """Layer count of every round, 1..rounds."""
    layers = schedule.initial_depth
    out = []
    for t in range(1, schedule.rounds + 1):
        layers = maybe_grow(schedule, t, layers)
        out.append(layers)
    return out


# ---------------------------------------------------------------------------
# federation config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FederatedConfig:
    num_clients: int
    sampled_per_round: int  # M
    batch_size: int
    lr: float
    seed: int
    codec: str
    schedule: GrowthSchedule
    mode: str
    optimizer: str = "adam"
    reset_moments_on_growth: bool = False

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if not 1 <= self.sampled_per_round <= self.num_clients:
            raise ConfigError(
                f"sampled_per_round={self.sampled_per_round} outside 1..{self.num_clients}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.codec not in CODECS:
            raise ConfigError(f"unknown codec {self.codec!r}; expected one of {CODECS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")


def effective_schedule(config: FederatedConfig) -> GrowthSchedule:
    """FedT trains at full depth with no growth; FedDT uses the configured schedule."""
    s = config.schedule
    if config.mode == MODE_FEDT:
        return GrowthSchedule(s.rounds, 1, s.target_layers, s.local_steps, ())
    return s


# ---------------------------------------------------------------------------
# clients
# ---------------------------------------------------------------------------


def sample_clients(rng: np.random.Generator, num_clients: int, m: int) -> np.ndarray:
    """Uniform sample without replacement, sorted ascending for a fixed
    aggregation order."""
    if not 1 <= m <= num_clients:
        raise ConfigError(f"cannot sample {m} of {num_clients} clients")
    return np.sort(rng.choice(num_clients, size=m, replace=False))


@dataclass
class ClientResult:
    payload: bytes
    mean_train_loss: float


class ClientState:
    """A persistent client: shard, local model, optimizer moments, data cursor.

    The local batch order is seeded from (run seed, shard content, epoch), so
    two clients holding identical shards walk them in the same order.
    """

    def __init__(
        self,
        cid: int,
        samples: list[Sample],
        model_config: ModelConfig,
        run_seed: int,
        lr: float,
        optimizer: str = "adam",
        reset_moments_on_growth: bool = False,
    ):
        if not samples:
            raise ConfigError(f"client {cid} received an empty shard")
        self.cid = cid
        self.samples = samples
        self.fingerprint = shard_fingerprint(samples)
        self.model_config = model_config
        self.run_seed = run_seed
        self.adam = AdamState(lr=lr)
        self.optimizer = optimizer
        self.reset_moments_on_growth = reset_moments_on_growth
        self.model: Optional[DynamicTransformer] = None
        self.epoch = 0
        self.cursor = 0
        self.order: Optional[np.ndarray] = None

    def next_batch(self, batch_size: int) -> list[Sample]:
        """Next batch_size samples, cyclic, reshuffled each local epoch."""
        picked: list[Sample] = []
        while len(picked) < batch_size:
            if self.order is None or self.cursor >= len(self.order):
                seed = subseed(self.run_seed, "data-order", self.fingerprint, self.epoch)
                self.order = generator(seed).permutation(len(self.samples))
                self.cursor = 0
                self.epoch += 1
            take = min(batch_size - len(picked), len(self.order) - self.cursor)
            picked.extend(self.samples[int(i)] for i in self.order[self.cursor : self.cursor + take])
            self.cursor += take
        return picked


def client_update(
    state: ClientState,
    sealed_payload: bytes,
    l_t: int,
    local_steps: int,
    lr: float,
    batch_size: int,
    codec: str,
    codec_key: int,
) -> ClientResult:
    """Run local_steps optimizer steps from the received weights.

    The payload must decode to exactly l_t layers; the client rebuilds (grows)
    its local model to that depth when the server grew. Returns the sealed
    weights-only payload and the mean per-step training loss (NaN when
    local_steps is zero).
    """
    raw = unseal(sealed_payload, codec, codec_key)
    payload = parse_payload(raw)
    if payload.depth != l_t:
        raise ProtocolError(
            f"client {state.cid}: payload has {payload.depth} layers, round expects {l_t}"
        )
    if state.model is None:
        state.model = DynamicTransformer(
            state.model_config, subseed(state.run_seed, "client-model", state.cid), depth=l_t
        )
    elif state.model.depth != l_t:
        if l_t < state.model.depth:
            raise ProtocolError(
                f"client {state.cid}: cannot shrink from {state.model.depth} to {l_t} layers"
            )
        state.model.grow(l_t - state.model.depth)
        if state.reset_moments_on_growth:
            for p in state.model.parameters():
                p.zero_moments()
    load_payload(state.model, payload)

    state.adam.lr = lr
    params = state.model.parameters()
    zero_grads(params)
    losses = []
    for _ in range(local_steps):
        batch = state.next_batch(batch_size)
        tokens, t_len, frames, f_len = collate(batch)
        loss_t = batch_loss(state.model, tokens, frames, t_len, f_len)
        backward(loss_t)
        if state.optimizer == "sgd":
            sgd_step(params, lr)
        else:
            adam_step(params, state.adam)
        losses.append(float(loss_t.data))
    out = serialize_model(state.model, weights_only=True)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return ClientResult(seal(out, codec, codec_key), mean_loss)


def aggregate(payloads: list[bytes]) -> bytes:
    """Elementwise mean of weight payloads in fixed client-id order."""
    return average_payloads(payloads)


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundReport:
    t: int
    layers: int
    client_ids: tuple[int, ...]
    mean_train_loss: float
    eval_loss: float
    downlink_bytes: int
    uplink_bytes: int
    cum_bytes: int


@dataclass
class CommLedger:
    """Per-round wire accounting: bytes attributable to encoder/decoder blocks
    versus everything else (headers, fixed weights, codec framing)."""

    rounds: list[RoundReport] = field(default_factory=list)
    block_bytes: list[int] = field(default_factory=list)
    fixed_bytes: list[int] = field(default_factory=list)

    def append(self, report: RoundReport, block: int, fixed: int) -> None:
        self.rounds.append(report)
        self.block_bytes.append(block)
        self.fixed_bytes.append(fixed)

    @property
    def total_bytes(self) -> int:
        return self.rounds[-1].cum_bytes if self.rounds else 0

    @property
    def total_block_bytes(self) -> int:
        return sum(self.block_bytes)

    @property
    def total_fixed_bytes(self) -> int:
        return sum(self.fixed_bytes)


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------


EVAL_BATCH = 32


def _eval_batches(samples: list[Sample], batch_size: int):
    batches = []
    for i in range(0, len(samples), batch_size):
        tokens, t_len, frames, f_len = collate(samples[i : i + batch_size])
        valid = np.arange(frames.shape[1])[None, :] < f_len[:, None]
        batches.append((tokens, t_len, frames, valid))
    return batches


def _evaluate_batches(model: DynamicTransformer, batches) -> float:
    total_sse = 0.0
    total_count = 0
    with no_grad():
        for tokens, t_len, frames, valid in batches:
            pred = model.forward(tokens, frames, t_len)
            diff = (pred.data - frames) * valid[..., None]
            total_sse += float((diff * diff).sum())
            total_count += int(valid.sum()) * frames.shape[2]
    return total_sse / total_count


def evaluate(model: DynamicTransformer, samples: list[Sample], batch_size: int = EVAL_BATCH) -> float:
    """Masked MSE over a sample list, batched in fixed order."""
    return _evaluate_batches(model, _eval_batches(samples, batch_size))


class Server:
    """Owns the global model, the clients, and the round protocol."""

    def __init__(
        self,
        model_config: ModelConfig,
        fed_config: FederatedConfig,
        shards: list[list[Sample]],
        test_samples: list[Sample],
        probe_size: int = 4,
    ):
        if len(shards) != fed_config.num_clients:
            raise ConfigError(
                f"{fed_config.num_clients} clients configured but {len(shards)} shards supplied"
            )
        if not test_samples:
            raise ConfigError("evaluation set is empty")
        self.model_config = model_config
        self.fed = fed_config
        self.schedule = effective_schedule(fed_config)
        self.model = DynamicTransformer(
            model_config, subseed(fed_config.seed, "model"), depth=self.schedule.initial_depth
        )
        self.clients = [
            ClientState(
                i,
                shard,
                model_config,
                fed_config.seed,
                fed_config.lr,
                fed_config.optimizer,
                fed_config.reset_moments_on_growth,
            )
            for i, shard in enumerate(shards)
        ]
        self.codec_key = subseed(fed_config.seed, "codec")
        self.test_samples = test_samples
        self._eval_cache = _eval_batches(test_samples, EVAL_BATCH)
        self._probe = collate(test_samples[: max(1, min(probe_size, len(test_samples)))])
        self.ledger = CommLedger()
        self.growth_rounds: list[int] = []
        self.t = 0
        self._cum_bytes = 0

    def _probe_states(self, depth: int) -> bytes:
        """Byte image of the restricted-depth forward pass on the probe batch."""
        tokens, t_len, frames, _ = self._probe
        with no_grad():
            out = self.model.forward(tokens, frames, t_len, depth=depth)
        return out.data.tobytes()

    def _grow_checked(self, new_depth: int, t: int) -> None:
        """Grow the global model, verifying existing weights and the
        pre-existing blocks' computation are bit-identical across the event."""
        old_depth = self.model.depth
        before = [(p.name, p.raw.data.tobytes()) for p in self.model.parameters()]
        probe_before = self._probe_states(old_depth)
        self.model.grow(new_depth - old_depth)
        after = {p.name: p.raw.data for p in self.model.parameters()}
        for name, image in before:
            if after[name].tobytes() != image:
                raise VerificationError(f"growth at round {t} modified tensor {name!r}")
        if self._probe_states(old_depth) != probe_before:
            raise VerificationError(
                f"growth at round {t} changed the pre-existing blocks' hidden states"
            )
        self.growth_rounds.append(t)

    def run_round(self) -> RoundReport:
        """One communication round; see the module docstring for the order of
        effects."""
        if self.t >= self.schedule.rounds:
            raise ContractError(f"all {self.schedule.rounds} rounds already executed")
        t = self.t + 1
        fed = self.fed
        rng = generator(subseed(fed.seed, "round", t))
        ids = sample_clients(rng, fed.num_clients, fed.sampled_per_round)

        new_depth = maybe_grow(self.schedule, t, self.model.depth)
        if new_depth != self.model.depth:
            self._grow_checked(new_depth, t)

        payload = serialize_model(self.model, weights_only=True)
        sealed = seal(payload, fed.codec, self.codec_key)
        downlink = len(sealed) * len(ids)

        results = [
            client_update(
                self.clients[int(i)],
                sealed,
                self.model.depth,
                self.schedule.local_steps,
                fed.lr,
                fed.batch_size,
                fed.codec,
                self.codec_key,
            )
            for i in ids
        ]
        uplink = sum(len(r.payload) for r in results)

        agg = aggregate([unseal(r.payload, fed.codec, self.codec_key) for r in results])
        load_payload(self.model, parse_payload(agg))

        eval_loss = _evaluate_batches(self.model, self._eval_cache)
        mean_train = float(np.mean([r.mean_train_loss for r in results]))

        counts = self.model.param_count()
        block = 8 * self.model.depth * (counts["per_enc_block"] + counts["per_dec_block"]) * len(ids) * 2
        fixed = downlink + uplink - block
        self._cum_bytes += downlink + uplink

        report = RoundReport(
            t=t,
            layers=self.model.depth,
            client_ids=tuple(int(i) for i in ids),
            mean_train_loss=mean_train,
            eval_loss=eval_loss,
            downlink_bytes=downlink,
            uplink_bytes=uplink,
            cum_bytes=self._cum_bytes,
        )
        self.ledger.append(report, block, fixed)
        self.t = t
        return report

    def run(self) -> list[RoundReport]:
        return [self.run_round() for _ in range(self.schedule.rounds - self.t)]


@dataclass
class TrainingResult:
    reports: list[RoundReport]
    ledger: CommLedger
    model: DynamicTransformer
    growth_rounds: tuple[int, ...]
    corpus: list[Sample]
    train_samples: list[Sample]
    test_samples: list[Sample]
    shards: list[list[Sample]]

    @property
    def final_eval_loss(self) -> float:
        return self.reports[-1].eval_loss


def run_training(settings) -> TrainingResult:
    """Full deterministic experiment from a RunSettings bundle."""
    fed = settings.fed
    corpus = generate(settings.task, settings.n_train + settings.n_test)
    train, test = holdout(corpus, settings.n_test, fed.seed)
    shards = split(train, settings.split, fed.seed)
    sizes = [len(s) for s in shards]
    if any(size < 1 for size in sizes):
        raise ConfigError(f"split produced an empty shard: sizes {sizes}")
    server = Server(settings.model, fed, shards, test)
    reports = server.run()
    return TrainingResult(
        reports=reports,
        ledger=server.ledger,
        model=server.model,
        growth_rounds=tuple(server.growth_rounds),
        corpus=corpus,
        train_samples=train,
        test_samples=test,
        shards=shards,
    )
