"""Mini-batch training with Adam, warm-up schedules and prior burn-in."""
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .distributions import BaseNoise
from .errors import InputError, NumericalError
from .model import DocBatch, backward, forward_batch, init_params


@dataclass
class TrainConfig:
    n_topics: int = 20
    epochs: int = 128
    batch_size: int = 256
    burn_in_epochs: int = 64
    min_temperature: float = 0.7
    layer_sizes: tuple = (128, 128)
    learning_rate: float = 8e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    train_embeddings: bool = False
    seed: int = 0
    bn_fc: bool = True
    bn_beta: bool = True
    diagnostics: bool = False

    def __post_init__(self):
        self.layer_sizes = tuple(int(h) for h in self.layer_sizes)
        if self.n_topics < 1:
            raise InputError("n_topics must be at least 1")
        if self.epochs < 1:
            raise InputError("epochs must be at least 1")
        if not 0 <= self.burn_in_epochs <= self.epochs:
            raise InputError("burn_in_epochs must lie in [0, epochs]")
        if not 0 < self.min_temperature <= 1:
            raise InputError("min_temperature must lie in (0, 1]")
        if self.batch_size < 2:
            raise InputError("batch_size must be at least 2 for batch normalization")

    def to_dict(self):
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d


@dataclass
class ScheduleState:
    global_step: int
    steps_per_epoch: int
    lr: float
    temperature: float


def schedule_at(config, step, steps_per_epoch):
    """Learning rate and temperature at a global step.

    Over the first epoch the rate rises linearly from 0 to
    ``config.learning_rate`` and the temperature falls linearly from 1 to
    ``config.min_temperature``, both hitting their end values on the epoch's
    last step. Afterwards both stay constant.
    """
    if steps_per_epoch < 1:
        raise InputError("steps_per_epoch must be at least 1")
    if step >= steps_per_epoch - 1:
        frac = 1.0
    else:
        frac = step / (steps_per_epoch - 1)
    lr = config.learning_rate * frac
    tau = 1.0 + (config.min_temperature - 1.0) * frac
    return lr, tau


@dataclass
class AdamState:
    m: dict = field(default_factory=OrderedDict)
    v: dict = field(default_factory=OrderedDict)
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls(OrderedDict((k, np.zeros_like(a)) for k, a in arrays.items()),
                   OrderedDict((k, np.zeros_like(a)) for k, a in arrays.items()), 0)


def adam_step(state, params, grads, lr, beta1=0.0, beta2=0.99, eps=1e-8, frozen=()):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` are name -> array maps. Names in ``frozen`` are
    neither updated nor have their moments advanced.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} at Adam step {state.t + 1}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def make_batches(n_docs, batch_size, rng):
    """Shuffled index batches; a trailing batch of one document joins the
    previous batch."""
    order = rng.permutation(n_docs)
    batches = [order[i:i + batch_size] for i in range(0, n_docs, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def n_batches(n_docs, batch_size):
    full, rest = divmod(n_docs, batch_size)
    if rest == 0:
        return full
    if rest == 1 and full > 0:
        return full
    return full + 1


def _epoch_rng(seed, epoch):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(2, epoch))))


@dataclass
class TrainResult:
    params: object
    adam: AdamState
    schedule: ScheduleState
    history: list
    diagnostics: list


def diagnostics_record(epoch, step, grads, params):
    """Per-step quantities behind the batch-norm ablation plots."""
    beta_g = grads["beta_tilde"]
    fc_g = grads["out.weight"]
    return OrderedDict(
        kind="step",
        epoch=epoch,
        step=step,
        beta_grad_norms=[float(x) for x in np.linalg.norm(beta_g, axis=1)],
        alpha=[float(x) for x in params.alpha],
        fc_grad_norm=float(np.linalg.norm(fc_g)),
        fc_grad_norms=[float(x) for x in np.linalg.norm(fc_g, axis=0)],
    )


def train(corpus, embeddings, config, log=None, params=None):
    """Fit the model; returns a :class:`TrainResult`.

    ``embeddings`` is a V x D array aligned with ``corpus.vocab``. When
    ``log`` is a writable text stream, every history record (one per epoch,
    plus one per step with ``config.diagnostics``) is written to it as a JSON
    line.
    """
    emb = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    if len(corpus) == 0:
        raise InputError("empty corpus")
    if len(corpus) < 2:
        raise InputError("need at least two documents")
    if emb.ndim != 2 or emb.shape[0] != len(corpus.vocab):
        raise InputError(f"embedding rows ({emb.shape[0] if emb.ndim == 2 else '?'}) "
                         f"do not match vocabulary size ({len(corpus.vocab)})")
    if params is None:
        params = init_params(emb, config.n_topics, config.layer_sizes, seed=config.seed,
                             bn_fc=config.bn_fc, bn_beta=config.bn_beta,
                             train_embeddings=config.train_embeddings)
    trainable = params.trainable()
    adam = AdamState.zeros_like(trainable)
    steps_per_epoch = n_batches(len(corpus), config.batch_size)
    history, diag = [], []

    def emit(rec):
        if log is not None:
            log.write(json.dumps(rec) + "\n")

    step = 0
    lr = tau = None
    for epoch in range(1, config.epochs + 1):
        rng = _epoch_rng(config.seed, epoch)
        alpha_on = epoch > config.burn_in_epochs
        frozen = set() if alpha_on else {"alpha_hat"}
        if not params.train_embeddings:
            frozen.add("omega")
        sums = np.zeros(5)
        for bi, idx in enumerate(make_batches(len(corpus), config.batch_size, rng)):
            lr, tau = schedule_at(config, step, steps_per_epoch)
            batch = DocBatch([corpus.docs[i] for i in idx])
            noise = BaseNoise(config.seed, (epoch, bi, 0))
            trace = forward_batch(params, batch, tau, noise, mode="train")
            grads = backward(trace, batch, params, alpha_trainable=alpha_on)
            if not np.isfinite(trace.loss):
                raise NumericalError(f"loss is not finite at epoch {epoch}, batch {bi}")
            adam_step(adam, trainable, grads, lr, config.adam_beta1, config.adam_beta2,
                      config.adam_eps, frozen=frozen)
            n = batch.n_docs
            sums += n * np.array([trace.loss, trace.entropy.mean(), trace.kl.mean(),
                                  trace.reconstruction.mean(), trace.eta_log_theta.mean()])
            if config.diagnostics:
                rec = diagnostics_record(epoch, step, grads, params)
                diag.append(rec)
                emit(rec)
            step += 1
        means = sums / len(corpus)
        rec = OrderedDict(
            kind="epoch", epoch=epoch, step=step,
            loss=float(means[0]), entropy_term=float(means[1]), kl_term=float(means[2]),
            rec_term=float(means[3]), eta_logtheta_term=float(means[4]),
            lr=float(lr), tau=float(tau), alpha=[float(x) for x in params.alpha],
        )
        history.append(rec)
        emit(rec)
    schedule = ScheduleState(global_step=step, steps_per_epoch=steps_per_epoch,
                             lr=float(lr), temperature=float(tau))
    return TrainResult(params, adam, schedule, history, diag)
