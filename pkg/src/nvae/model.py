"""The nested VAE topic model: parameters, forward pass, ELBO and gradients.

A document is a bag of (word id, count) pairs. For every distinct word of a
document the encoder scores each topic as ``omega_w . rho_t + c_d[t]`` where
``c_d`` comes from a small network applied to the document's mean word
vector. A relaxed (Gumbel-Softmax) topic sample per word type is summed into
soft topic counts ``eta``, mapped to Dirichlet parameters
``nu = softplus(a * eta + b)``, and the decoder scores words with the
topic-word matrix ``beta = softmax(BN(beta_tilde))``.

Gradients are hand-written; ``tests/test_model.py`` checks them against
finite differences.
"""
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import numkernel as nk
from .distributions import (
    CONCENTRATION_FLOOR,
    dirichlet_sample,
    gamma_log_sample_shape_grad,
    gumbel_noise,
    kl_dirichlet,
    kl_dirichlet_grad,
)
from .errors import DomainError, InputError, NumericalError, ShapeError

DEFAULT_LAYERS = (128, 128)
ALPHA_INIT = 0.1
LOG_FLOOR = 1e-300
# The beta-site normalization sees the whole vocabulary as its batch, so its
# variance is never a noisy estimate; a tiny eps keeps row variances at
# gamma^2 rather than gamma^2 * var / (var + eps).
BETA_BN_EPS = 1e-10


@dataclass
class ModelParams:
    omega: np.ndarray            # V x D word embeddings
    rho: np.ndarray              # K x D topic embeddings
    fc_weights: list             # (in, out) matrices of the context network
    fc_biases: list              # used only when the layer has no batch norm
    fc_bn: list                  # BatchNormState per hidden layer
    out_weight: np.ndarray       # H x K
    out_bias: np.ndarray         # K
    a: np.ndarray                # shape (1,)
    b: np.ndarray                # shape (1,)
    beta_tilde: np.ndarray       # K x V
    beta_bn: nk.BatchNormState   # K features, population statistics only
    alpha_hat: np.ndarray        # K, alpha = softplus(alpha_hat)
    bn_fc: bool = True
    bn_beta: bool = True
    train_embeddings: bool = False

    @property
    def n_topics(self):
        return self.rho.shape[0]

    @property
    def vocab_size(self):
        return self.omega.shape[0]

    @property
    def embed_dim(self):
        return self.omega.shape[1]

    @property
    def layer_sizes(self):
        return tuple(w.shape[1] for w in self.fc_weights)

    @property
    def alpha(self):
        return nk.softplus(self.alpha_hat)

    def trainable(self):
        """Ordered name -> array map of every optimized tensor.

        The batch-norm shift at the beta site is left out: adding a per-topic
        constant before a softmax over the vocabulary changes nothing.
        """
        out = OrderedDict()
        out["omega"] = self.omega
        out["rho"] = self.rho
        for i, w in enumerate(self.fc_weights):
            out[f"fc{i}.weight"] = w
            if self.bn_fc:
                out[f"fc{i}.bn.gamma"] = self.fc_bn[i].gamma
                out[f"fc{i}.bn.shift"] = self.fc_bn[i].shift
            else:
                out[f"fc{i}.bias"] = self.fc_biases[i]
        out["out.weight"] = self.out_weight
        out["out.bias"] = self.out_bias
        out["a"] = self.a
        out["b"] = self.b
        out["beta_tilde"] = self.beta_tilde
        if self.bn_beta:
            out["beta_bn.gamma"] = self.beta_bn.gamma
        out["alpha_hat"] = self.alpha_hat
        return out

    def state_arrays(self):
        """Every array that defines the model, in a fixed order (checkpoints)."""
        out = OrderedDict()
        out["omega"] = self.omega
        out["rho"] = self.rho
        for i, w in enumerate(self.fc_weights):
            out[f"fc{i}.weight"] = w
            out[f"fc{i}.bias"] = self.fc_biases[i]
            bn = self.fc_bn[i]
            out[f"fc{i}.bn.gamma"] = bn.gamma
            out[f"fc{i}.bn.shift"] = bn.shift
            out[f"fc{i}.bn.running_mean"] = bn.running_mean
            out[f"fc{i}.bn.running_var"] = bn.running_var
        out["out.weight"] = self.out_weight
        out["out.bias"] = self.out_bias
        out["a"] = self.a
        out["b"] = self.b
        out["beta_tilde"] = self.beta_tilde
        out["beta_bn.gamma"] = self.beta_bn.gamma
        out["beta_bn.shift"] = self.beta_bn.shift
        out["alpha_hat"] = self.alpha_hat
        return out

    def copy(self):
        return ModelParams(
            omega=self.omega.copy(),
            rho=self.rho.copy(),
            fc_weights=[w.copy() for w in self.fc_weights],
            fc_biases=[b.copy() for b in self.fc_biases],
            fc_bn=[_copy_bn(s) for s in self.fc_bn],
            out_weight=self.out_weight.copy(),
            out_bias=self.out_bias.copy(),
            a=self.a.copy(),
            b=self.b.copy(),
            beta_tilde=self.beta_tilde.copy(),
            beta_bn=_copy_bn(self.beta_bn),
            alpha_hat=self.alpha_hat.copy(),
            bn_fc=self.bn_fc,
            bn_beta=self.bn_beta,
            train_embeddings=self.train_embeddings,
        )


def _copy_bn(s):
    return nk.BatchNormState(s.gamma.copy(), s.shift.copy(), s.running_mean.copy(),
                             s.running_var.copy(), s.momentum, s.eps)


def init_params(embeddings, n_topics, layer_sizes=DEFAULT_LAYERS, seed=0,
                bn_fc=True, bn_beta=True, train_embeddings=False):
    """Fresh parameters around the given V x D embedding matrix."""
    omega = np.array(embeddings, dtype=np.float64)
    if omega.ndim != 2:
        raise ShapeError("embeddings must be a V x D matrix")
    if n_topics < 1:
        raise InputError("need at least one topic")
    V, D = omega.shape
    K = int(n_topics)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(1,))))

    scale = np.linalg.norm(omega, axis=1).mean() / np.sqrt(D)
    rho = rng.normal(0.0, scale if scale > 0 else 1.0, size=(K, D))

    fc_w, fc_b, fc_bn = [], [], []
    fan_in = D
    for h in layer_sizes:
        lim = 1.0 / np.sqrt(fan_in)
        fc_w.append(rng.uniform(-lim, lim, size=(fan_in, h)))
        fc_b.append(np.zeros(h))
        fc_bn.append(nk.BatchNormState.create(h))
        fan_in = h
    lim = 1.0 / np.sqrt(fan_in)
    out_w = rng.uniform(-lim, lim, size=(fan_in, K))
    beta_tilde = rng.normal(0.0, 0.02, size=(K, V))

    return ModelParams(
        omega=omega,
        rho=rho,
        fc_weights=fc_w,
        fc_biases=fc_b,
        fc_bn=fc_bn,
        out_weight=out_w,
        out_bias=np.zeros(K),
        a=np.array([1.0]),
        b=np.array([0.01]),
        beta_tilde=beta_tilde,
        beta_bn=nk.BatchNormState.create(K, eps=BETA_BN_EPS),
        alpha_hat=np.full(K, float(nk.inverse_softplus(ALPHA_INIT))),
        bn_fc=bn_fc,
        bn_beta=bn_beta,
        train_embeddings=train_embeddings,
    )


class DocBatch:
    """A mini-batch of bag-of-words documents stored as flat entry arrays.

    Entry ``j`` is word ``word[j]`` appearing ``count[j]`` times in document
    ``doc[j]`` of the batch.
    """

    def __init__(self, docs):
        if len(docs) == 0:
            raise InputError("empty batch")
        doc, word, count = [], [], []
        for d, (ids, cnts) in enumerate(docs):
            ids = np.asarray(ids, dtype=np.int64)
            cnts = np.asarray(cnts, dtype=np.float64)
            if ids.size == 0:
                raise InputError(f"document {d} of the batch is empty")
            if ids.shape != cnts.shape:
                raise InputError(f"document {d}: ids and counts differ in length")
            if np.unique(ids).size != ids.size:
                raise InputError(f"document {d} repeats a word id")
            if np.any(cnts < 1):
                raise InputError(f"document {d} has a count below 1")
            doc.append(np.full(ids.size, d, dtype=np.int64))
            word.append(ids)
            count.append(cnts)
        self.docs = list(docs)
        self.n_docs = len(docs)
        self.doc = np.concatenate(doc)
        self.word = np.concatenate(word)
        self.count = np.concatenate(count)
        n = self.word.size
        idx = np.arange(n)
        self.counts_matrix = sparse.csr_matrix((self.count, (self.doc, idx)), shape=(self.n_docs, n))
        self.member_matrix = sparse.csr_matrix((np.ones(n), (self.doc, idx)), shape=(self.n_docs, n))
        self.doc_length = np.asarray(self.counts_matrix.sum(axis=1)).ravel()
        self._word_matrix = {}

    def __len__(self):
        return self.n_docs

    def word_matrix(self, vocab_size):
        """Sparse V x n selector mapping entries back to vocabulary rows."""
        if vocab_size not in self._word_matrix:
            if self.word.size and self.word.max() >= vocab_size:
                raise InputError("word id outside the vocabulary")
            n = self.word.size
            self._word_matrix[vocab_size] = sparse.csr_matrix(
                (np.ones(n), (self.word, np.arange(n))), shape=(vocab_size, n))
        return self._word_matrix[vocab_size]


@dataclass
class ForwardTrace:
    pi: np.ndarray           # n x K word-topic logits
    mu: np.ndarray           # n x K relaxed topic samples
    eta: np.ndarray          # B x K soft topic counts
    nu: np.ndarray           # B x K Dirichlet parameters
    theta: np.ndarray        # B x K document-topic sample
    beta: np.ndarray         # K x V topic-word distribution
    entropy: np.ndarray      # per-document ELBO terms
    kl: np.ndarray
    reconstruction: np.ndarray
    eta_log_theta: np.ndarray
    mode: str
    temperature: float
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def elbo(self):
        return self.entropy - self.kl + self.reconstruction + self.eta_log_theta

    @property
    def loss(self):
        return -float(np.mean(self.elbo))


def beta_logits(params):
    """Pre-softmax topic-word scores, with their batch-norm cache (or None)."""
    if not params.bn_beta:
        return params.beta_tilde, None
    # vocabulary entries are the batch, topics are the features
    y, cache = nk.batchnorm_forward(params.beta_tilde.T, params.beta_bn, mode="train",
                                    update_running=False)
    return y.T, cache


def topic_word(params):
    """The K x V topic-word distribution."""
    x, _ = beta_logits(params)
    return nk.softmax_rows(x)


def context_forward(params, omega_bar, mode):
    """Run the context network; returns ``(c, caches)``."""
    h = omega_bar
    caches = []
    for i, w in enumerate(params.fc_weights):
        z = h @ w
        bn_cache = None
        if params.bn_fc:
            z, bn_cache = nk.batchnorm_forward(z, params.fc_bn[i], mode=mode)
        else:
            z = z + params.fc_biases[i]
        caches.append((h, z, bn_cache))
        h = nk.relu(z)
    c = h @ params.out_weight + params.out_bias
    caches.append((h, None, None))
    return c, caches


def forward_batch(params, batch, temperature, noise=None, mode="train",
                  dirichlet_method="rejection"):
    """Encode a batch and evaluate every per-document ELBO term.

    ``mode="train"`` draws Gumbel noise from ``noise.child(0)`` and the
    Dirichlet sample from ``noise.child(1)``; ``mode="infer"`` is noise-free
    (``mu = softmax(pi / temperature)``, ``theta = nu / sum(nu)``) and uses the
    running batch-norm statistics of the context network.
    ``dirichlet_method`` is passed to :func:`dirichlet_sample`.
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and noise is None:
        raise InputError("train mode needs a noise stream")
    V = params.vocab_size
    W = batch.word_matrix(V)
    E = batch.counts_matrix
    n_len = batch.doc_length

    omega_w = params.omega[batch.word]
    omega_bar = (E @ omega_w) / n_len[:, None]
    c, ctx_caches = context_forward(params, omega_bar, mode)
    s = omega_w @ params.rho.T
    pi = s + c[batch.doc]

    if mode == "train":
        g = gumbel_noise(pi.shape, noise.child(0))
        y = pi + g
    else:
        y = pi
    logmu = nk.log_softmax_rows(y, temperature)
    mu = np.exp(logmu)

    eta = E @ mu
    pre = params.a[0] * eta + params.b[0]
    nu_raw = nk.softplus(pre)
    nu = np.maximum(nu_raw, CONCENTRATION_FLOOR)

    if mode == "train":
        theta, log_gamma = dirichlet_sample(nu, noise.child(1), return_log_gamma=True,
                                            method=dirichlet_method)
        m = log_gamma.max(axis=1, keepdims=True)
        log_theta = log_gamma - m - np.log(np.exp(log_gamma - m).sum(axis=1, keepdims=True))
    else:
        log_gamma = None
        theta = nu / nu.sum(axis=1, keepdims=True)
        log_theta = np.log(nu) - np.log(nu.sum(axis=1, keepdims=True))
    log_theta = np.maximum(log_theta, np.log(LOG_FLOOR))

    x, beta_cache = beta_logits(params)
    log_beta = nk.log_softmax_rows(x)
    beta = np.exp(log_beta)
    alpha = params.alpha

    log_beta_entries = log_beta[:, batch.word].T
    entropy = -(E @ (mu * logmu).sum(axis=1))
    kl = kl_dirichlet(nu, alpha)
    reconstruction = E @ (mu * log_beta_entries).sum(axis=1)
    eta_log_theta = (eta * log_theta).sum(axis=1)

    cache = dict(
        omega_w=omega_w, omega_bar=omega_bar, ctx=ctx_caches, logmu=logmu, pre=pre,
        nu_raw=nu_raw, log_gamma=log_gamma, log_theta=log_theta, x=x,
        beta_cache=beta_cache, log_beta=log_beta, log_beta_entries=log_beta_entries,
        alpha=alpha, batch=batch,
    )
    return ForwardTrace(pi=pi, mu=mu, eta=eta, nu=nu, theta=theta, beta=beta,
                        entropy=entropy, kl=kl, reconstruction=reconstruction,
                        eta_log_theta=eta_log_theta, mode=mode,
                        temperature=float(temperature), cache=cache)


def elbo(trace, batch=None, params=None):
    """Return ``(loss, per_doc_terms)``; loss is the mean negative ELBO."""
    if batch is not None and trace.cache.get("batch") is not batch:
        raise InputError("trace was computed from a different batch")
    terms = OrderedDict(
        entropy=trace.entropy,
        kl=trace.kl,
        reconstruction=trace.reconstruction,
        eta_log_theta=trace.eta_log_theta,
        elbo=trace.elbo,
    )
    loss = trace.loss
    if not np.isfinite(loss):
        raise NumericalError("loss is not finite")
    return loss, terms


def backward(trace, batch, params, alpha_trainable=True):
    """Gradients of ``trace.loss`` for every entry of ``params.trainable()``.

    The Gumbel-Softmax path is differentiated for the fixed noise of the
    trace; the Dirichlet sample is differentiated implicitly (its CDF value
    held fixed). ``alpha_hat`` gets a zero gradient unless
    ``alpha_trainable``; ``omega`` gets zeros unless the embeddings train.
    """
    cache = trace.cache
    if cache.get("batch") is not batch:
        raise InputError("trace was computed from a different batch")
    V = params.vocab_size
    B = batch.n_docs
    E = batch.counts_matrix
    W = batch.word_matrix(V)
    tau = trace.temperature
    mu, logmu = trace.mu, cache["logmu"]
    eta, nu, theta = trace.eta, trace.nu, trace.theta

    d_elbo = np.full(B, -1.0 / B)
    w_entry = batch.count * d_elbo[batch.doc]

    # entropy and reconstruction terms, as functions of mu
    d_mu = w_entry[:, None] * (cache["log_beta_entries"] - logmu - 1.0)
    d_log_beta = (W @ (w_entry[:, None] * mu)).T

    # sum_t eta_t log theta_t
    d_eta = cache["log_theta"] * d_elbo[:, None]
    d_log_theta = eta * d_elbo[:, None]
    inner = d_log_theta.sum(axis=1, keepdims=True)
    if trace.mode == "train":
        dlog = gamma_log_sample_shape_grad(nu, cache["log_gamma"])
        d_nu = (d_log_theta - theta * inner) * dlog
    else:
        d_nu = d_log_theta / nu - inner / nu.sum(axis=1, keepdims=True)

    # -KL(Dir(nu) || Dir(alpha))
    dkl_dq, dkl_dp = kl_dirichlet_grad(nu, cache["alpha"])
    d_nu = d_nu - dkl_dq * d_elbo[:, None]
    d_alpha = -(dkl_dp * d_elbo[:, None]).sum(axis=0)

    d_nu = np.where(cache["nu_raw"] > CONCENTRATION_FLOOR, d_nu, 0.0)
    d_pre = nk.softplus_backward(d_nu, cache["pre"])
    d_eta = d_eta + params.a[0] * d_pre
    grads = OrderedDict()
    d_a = np.array([np.sum(d_pre * eta)])
    d_b = np.array([np.sum(d_pre)])

    d_mu = d_mu + batch.count[:, None] * d_eta[batch.doc]
    d_pi = nk.softmax_rows_backward(d_mu, mu, tau)

    omega_w = cache["omega_w"]
    d_rho = d_pi.T @ omega_w
    d_omega_w = d_pi @ params.rho
    d_c = batch.member_matrix @ d_pi

    # context network
    ctx = cache["ctx"]
    h_last = ctx[-1][0]
    d_out_w = h_last.T @ d_c
    d_out_b = d_c.sum(axis=0)
    dh = d_c @ params.out_weight.T
    fc_grads = []
    for i in reversed(range(len(params.fc_weights))):
        h_in, z, bn_cache = ctx[i]
        dz = nk.relu_backward(dh, z)
        if params.bn_fc:
            dz, dg, dsh = nk.batchnorm_backward(dz, bn_cache)
            layer = {"bn.gamma": dg, "bn.shift": dsh}
        else:
            layer = {"bias": dz.sum(axis=0)}
        layer["weight"] = h_in.T @ dz
        fc_grads.append((i, layer))
        dh = dz @ params.fc_weights[i].T
    d_omega_w = d_omega_w + E.T @ (dh / batch.doc_length[:, None])

    d_x = nk.log_softmax_rows_backward(d_log_beta, trace.beta)
    if params.bn_beta:
        d_xt, d_gamma_beta, _ = nk.batchnorm_backward(d_x.T, cache["beta_cache"])
        d_beta_tilde = d_xt.T
    else:
        d_beta_tilde = d_x

    if params.train_embeddings:
        grads["omega"] = np.asarray(W @ d_omega_w)
    else:
        grads["omega"] = np.zeros_like(params.omega)
    grads["rho"] = d_rho
    fc_grads = dict(fc_grads)
    for i in range(len(params.fc_weights)):
        layer = fc_grads[i]
        grads[f"fc{i}.weight"] = layer["weight"]
        if params.bn_fc:
            grads[f"fc{i}.bn.gamma"] = layer["bn.gamma"]
            grads[f"fc{i}.bn.shift"] = layer["bn.shift"]
        else:
            grads[f"fc{i}.bias"] = layer["bias"]
    grads["out.weight"] = d_out_w
    grads["out.bias"] = d_out_b
    grads["a"] = d_a
    grads["b"] = d_b
    grads["beta_tilde"] = d_beta_tilde
    if params.bn_beta:
        grads["beta_bn.gamma"] = d_gamma_beta
    if alpha_trainable:
        grads["alpha_hat"] = nk.softplus_backward(d_alpha, params.alpha_hat)
    else:
        grads["alpha_hat"] = np.zeros_like(params.alpha_hat)
    return grads


def infer_theta(params, batch, temperature):
    """Noise-free topic proportions ``nu / sum(nu)`` and argmax cluster ids."""
    trace = forward_batch(params, batch, temperature, mode="infer")
    props = trace.nu / trace.nu.sum(axis=1, keepdims=True)
    return props, np.argmax(props, axis=1)


def export_topics(params, vocab, top_n=15):
    """Top ``top_n`` words per topic by beta, ties broken by lower word id."""
    beta = topic_word(params)
    V = beta.shape[1]
    if not 1 <= top_n <= V:
        raise InputError(f"top_n must be in [1, {V}]")
    words = vocab.id_to_word if hasattr(vocab, "id_to_word") else list(vocab)
    topics = []
    for row in beta:
        order = np.argsort(-row, kind="stable")[:top_n]
        topics.append([words[i] for i in order])
    return topics
