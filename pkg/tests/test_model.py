import math

import numpy as np
import pytest

from nvae import numkernel as nk
from nvae.corpus import Vocabulary
from nvae.distributions import BaseNoise
from nvae.errors import DomainError, InputError
from nvae.model import (
    DocBatch,
    backward,
    elbo,
    export_topics,
    forward_batch,
    infer_theta,
    init_params,
    topic_word,
)

from support import random_docs, tiny_model


def _check_trace(trace, batch):
    np.testing.assert_allclose(trace.mu.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(trace.nu > 0)
    assert np.all(trace.theta >= 0)
    np.testing.assert_allclose(trace.theta.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(trace.beta.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(trace.eta >= 0)
    np.testing.assert_allclose(trace.eta.sum(axis=1), batch.doc_length, rtol=1e-12)


def test_trace_invariants_random_draws():
    rng = np.random.default_rng(0)
    for trial in range(100):
        K, V, D = int(rng.integers(1, 7)), int(rng.integers(5, 40)), int(rng.integers(1, 6))
        params = init_params(rng.normal(size=(V, D)), K, (8,), seed=trial,
                             bn_fc=bool(rng.integers(2)), bn_beta=bool(rng.integers(2)))
        params.beta_tilde += rng.normal(0, 2, size=params.beta_tilde.shape)
        batch = DocBatch(random_docs(rng, int(rng.integers(2, 8)), V, max_distinct=min(V, 6)))
        trace = forward_batch(params, batch, rng.uniform(0.3, 1.0), BaseNoise(trial))
        _check_trace(trace, batch)


def test_single_topic_degeneracy():
    params, batch = tiny_model(K=1)
    trace = forward_batch(params, batch, 0.7, BaseNoise(1))
    np.testing.assert_array_equal(trace.mu, 1.0)
    np.testing.assert_array_equal(trace.theta, 1.0)
    np.testing.assert_array_equal(trace.entropy, 0.0)
    np.testing.assert_allclose(trace.eta[:, 0], batch.doc_length)
    np.testing.assert_array_equal(trace.eta_log_theta, 0.0)
    log_beta = np.log(trace.beta[0])
    rec = np.array([(np.asarray(c) * log_beta[np.asarray(w)]).sum() for w, c in batch.docs])
    np.testing.assert_allclose(trace.elbo, -trace.kl + rec, rtol=1e-12)


def test_single_topic_rho_gradient_is_zero():
    params, batch = tiny_model(K=1)
    trace = forward_batch(params, batch, 0.7, BaseNoise(2))
    grads = backward(trace, batch, params)
    np.testing.assert_allclose(grads["rho"], 0.0, atol=1e-14)


def _zero_logits(params):
    params.rho[:] = 0.0
    for w in params.fc_weights:
        w[:] = 0.0
    for s in params.fc_bn:
        s.shift[:] = 0.0
    params.out_weight[:] = 0.0
    params.out_bias[:] = 0.0


def test_symmetric_logits_give_uniform_expected_mu():
    params, batch = tiny_model(K=3)
    _zero_logits(params)
    mus = []
    for s in range(2000):
        trace = forward_batch(params, batch, 0.7, BaseNoise(s))
        np.testing.assert_array_equal(trace.pi, 0.0)
        mus.append(trace.mu)
    mus = np.concatenate(mus)
    se = mus.std(axis=0, ddof=1) / np.sqrt(mus.shape[0])
    assert np.all(np.abs(mus.mean(axis=0) - 1 / 3) < 3 * se)


def test_uniform_mu_entropy_is_length_times_log_k():
    params, batch = tiny_model(K=5)
    _zero_logits(params)
    trace = forward_batch(params, batch, 0.7, mode="infer")
    np.testing.assert_allclose(trace.entropy, batch.doc_length * math.log(5), rtol=1e-12)


def test_infer_mode_is_deterministic():
    params, batch = tiny_model()
    a = forward_batch(params, batch, 0.7, mode="infer")
    b = forward_batch(params, batch, 0.7, mode="infer")
    for name in ("pi", "mu", "eta", "nu", "theta", "beta", "entropy", "kl"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_forward_rejects_bad_temperature_and_missing_noise():
    params, batch = tiny_model()
    with pytest.raises(DomainError):
        forward_batch(params, batch, 0.0, BaseNoise(0))
    with pytest.raises(InputError):
        forward_batch(params, batch, 0.7, None, mode="train")


@pytest.mark.parametrize("docs", [
    [],
    [(np.array([], dtype=int), np.array([], dtype=int))],
    [(np.array([1, 1]), np.array([1, 2]))],
    [(np.array([1]), np.array([0]))],
])
def test_doc_batch_validation(docs):
    with pytest.raises(InputError):
        DocBatch(docs)


def test_word_id_outside_vocabulary():
    params, _ = tiny_model(V=10)
    with pytest.raises(InputError):
        forward_batch(params, DocBatch([(np.array([3, 12]), np.array([1, 1]))] * 2), 0.7, BaseNoise(0))


def _reference_elbo(trace, batch, params):
    """Per-document ELBO rebuilt from the trace with plain loops."""
    alpha = np.log1p(np.exp(params.alpha_hat))
    out = []
    entry = 0
    for d, (ids, cnts) in enumerate(batch.docs):
        ent = rec = 0.0
        for w, c in zip(ids, cnts):
            mu = trace.mu[entry]
            ent -= c * sum(m * math.log(m) for m in mu)
            rec += c * sum(mu[t] * math.log(trace.beta[t, w]) for t in range(len(mu)))
            entry += 1
        nu = trace.nu[d]
        kl = (math.lgamma(nu.sum()) - sum(math.lgamma(x) for x in nu)
              - math.lgamma(alpha.sum()) + sum(math.lgamma(x) for x in alpha)
              + sum((nu[t] - alpha[t]) * (_digamma(nu[t]) - _digamma(nu.sum()))
                    for t in range(len(nu))))
        elt = sum(trace.eta[d, t] * math.log(trace.theta[d, t]) for t in range(len(nu)))
        out.append(ent - kl + rec + elt)
    return np.array(out)


def _digamma(x):
    from test_distributions import ref_digamma
    return ref_digamma(x)


def test_elbo_matches_independent_reevaluation():
    rng = np.random.default_rng(3)
    for trial in range(10):
        params, batch = tiny_model(K=int(rng.integers(2, 6)), seed=trial)
        params.beta_tilde += rng.normal(0, 1, size=params.beta_tilde.shape)
        params.alpha_hat += rng.normal(0, 1, size=params.alpha_hat.shape)
        trace = forward_batch(params, batch, 0.8, BaseNoise(trial))
        loss, terms = elbo(trace, batch, params)
        ref = _reference_elbo(trace, batch, params)
        np.testing.assert_allclose(terms["elbo"], ref, rtol=0, atol=1e-10)
        assert abs(loss + ref.mean()) < 1e-10


def test_elbo_rejects_foreign_batch():
    params, batch = tiny_model()
    trace = forward_batch(params, batch, 0.7, BaseNoise(0))
    other = DocBatch(list(batch.docs))
    with pytest.raises(InputError):
        elbo(trace, other, params)
    with pytest.raises(InputError):
        backward(trace, other, params)


def test_logit_translation_invariance():
    params, batch = tiny_model(K=4)
    base = forward_batch(params, batch, 0.7, BaseNoise(4))
    shifted = params.copy()
    shifted.out_bias += 3.7
    shifted.rho += np.random.default_rng(4).normal(size=params.embed_dim)
    trace = forward_batch(shifted, batch, 0.7, BaseNoise(4))
    assert not np.allclose(trace.pi, base.pi)
    np.testing.assert_allclose(trace.mu, base.mu, atol=1e-10)
    assert abs(trace.loss - base.loss) < 1e-10


def test_beta_batchnorm_row_statistics():
    rng = np.random.default_rng(5)
    for trial in range(20):
        params, batch = tiny_model(K=3, V=40, seed=trial)
        params.beta_tilde[:] = rng.normal(rng.normal(), rng.uniform(0.02, 3), size=params.beta_tilde.shape)
        params.beta_bn.gamma[:] = rng.uniform(0.2, 3, size=3)
        trace = forward_batch(params, batch, 0.7, BaseNoise(trial))
        x = trace.cache["x"]
        assert np.all(np.abs(x.mean(axis=1) - params.beta_bn.shift) < 1e-8)
        np.testing.assert_allclose(x.var(axis=1), params.beta_bn.gamma ** 2, atol=1e-6)


def test_loss_finite_over_many_random_inputs():
    rng = np.random.default_rng(6)
    base, _ = tiny_model(K=4, V=30, D=4, layers=(6,))
    for trial in range(10_000):
        params = base.copy()
        scale = 10 ** rng.uniform(-2, 1.5)
        params.rho *= scale
        params.beta_tilde *= 10 ** rng.uniform(-1, 3)
        params.a[:] = rng.normal(0, 5)
        params.b[:] = rng.normal(0, 5)
        params.alpha_hat[:] = rng.normal(0, 3, size=4)
        n = int(rng.integers(2, 5))
        docs = random_docs(rng, n, 30, max_distinct=1 if trial % 3 == 0 else 4, max_count=1 if trial % 3 == 0 else 3)
        batch = DocBatch(docs)
        trace = forward_batch(params, batch, rng.uniform(0.1, 1.0), BaseNoise(trial))
        assert np.isfinite(trace.loss), trial


def test_absent_words_get_no_direct_gradient():
    params, _ = tiny_model(K=3, V=20, train_embeddings=True, bn_beta=False)
    batch = DocBatch([(np.array([0, 3]), np.array([2, 1])), (np.array([3, 5]), np.array([1, 1]))])
    trace = forward_batch(params, batch, 0.7, BaseNoise(7))
    grads = backward(trace, batch, params)
    absent = np.setdiff1d(np.arange(20), [0, 3, 5])
    np.testing.assert_array_equal(grads["omega"][absent], 0.0)
    assert np.any(grads["omega"][[0, 3, 5]] != 0)
    # For absent words only the softmax normalizer acts on beta_tilde:
    # d loss / d x[t, v] = beta[t, v] * (sum of count-weighted mu at t) / B.
    weight = (batch.count[:, None] * trace.mu).sum(axis=0) / batch.n_docs
    np.testing.assert_allclose(grads["beta_tilde"][:, absent], trace.beta[:, absent] * weight[:, None],
                               rtol=1e-10)


def test_frozen_embeddings_get_zero_gradient():
    params, batch = tiny_model()
    trace = forward_batch(params, batch, 0.7, BaseNoise(8))
    grads = backward(trace, batch, params)
    np.testing.assert_array_equal(grads["omega"], 0.0)
    grads = backward(trace, batch, params, alpha_trainable=False)
    np.testing.assert_array_equal(grads["alpha_hat"], 0.0)


def _loss_and_grads(params, batch, noise, tau=0.7, mode="train"):
    names = list(params.trainable())

    def value(_ps):
        return forward_batch(params, batch, tau, noise, mode=mode, dirichlet_method="inverse_cdf").loss

    def f(_ps):
        trace = forward_batch(params, batch, tau, noise, mode=mode, dirichlet_method="inverse_cdf")
        g = backward(trace, batch, params)
        return trace.loss, [g[n] for n in names]
    return f, value, list(params.trainable().values())


@pytest.mark.parametrize("bn_fc,bn_beta", [(False, True), (True, False), (False, False)])
def test_gradients_without_batchnorm(bn_fc, bn_beta):
    params, batch = tiny_model(layers=(6, 5), bn_fc=bn_fc, bn_beta=bn_beta, train_embeddings=True)
    # Zero biases can put a pre-activation exactly on the ReLU kink (a row
    # whose inputs are all dead), where central differences see slope 1/2.
    for b in params.fc_biases:
        b[:] = np.random.default_rng(9).uniform(0.05, 0.2, size=b.shape)
    f, value, arrays = _loss_and_grads(params, batch, BaseNoise(9))
    assert nk.grad_check(f, arrays, value_fn=value) < 1e-4


def test_gradients_in_infer_mode():
    params, batch = tiny_model(layers=(6,), train_embeddings=True)
    # make the running statistics non-trivial first
    for s in range(5):
        forward_batch(params, batch, 0.7, BaseNoise(s))
    f, value, arrays = _loss_and_grads(params, batch, None, mode="infer")
    assert nk.grad_check(f, arrays, value_fn=value) < 1e-4


def test_infer_theta_single_topic():
    params, batch = tiny_model(K=1)
    props, clusters = infer_theta(params, batch, 0.7)
    np.testing.assert_array_equal(props, 1.0)
    np.testing.assert_array_equal(clusters, 0)


def test_infer_theta_margin_instance():
    D, K = 3, 3
    emb = np.eye(D)
    params = init_params(emb, K, (4,), seed=0)
    _zero_logits(params)
    params.rho[:] = 0.0
    params.rho[2] = 10.0  # every word has pi maximal at topic 2 by a margin of 10
    batch = DocBatch([(np.array([0, 1]), np.array([1, 2])), (np.array([2]), np.array([3]))])
    trace = forward_batch(params, batch, 0.7, mode="infer")
    assert np.all(trace.pi[:, 2] - trace.pi[:, :2].max(axis=1) >= 10.0)
    props, clusters = infer_theta(params, batch, 0.7)
    np.testing.assert_array_equal(clusters, [2, 2])


def test_infer_theta_identical_documents_and_scaling():
    params, _ = tiny_model()
    doc = (np.array([1, 4, 9]), np.array([1, 2, 1]))
    props, clusters = infer_theta(params, DocBatch([doc, doc, (np.array([2]), np.array([1]))]), 0.7)
    np.testing.assert_array_equal(props[0], props[1])
    np.testing.assert_allclose(props.sum(axis=1), 1.0)
    for c in (1e-3, 7.0):
        np.testing.assert_array_equal(np.argmax(props * c, axis=1), clusters)


def test_export_topics_examples():
    V = 12
    params, _ = tiny_model(K=3, V=V)
    vocab = Vocabulary(f"w{i}" for i in range(V))
    params.beta_tilde[:] = 0.0
    for t, w in enumerate((5, 0, 11)):
        params.beta_tilde[t, w] = 10.0
    topics = export_topics(params, vocab, 4)
    assert [t[0] for t in topics] == ["w5", "w0", "w11"]
    # ties among the remaining equal scores go to lower ids
    assert topics[1][1:] == ["w1", "w2", "w3"]
    for t in export_topics(params, vocab, V):
        assert sorted(t) == sorted(vocab.id_to_word)


def test_export_topics_brute_force():
    rng = np.random.default_rng(10)
    V = 40
    vocab = Vocabulary(f"w{i}" for i in range(V))
    for trial in range(20):
        params, _ = tiny_model(K=4, V=V, seed=trial)
        params.beta_tilde[:] = rng.normal(size=params.beta_tilde.shape)
        beta = topic_word(params)
        expected = [[vocab[i] for i in sorted(range(V), key=lambda i: (-row[i], i))[:15]] for row in beta]
        assert export_topics(params, vocab, 15) == expected


def test_export_topics_bounds():
    params, _ = tiny_model(V=10)
    with pytest.raises(InputError):
        export_topics(params, Vocabulary(str(i) for i in range(10)), 11)


def test_trainable_excludes_inert_arrays():
    params, _ = tiny_model()
    names = list(params.trainable())
    assert "beta_bn.shift" not in names
    assert "fc0.bias" not in names and "fc0.bn.gamma" in names
    params_nobn, _ = tiny_model(bn_fc=False)
    assert "fc0.bias" in params_nobn.trainable()


def test_init_values():
    params, _ = tiny_model(K=4)
    np.testing.assert_allclose(params.alpha, 0.1, rtol=1e-12)
    assert params.a[0] == 1.0 and params.b[0] == 0.01
    assert abs(params.beta_tilde.std() - 0.02) < 0.005
