"""
What batch normalization buys
=============================

Train on a corpus with more topics than it really has and compare per-topic
gradient norms with and without batch normalization on the topic-word
logits. Without it, a few topics soak up most of the gradient and the others
go idle.
"""

from nvae import TrainConfig, build_corpus, train
from nvae.cli import bn_ablation_summary
from nvae.synth import synth_corpus

sc = synth_corpus(seed=7)
corpus = build_corpus(sc.token_docs, labels=sc.labels)
row = {w: i for i, w in enumerate(sc.words)}
emb = sc.embeddings[[row[w] for w in corpus.vocab.id_to_word]]

print("bn_fc bn_beta  beta-grad ratio  alpha CV  median FC grad")
for bn_fc in (True, False):
    for bn_beta in (True, False):
        config = TrainConfig(n_topics=6, epochs=64, batch_size=128, burn_in_epochs=32, seed=0,
                             bn_fc=bn_fc, bn_beta=bn_beta, diagnostics=True)
        res = train(corpus, emb, config)
        s = bn_ablation_summary(res.diagnostics, res.params.alpha)
        print(f"{bn_fc!s:5} {bn_beta!s:7} {s['beta_grad_ratio']:16.3g} {s['alpha_cv']:9.3f} "
              f"{s['fc_grad_median']:15.3g}")

# Removing the beta-site normalization widens the gradient spread between
# topics by orders of magnitude. The spread of learned alpha stays about
# the same on this corpus, and dropping the normalization between FC layers
# does not shrink the FC gradients here.
