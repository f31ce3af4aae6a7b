"""
Recovering planted topics
=========================

Sample a small corpus from a known topic model, train the N-VAE on it and
check how well the document clusters match the planted labels.
"""
import numpy as np

from nvae import DocBatch, TrainConfig, build_corpus, export_topics, infer_theta, train
from nvae.metrics import nmi, purity
from nvae.synth import synth_corpus

# Three topics with 100 words each, 200 documents per topic, 12 tokens per
# document. Word vectors cluster around one center per topic.
sc = synth_corpus(n_topics=3, docs_per_topic=200, doc_length=12, seed=7)
corpus = build_corpus(sc.token_docs, labels=sc.labels)
print(len(corpus), "documents,", len(corpus.vocab), "word types")

# Embedding rows (a V x D array) must follow the corpus vocabulary order.
row = {w: i for i, w in enumerate(sc.words)}
emb = sc.embeddings[[row[w] for w in corpus.vocab.id_to_word]]

config = TrainConfig(n_topics=3, epochs=64, batch_size=128, burn_in_epochs=32, min_temperature=0.7, seed=0)
result = train(corpus, emb, config)
print("final loss per document:", round(result.history[-1]["loss"], 3))

# Inference uses population batch-norm statistics and no sampling noise.
theta, clusters = infer_theta(result.params, DocBatch(corpus.docs), config.min_temperature)
print("NMI    ", round(nmi(clusters, corpus.labels), 3))
print("purity ", round(purity(clusters, corpus.labels), 3))
print("learned alpha:", np.round(result.params.alpha, 3))

for k, words in enumerate(export_topics(result.params, corpus.vocab, top_n=8)):
    print(f"topic {k}:", " ".join(words))
