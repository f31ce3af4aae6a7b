"""
Topic coherence with NPMI
=========================

Co-occurrence is counted over sliding windows of the reference corpus, and a
topic's score is the mean normalized PMI of its word pairs.
"""
from nvae.metrics import cooc_counts, npmi_model, npmi_pair, npmi_topic

reference = [
    "apple banana cherry apple".split(),
    "apple banana".split(),
    "engine wheel brake".split(),
    "wheel brake engine wheel".split(),
]
stats = cooc_counts(reference, window=2)
print("windows:", stats.window_count)

print("apple/banana", round(npmi_pair("apple", "banana", stats), 3))
# Words that never share a window score -1.
print("apple/engine", npmi_pair("apple", "engine", stats))

fruit = ["apple", "banana", "cherry"]
cars = ["engine", "wheel", "brake"]
mixed = ["apple", "wheel", "cherry"]
for name, topic in (("fruit", fruit), ("cars", cars), ("mixed", mixed)):
    print(f"{name:6s}", round(npmi_topic(topic, stats), 3))
print("model  ", round(npmi_model([fruit, cars], stats), 3))
