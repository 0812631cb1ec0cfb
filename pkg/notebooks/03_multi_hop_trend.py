"""
Graph transitions against the local baseline
============================================

Trains the sequence-only baseline and the graph reader with T = 0..3
transition steps on the same synthetic 2-hop data.  The graph reader needs
two transitions to carry the subject's evidence to the answer passage.
Expect roughly 10 minutes on one CPU core with the sizes below.
"""

from mhqa import GenConfig, TrainConfig, generate, train

train_set = generate(GenConfig(seed=1, num_instances=2000))
dev_set = generate(GenConfig(seed=2, num_instances=400), "dev")
protocol = dict(emb_dim=64, hidden=64, epochs=8, patience=3, seed=0)

# sequence-only reader: BiLSTM over the concatenated passages
_, local = train(train_set, dev_set, TrainConfig(model="local", **protocol))
print(f"local        dev acc {local.best_dev_accuracy:.3f}")

# graph reader, one run per transition count
for steps in range(4):
    _, rep = train(train_set, dev_set, TrainConfig(model="mhqa-grn", steps=steps, **protocol))
    print(f"mhqa-grn T={steps}  dev acc {rep.best_dev_accuracy:.3f}  per epoch {rep.dev_accuracy}")
