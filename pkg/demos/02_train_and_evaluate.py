"""Train CausE on the bundled 50-entity KG and compare the three score views.

Run:  python demos/02_train_and_evaluate.py   (about 15 seconds)
"""

from cause_kge import build_filter_index, evaluate, score_separation, train
from cause_kge.resources import load_synthetic50, synthetic50_config

kg = load_synthetic50()
print(f"{kg.vocab.n_entities} entities, {kg.vocab.n_relations} relations, "
      f"{len(kg.train)}/{len(kg.valid)}/{len(kg.test)} train/valid/test triples")

config = synthetic50_config()
result = train(config, kg.vocab, kg.train, kg.valid)
first, last = result.log[0], result.log[-1]
print(f"total loss {first['total']:.3f} (epoch 1) -> {last['total']:.3f} (epoch {last['epoch']})")
print(f"best validation MRR {result.best_metric:.4f} at epoch {result.epoch}")

filt = build_filter_index(kg.train, kg.valid, kg.test)
for view in ("causal", "confounder", "intervention"):
    rep = evaluate(result.table, kg.test, filt, view, config.op)
    print(f"{view:12s} MRR {rep.mrr:.4f}  H@1 {rep.hits1:.3f}  H@3 {rep.hits3:.3f}  H@10 {rep.hits10:.3f}")

# how well each view separates true test triples from random corruptions
auc_caus, auc_conf, auc_inter = score_separation(result.table, kg.test, rng=0)
print(f"AUC causal {auc_caus:.3f}  confounder {auc_conf:.3f}  intervention {auc_inter:.3f}")
