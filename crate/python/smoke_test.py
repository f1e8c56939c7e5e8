"""Smoke test for the `lame` extension module.

Build and install first:  pip install ./crates/python --no-build-isolation
"""

import json
import math
import tempfile
from pathlib import Path

import lame


def main():
    corpus = lame.synthetic_corpus(num_labels=3, docs_per_label=10, seed=1)
    assert len(corpus) == 30 and not corpus.multi_label
    texts = corpus.texts + [d for _, _, d in corpus.labels]
    vocab = lame.Vocab.build(texts, 150)
    assert vocab.tokens()[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    ids, pieces = lame.tokenize(corpus.texts[0], vocab)
    assert pieces[0] == "[CLS]" and pieces[-1] == "[SEP]" and len(ids) == len(pieces)

    model = lame.Model(corpus, vocab, seed=0, config="hidden = 32\ninit_std = 0.1")
    log = model.train(corpus, epochs=3, batch_size=8, lr_encoder=1e-3, lr_label_attention=1e-3)
    assert len(log["train_loss"]) == 3 and all(math.isfinite(x) for x in log["train_loss"])
    print("train loss per epoch:", [round(x, 4) for x in log["train_loss"]])

    probs = model.predict(corpus.texts[:4])
    assert all(abs(sum(p) - 1.0) < 1e-9 for p in probs)

    record = json.loads(model.explain(corpus.texts[0], top_k=3))
    weights = [t["weight"] for t in record["labels"][0]["tokens"]]
    assert abs(sum(weights) - 1.0) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "model.ckpt"
        digest = model.save(str(path))
        assert len(digest) == 64
        again = lame.Model.load(str(path), vocab)
        assert again.predict(corpus.texts[:4]) == probs
        assert again.config_hash() == model.config_hash()

    assert abs(lame.f_measure_loss([[0.8]], [[1.0]], eps=1e-12) - (1 - 0.5 * 1.6 / 1.8)) < 1e-12
    assert lame.stlr(0, 100, 0.032) == 0.001
    assert lame.micro_prf([[True, False]], [[True, True]])[2] == 2 / 3
    assert lame.accuracy([0, 1], [0, 0]) == 0.5
    print("smoke test passed")


if __name__ == "__main__":
    main()
