import math

import numpy as np
import pytest

import gat_lab as g


@pytest.fixture(scope="module")
def corpus():
    return g.generate_synthetic(n=240, image_size=8, val=40, test=60, seed=3)


def test_corpus_is_deterministic_and_split(corpus, tmp_path):
    again = g.generate_synthetic(n=240, image_size=8, val=40, test=60, seed=3)
    assert corpus == again
    assert len(corpus.indices("val")) == 40
    assert len(corpus.indices("test")) == 60
    imgs = corpus.images()
    assert imgs.shape == (240, 8, 8, 1)
    assert 0.0 <= imgs.min() and imgs.max() <= 1.0
    path = tmp_path / "c.gatc"
    corpus.save(path)
    assert g.load_corpus(path) == corpus
    assert g.load_corpus(path).checksum() == corpus.checksum()


def test_missing_corpus_raises_io_error(tmp_path):
    with pytest.raises(g.IoError):
        g.load_corpus(tmp_path / "nope.gatc")


def test_train_evaluate_and_checkpoint(corpus, tmp_path):
    model = g.build_model(corpus, ["macro"], [16], jigsaw_grid=2, seed=0)
    out = g.train(model, corpus, "gat", {"epochs": 2, "batch_size": 32})
    trained = out["model"]
    assert trained.task_names == ["target", "macro"]
    assert trained.enabled_tasks == [0]
    assert len(out["manifest"]["records"]) == 2
    logits = trained.predict(corpus.batch([0, 1, 2]))
    assert logits[0].shape == (3, 8) and logits[1] is None
    res = g.evaluate(trained, corpus, "test", {"epsilon": 0.0, "step": 0.01})
    assert res["count"] == 60
    assert res["clean_accuracy"] == res["robust_accuracy"]
    trained.save(tmp_path / "m.json")
    assert g.load_model(tmp_path / "m.json") == trained


def test_training_is_reproducible(corpus):
    model = g.build_model(corpus, [], [8], seed=1)
    a = g.train(model, corpus, "madry", {"epochs": 1})["model"]
    b = g.train(model, corpus, "madry", {"epochs": 1})["model"]
    assert a.parameters() == b.parameters()


def test_bad_config_raises(corpus):
    model = g.build_model(corpus, [], [8])
    with pytest.raises(g.ConfigError):
        g.train(model, corpus, "madry", {"patience": 0})
    with pytest.raises(g.ConfigError):
        g.train(model, corpus, "sideways", {})


def test_pgd_stays_in_ball(corpus):
    model = g.build_model(corpus, ["macro"], [16])
    ids = corpus.indices("test")[:20]
    out = g.pgd_attack(model, corpus, ids, {"epsilon": 0.05, "step": 0.01, "steps": 5}, seed=2)
    assert np.abs(np.asarray(out["delta"])).max() <= 0.05 + 1e-12
    assert out["attacked"] == [0]
    assert np.mean(out["loss_after"][0]) >= np.mean(out["loss_before"][0])


def test_mgda_matches_closed_form():
    rng = np.random.default_rng(0)
    g1, g2 = rng.normal(size=5), rng.normal(size=5)
    res = g.mgda(np.stack([g1, g2]), max_iters=10000, tol=1e-10)
    gamma, direction = g.min_norm_two_task(list(g1), list(g2))
    assert res["converged"]
    assert math.isclose(sum(res["weights"]), 1.0, abs_tol=1e-12)
    assert np.allclose(res["direction"], direction, atol=1e-6)
    assert math.isclose(res["weights"][0], gamma, abs_tol=1e-6)


def test_metrics():
    assert g.cosine([1, 0], [0, 1]) == pytest.approx(0.0)
    assert g.magnitude_similarity([1, 0], [2, 0]) == pytest.approx(0.8)
    assert g.hypervolume_2d([(0.0, 0.0)], (1.0, 1.0)) == pytest.approx(1.0)
    chi2, reject = g.mcnemar(10, 3)
    assert chi2 == pytest.approx(36 / 13) and not reject
    r, _ = g.pearson([1, 2, 3, 4], [2, 4, 6, 8.5])
    assert r > 0.99
    assert g.roc_auc([0.1, 0.9], [0, 1]) == 1.0


def test_tiny_experiment(tmp_path):
    rows = g.run_experiment("gat-vs-at", tmp_path / "exp", seeds=[0], config={"epochs": 1}, hidden=[8], n=300,
                            image_size=8)
    assert [r["variant"] for r in rows] == ["standard", "madry", "gat-macro"]
    assert (tmp_path / "exp" / "manifest.json").exists()
    assert "gat-vs-at" in g.preset_names()
