import numpy as np
import pytest

import sdkd


def softmax_ref(e, t):
    z = -(e - e.min()) / t
    w = np.exp(z)
    return w / w.sum()


def test_softmax_matches_numpy():
    e = np.array([0.3, -1.2, 2.0, 0.0])
    np.testing.assert_allclose(sdkd.softmax_t(e, 2.0), softmax_ref(e, 2.0), rtol=1e-14)


def test_linear_energies_follow_weight_layout():
    m = sdkd.Model.linear(3, 4)
    m.init_uniform(seed=1, scale=1.0)
    w = m.out_weights
    assert w.shape == (3, 4)
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(m.energies(x), -(x @ w + m.out_bias), rtol=1e-13)
    assert m.predict(x) == int(np.argmin(m.energies(x)))
    np.testing.assert_array_equal(m.energies_subset(x, [2, 0]), m.energies(x)[[2, 0]])


def test_full_gradient_zero_when_targets_match():
    m = sdkd.Model.mlp(2, 4, 3)
    m.init_uniform(seed=3)
    x = np.array([0.2, -0.7])
    p = sdkd.softmax_t(m.energies(x), 1.5)
    g = sdkd.full_distill_grad(m, x, p, 0, 1.5)
    for v in g.values():
        assert np.abs(v).max() < 1e-15
    assert g["out_weights"].shape == (4, 3)


def test_is_estimator_zero_without_samples():
    m = sdkd.Model.linear(2, 5)
    m.init_uniform(seed=2)
    g = sdkd.is_distill_grad(m, np.array([0.4]), np.array([1.0, 2.0]), 1, [], np.array([]), 2.0)
    assert all(np.all(v == 0) for v in g.values())


def test_pdbs_select_example():
    p = np.array([0.7, 0.1, 0.1, 0.1])
    q = np.array([0.25, 0.25, 0.25, 0.25])
    assert sdkd.pdbs_select(p, q, 2, 0) == [0, 1]


def test_alias_sampling_frequencies():
    pmf = sdkd.build_mixture_pmf(bins=50, b2=5.0)
    assert abs(pmf.sum() - 1.0) < 1e-12
    t = sdkd.AliasTable(pmf)
    np.testing.assert_allclose(t.pmf(), pmf, atol=1e-12)
    draws = t.sample(200000, seed=4)
    freq = np.bincount(draws, minlength=50) / draws.size
    assert np.abs(freq - pmf).max() < 0.01
    with pytest.raises(ValueError):
        sdkd.AliasTable(np.array([0.5, 0.6]))


def test_blobs_and_relabel_rows():
    d = sdkd.gen_blobs(n_classes=5, samples_per_class=10, dim=3, seed=1)
    assert d["x_train"].shape == (40, 3)
    assert len(d["y_test"]) == 10
    m = sdkd.Model.linear(3, 5)
    m.init_uniform(seed=0, scale=1.0)
    probs = sdkd.relabel(m, d["x_train"], 2.0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    m = sdkd.Model.mlp(3, 4, 6)
    m.init_uniform(seed=5)
    m.save(tmp_path / "m.sdkd")
    assert sdkd.Model.load(tmp_path / "m.sdkd") == m


def test_cli_exit_codes(tmp_path):
    rc, out, _ = sdkd.cli([])
    assert rc == 2 and "Usage" in out
    cfg = tmp_path / "c.json"
    cfg.write_text('{"data": {"n_classes": 4, "samples_per_class": 10, "dim": 2},'
                   ' "teacher": {"epochs": 2}, "train": {"epochs": 1}}')
    rc, _, err = sdkd.cli(["grid", "--config", str(cfg), "--method", "dis", "--k", "2",
                           "--out", str(tmp_path / "o")])
    assert rc == 0, err
    assert (tmp_path / "o" / "results.csv").read_text().startswith("method,k,seed,top1")
    assert sdkd.cli(["grid", "--nope"])[0] == 2
