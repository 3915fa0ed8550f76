"""Smoke tests for the python bindings."""

import json
import math
import os
import tempfile

import pytest

import argmaxgrad as ag


def test_version_and_constants():
    assert ag.__version__
    assert abs(ag.EULER_GAMMA - 0.5772156649015329) < 1e-15


def test_gumbel_max_frequencies_follow_softmax():
    logits = [0.3, -0.5, 1.1]
    exps = [math.exp(v) for v in logits]
    z = sum(exps)
    probs = [e / z for e in exps]

    counts = [0, 0, 0]
    draws = 20000
    gammas = ag.sample_gumbel(3 * draws, seed=7)
    for i in range(draws):
        counts[ag.gumbel_max_sample(logits, gammas[3 * i : 3 * i + 3])] += 1
    for c in range(3):
        assert abs(counts[c] / draws - probs[c]) < 0.02


def test_gumbel_softmax_relax_is_a_simplex_point():
    gamma = ag.sample_gumbel(4, seed=3)
    s = ag.gumbel_softmax_relax([0.2, -0.1, 0.4, 0.0], gamma, tau=0.7)
    assert all(v > 0 for v in s)
    assert abs(sum(s) - 1.0) < 1e-12


def test_perturbed_argmax_degenerates_at_eps_zero():
    logits = [0.1, 0.9, -0.3]
    f = [5.0, -2.0, 1.0]
    for i in range(200):
        gamma = ag.sample_gumbel(3, seed=100 + i)
        assert ag.perturbed_argmax(logits, f, 0.0, gamma) == ag.gumbel_max_sample(
            logits, gamma
        )


def test_maxflow_agrees_with_brute_force():
    p = ag.PairwisePotentials(
        4,
        [[0.0, 0.8], [0.2, -0.1], [0.0, 0.5], [0.3, 0.0]],
        [(0, 1, 1.5), (1, 2, 0.7), (2, 3, 0.2)],
    )
    assert p.supermodular()
    bf = ag.brute_force_map(p)
    mf = ag.maxflow_map(p)
    assert abs(ag.score(p, bf) - ag.score(p, mf)) < 1e-12
    assert ag.exact_log_partition(p) >= ag.score(p, bf)


def test_potentials_json_round_trip():
    p = ag.PairwisePotentials(3, [[0, 1], [1, 0], [0.5, 0.5]], [(0, 2, 0.4)])
    q = ag.PairwisePotentials.from_json(p.to_json())
    assert json.loads(q.to_json()) == json.loads(p.to_json())


def test_direct_estimator_tracks_the_exact_gradient():
    est_norm, exact_norm, cos = ag.direct_gradient_norm(
        input_dim=6, k=4, seed=1, eps=0.1, draws=20000
    )
    assert exact_norm > 0
    assert cos > 0.9


def test_run_experiment_improves_on_synthetic_bars():
    with tempfile.TemporaryDirectory() as tmp:
        spec = {
            "kind": "train",
            "dataset": {"synthetic": "bars", "n": 512, "test_n": 64},
            "model": {"latent": "categorical", "k": 8, "hidden": 16},
            "train": {
                "estimator": "direct",
                "epsilon": 1.0,
                "learning_rate": 3e-3,
                "epochs": 10,
                "batch_size": 16,
                "seed": 0,
            },
            "output_dir": os.path.join(tmp, "out"),
        }
        result = ag.run_experiment(json.dumps(spec))
        # Untrained bars models sit near 16*log(2) + KL ~ 11; training helps.
        assert result["final_test_loss"] < 10.0
        assert os.path.exists(result["summary_path"])


def test_load_idx_reads_bundled_mnist_headers():
    src = os.environ.get("ARGMAXGRAD_SOURCE_DIR")
    if not src:
        src = os.path.dirname(os.path.dirname(os.path.dirname(__file__)))
    path = os.path.join(src, "data", "mnist", "t10k-images-idx3-ubyte.gz")
    if not os.path.exists(path):
        pytest.skip("bundled MNIST not present")
    info = ag.load_idx(path)
    assert info["count"] == 10000
    assert info["dim"] == 784
