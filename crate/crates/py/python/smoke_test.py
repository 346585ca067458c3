"""Smoke test for the fedtrade Python bindings.

Run after `pip install --no-build-isolation -e crates/py`:

    python crates/py/python/smoke_test.py
"""

import json
import math
import tempfile

import fedtrade

SPEC = {
    "task": "classification",
    "samples_per_client": [40, 40, 40, 40],
    "height": 8,
    "width": 8,
    "delta_style": 0.6,
    "delta_content": 0.2,
}


def check_federation():
    fed = fedtrade.make_federation(json.dumps(SPEC))
    assert fed.num_clients == 4
    assert math.isclose(sum(fed.weights()), 1.0)
    test, train, val = fed.splits(0)
    assert (len(test), len(train), len(val)) == (4, 30, 6)
    images = fed.images(1)
    assert images.shape == [40, 1, 8, 8]
    assert len(fed.labels(1)) == 40
    with tempfile.TemporaryDirectory() as d:
        fed.persist(d)
        again = fedtrade.load_federation(d)
        assert again.images(1).data == images.data
    return fed


def check_operators(fed):
    x = fed.images(0)
    ref = fed.images(2)
    one = fedtrade.Tensor([1, 8, 8], x.data[:64])
    other = fedtrade.Tensor([1, 8, 8], ref.data[:64])
    assert fedtrade.mixstyle(one, other, 1.0).data == one.data
    same = fedtrade.fda(one, one, 0.1)
    assert max(abs(a - b) for a, b in zip(same.data, one.data)) < 1e-9
    matched = fedtrade.hist_match(one, other)
    assert sorted(matched.data) == sorted(other.data)
    styled = fedtrade.adain(one, other)
    assert styled.shape == [1, 8, 8]
    diff = fedtrade.amplified_difference(one, one)
    assert set(diff.data) == {0.0}


def check_metrics():
    seg = fedtrade.seg_metrics([1, 1, 1, 1, 1, 1, 0, 0, 0, 0], [1, 1, 1, 0, 0, 0, 1, 0, 0, 0])
    assert math.isclose(seg["dice"], 0.6)
    assert math.isclose(seg["iou"], 3 / 7)
    truth = [1] * 50 + [0] * 50
    pred = [1] * 45 + [0] * 5 + [1] * 10 + [0] * 40
    cls = fedtrade.cls_metrics(pred, truth, 2)
    assert math.isclose(cls["kappa"], 0.7)


def check_experiment():
    config = {
        "federation": SPEC,
        "model": {"arch": "mlp_bn", "hidden": [8, 8]},
        "strategy": {"name": "fedavg"},
        "harmonize": {"kind": "hist_sri"},
        "rounds": 3,
        "lr": 0.1,
        "batch_size": 16,
        "seed": 1,
    }
    text = json.dumps(config)
    a = fedtrade.run_experiment(text)
    b = fedtrade.run_experiment(text)
    assert a.to_csv() == b.to_csv()
    assert a.method == "hist_sri"
    assert len(a.rows()) == 4 * 6
    assert 0.0 <= a.value("0", "accuracy") <= 1.0
    assert len(a.rounds_jsonl().splitlines()) == 3
    assert fedtrade.config_hash(text) == fedtrade.config_hash(text)

    bad = dict(config, strategy={"name": "fedadam", "eta": 10.0}, rounds=40, harmonize={"kind": "none"})
    try:
        fedtrade.run_experiment(json.dumps(bad))
    except fedtrade.DivergenceError as e:
        assert "round" in str(e)
    else:
        raise AssertionError("expected divergence")

    try:
        fedtrade.run_experiment(json.dumps(dict(config, lerning_rate=0.1)))
    except ValueError as e:
        assert "lerning_rate" in str(e)
    else:
        raise AssertionError("expected a config error")


if __name__ == "__main__":
    fed = check_federation()
    check_operators(fed)
    check_metrics()
    check_experiment()
    print("fedtrade", fedtrade.__version__, "smoke test passed")
