"""Smoke test for the `pvt` extension module.

Build and install first, e.g.:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/pvt-*.whl
    python python/smoke_test.py
"""

import math

import pvt


def check_model():
    m = pvt.Model([3, 4, 2], 7)
    assert m.num_variables == 6
    assert m.param_count == 3 * 4 + 4 + 4 + 4 * 2 + 2 + 2
    classes = [d["class"] for d in m.descriptors()]
    assert classes[:3] == ["multiplicative_matrix", "multiplicative_vector", "additive_vector"]
    assert m.freezable_ids() == [0, 1, 3, 4]

    x = [[0.2, -0.1, 0.5], [1.0, 0.3, -0.7], [-0.4, 0.8, 0.1]]
    y = [0, 1, 1]
    grads, buffered, loss = m.gradients(x, y, m.variable_ids())
    assert math.isclose(loss, m.loss(x, y))
    for vid, g in grads.items():
        fd = m.finite_diff(x, y, vid)
        err = max(abs(a - b) for a, b in zip(g, fd))
        assert err < 1e-7, (vid, err)
    # biases alone need no buffered activations
    _, buffered_bias, _ = m.gradients(x, y, [2, 5])
    assert buffered > 0 and buffered_bias == 0
    return m


def check_plans_and_costs(m):
    frozen, trained = pvt.make_plan(m, "pcpr", 0.5, 3, round=1, client=2)
    assert len(frozen) == 2 and sorted(frozen + trained) == m.variable_ids()
    assert math.isclose(pvt.expected_coverage("pr", 0.9, 10, 8), 0.1)

    full = m.costs(m.variable_ids(), 4)
    bias_only = m.costs([2, 5], 4)
    assert bias_only["activation_buffer_bytes"] == 0
    assert full["ctos_bytes"] > bias_only["ctos_bytes"]
    assert full["peak_memory_bytes"] == (
        full["param_bytes"] + full["activation_buffer_bytes"] + full["workspace_bytes"]
    )
    return bias_only


def check_wire(bias_only):
    deltas = {2: [0.5, -0.25, 0.0, 1.0], 5: [0.125, 2.0]}
    frame = pvt.encode(client=4, round=9, sample_count=32, deltas=deltas)
    assert frame[:4] == b"PVT1"
    assert len(frame) == bias_only["ctos_bytes"]
    back = pvt.decode(frame)
    assert back["client"] == 4 and back["round"] == 9 and back["deltas"] == deltas
    broken = bytearray(frame)
    broken[-1] ^= 0xFF
    try:
        pvt.decode(bytes(broken))
    except ValueError as e:
        assert "checksum" in str(e)
    else:
        raise AssertionError("corrupted frame decoded")


def check_data():
    x, y = pvt.synth_gaussian(3, 4, 10, 2.0, 1)
    assert len(x) == 30 and len(x[0]) == 4
    shards = pvt.partition(y, 3, 5, seed=2, alpha=0.5)
    assert sorted(i for s in shards for i in s) == list(range(30))


def check_run():
    config = """
layers = 4,8,3
synth.per_class = 30
synth.test_per_class = 10
num_clients = 6
clients_per_round = 3
rounds = 5
"""
    rows = pvt.run_config(config)
    assert [r["round"] for r in rows] == [1, 2, 3, 4, 5]
    assert rows[-1]["eval_loss"] < rows[0]["eval_loss"] * 1.5
    assert rows == pvt.run_config(config)


if __name__ == "__main__":
    model = check_model()
    bias_only = check_plans_and_costs(model)
    check_wire(bias_only)
    check_data()
    check_run()
    print("python smoke test passed")
