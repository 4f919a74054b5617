import math

import numpy as np
import pytest

import bespoke


def test_generate_and_estimate():
    d = bespoke.generate_dataset(3000, 5)
    assert d.n == 3000 and d.p == 2
    assert d.names == ["c1", "c2"]
    r = bespoke.estimate(d, "MR", "1 + c1 + c2 + c1:c2")
    assert r["method"] == "MR"
    assert r["converged"]
    psi, se = r["psi"][0], r["se"][0]
    assert abs(psi - 1.0) < 5 * se
    assert math.isclose(r["ci_lower"][0], psi - 1.959963984540054 * se, rel_tol=1e-12)


def test_dataset_from_arrays_and_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    n = 400
    c = rng.normal(size=(n, 1))
    s = (rng.random(n) < 0.5).astype(float)
    z = (rng.random(n) < 0.5).astype(float)
    a = s * (rng.random(n) < 0.3 + 0.4 * z)
    y = a + z + c[:, 0] + rng.normal(size=n)
    d = bespoke.Dataset(y, a, z, s, c, ["age"])
    path = str(tmp_path / "d.csv")
    bespoke.write_csv(d, path)
    back = bespoke.read_csv(path)
    assert np.array_equal(back.y, d.y)
    assert np.array_equal(back.c, d.c)
    assert back.names == ["age"]


def test_errors_map_to_exceptions(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,a,z\n1,0,1\n")
    with pytest.raises(bespoke.SchemaError):
        bespoke.read_csv(str(bad))
    d = bespoke.generate_dataset(500, 1)
    with pytest.raises(bespoke.ConfigError):
        bespoke.estimate(d, "MR", "1 + nope")
    assert issubclass(bespoke.ConfigError, bespoke.BespokeError)


def test_crossfit_and_folds():
    folds = bespoke.make_folds(7, 3, 2)
    assert sorted(np.bincount(folds)) == [2, 2, 3]
    d = bespoke.generate_dataset(1500, 3)
    full = bespoke.estimate(d, "MR", "1 + c1 + c2 + c1:c2", variance="fixed")
    k1 = bespoke.crossfit(d, "MR", "1 + c1 + c2 + c1:c2", K=1)
    assert k1["psi"][0] == full["psi"][0]


def test_marginal_and_did():
    d = bespoke.generate_dataset(3000, 9)
    r = bespoke.np_att(d, "1 + c1 + c2 + c1:c2")
    assert math.isfinite(r["psi"][0])
    rng = np.random.default_rng(2)
    n = 2000
    z = (rng.random(n) < 0.5).astype(float)
    a = (rng.random(n) < 0.3 + 0.4 * z).astype(float)
    u = rng.normal(size=n)
    y0 = 1 + u + 0.5 * z + rng.normal(size=n)
    y1 = 2 + u + 0.5 * z + a + rng.normal(size=n)
    p = bespoke.Dataset.panel(y0, y1, a, z, np.zeros((n, 0)))
    r = bespoke.did(p, "1")
    assert abs(r["psi"][0] - 1.0) < 5 * r["se"][0]


def test_simulate_summary():
    rows = bespoke.simulate("all_correct", 500, 2, 7, ["MR", "TSLS"])
    assert [r["estimator"] for r in rows] == ["MR", "TSLS"]
    assert all(r["completed"] == 2 for r in rows)
    one = bespoke.simulate("m1", 500, 1, 7, ["MR"])
    assert one[0]["se"] is None
