"""Smoke test for the cisa_py extension. Build it first with
`maturin develop` (or `maturin build` and pip install) in crates/python."""

import math
import tempfile
from pathlib import Path

import cisa_py


def main():
    anti = cisa_py.Environments("anticausal")
    assert anti.subtype == "anti-causal"
    assert len(anti.train) == 4
    for joint in anti.train + [anti.test]:
        assert math.isclose(sum(joint.probs), 1.0, abs_tol=1e-12)
    assert not anti.purely_spurious()
    assert cisa_py.Environments("anticausal_pure").purely_spurious()

    sig = anti.signature()
    assert sig["conditional"] < 1e-9 and sig["marginal"] > 1e-2

    f, iters, grad = cisa_py.train(anti, method="girmv1")
    assert f.cf_invariant(anti) and grad < 1e-8
    assert math.isclose(f.accuracy(anti.test), 0.75, abs_tol=1e-9)
    print("girmv1 on anticausal:", f, f"({iters} iterations)")

    desc = cisa_py.Environments("confdesc")
    g, _, _ = cisa_py.train(desc, method="girmv1")
    assert g.is_trivial()

    rows = anti.test.sample(1000, seed=3)
    assert rows == anti.test.sample(1000, seed=3) and len(rows) == 1000

    assert math.isclose(cisa_py.g_of_gamma(0.5, 0.25), 0.75, abs_tol=1e-12)
    dags = cisa_py.enumerate_dags()
    assert len(dags) == 72
    assert cisa_py.classify_dag(dags[0][0]) == dags[0][1]
    try:
        cisa_py.classify_dag("E->U\nU=>Y\n")
    except ValueError as e:
        assert "line 2" in str(e)
    else:
        raise AssertionError("malformed DAG accepted")

    assert all(passed for _, passed, _ in cisa_py.audit_theorems())

    with tempfile.TemporaryDirectory() as tmp:
        cfg = 'method = "girmv1"\n[env]\ndgp = "anticausal"\n'
        a = cisa_py.run_experiment(cfg, out_dir=tmp)
        assert (Path(tmp) / "report.toml").read_text() == a["report.toml"]
        assert cisa_py.run_experiment(a["manifest.toml"]) == a
        assert "cf_invariant = true" in a["report.toml"]

    print("smoke test passed")


if __name__ == "__main__":
    main()
