"""Smoke test for the catdisp extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`
(needs maturin), then run `python3 crates/python/python/smoke_test.py`.
"""

import json
import math

import catdisp


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    means = catdisp.offspring_means(1.0, 1.0, 1.0, 2)
    expected = [2.0, 1.5, 4.0 / 3.0, 4.0 - 4.0 * math.log(2.0)]
    assert all(close(m, e, 1e-9) for m, e in zip(means, expected)), means

    yule = catdisp.offspring_means(1.0, 1.0, 1.0, 3, growth="yule")
    assert math.isinf(yule[0]) and all(math.isfinite(m) for m in yule[1:]), yule

    pmf = catdisp.offspring_pmf(2.0, 1.0, 0.7, 1, "D3")
    assert pmf == catdisp.offspring_pmf(2.0, 1.0, 0.7, 1, "D4")
    assert close(sum(pmf), 1.0, 1e-9)

    # roots of p q^2 - q + (1 - p) are 1 and (1 - p) / p
    q = catdisp.extinction_probability(1.0, 1.0, 0.75, 2, "D1")
    assert close(q, 1.0 / 3.0, 1e-10), q
    assert catdisp.extinction_probability(1.0, 1.0, 0.45, 2, "D1") == 1.0

    constant = json.dumps({"type": "constant", "theta": 1.0, "lambda": 1.0, "p": 0.6, "d": 2})
    verdict = catdisp.classify(constant, "D1")
    assert verdict["outcome"] == "SurvivalPositive", verdict
    fertility = json.dumps({"type": "fertility_decay", "lambda0": 2.0, "beta": 0.1, "theta": 3.0, "p": 0.9, "d": 3})
    assert catdisp.classify(fertility, "D4")["outcome"] == "ExtinctionAS"

    a = catdisp.simulate(constant, "D1", 100, 2000, 42)
    b = catdisp.simulate(constant, "D1", 100, 2000, 42)
    assert a == b and a["master_seed"] == 42, (a, b)
    survival = 1.0 - 0.4 / 0.6
    stderr = math.sqrt(survival * (1.0 - survival) / 2000)
    assert abs(a["survival_frequency"] - survival) <= 4 * stderr, a

    try:
        catdisp.offspring_means(1.0, 1.0, 1.5, 2)
    except ValueError:
        pass
    else:
        raise AssertionError("p > 1 must be rejected")

    passed, groups = catdisp.verify()
    assert passed and len(groups) >= 10, groups
    print("smoke test passed:", len(groups), "oracle groups")


if __name__ == "__main__":
    main()
