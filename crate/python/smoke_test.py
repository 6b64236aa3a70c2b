"""Smoke test for the openloop_pmp extension module.

Build and install first:  pip install maturin && maturin develop -m crates/python/Cargo.toml
"""

import math

import openloop_pmp as olp


def main() -> None:
    assert set(olp.scenario_names()) == {"cheapest-stop", "cheapest-stop-deterministic", "nonlinear-drift"}

    scenario = olp.Scenario("cheapest-stop", x0=1.0, v0=1.0, k=1.0, t1=1.0, steps=100)
    result = scenario.solve()
    assert result.converged, result
    assert result.residual_max < 1e-8
    assert result.nu == -1.0
    assert math.isclose(result.total_cost, olp.CHEAPEST_STOP_REFERENCE_COST, rel_tol=1e-10)

    # Braking: negative and affine in t.
    u, t = result.control, result.times
    assert all(v < 0 for v in u)
    slope = (u[-1] - u[0]) / (t[-1] - t[0])
    assert max(abs(v - (u[0] + slope * s)) for v, s in zip(u, t)) < 1e-7

    direct = olp.Scenario("cheapest-stop", steps=30).solve_direct()
    assert math.isclose(direct.total_cost, olp.CHEAPEST_STOP_REFERENCE_COST, rel_tol=1e-6)

    report = scenario.verify(result)
    assert report["passed"], report

    cloud = scenario.attainable(200, 2.0, seed=7, knots=3)
    assert len(cloud) == 200
    assert min(cost for cost, _ in cloud) >= result.total_cost - 1e-6

    assert math.isclose(scenario.expected_cost(result.control), result.total_cost, rel_tol=1e-12)

    try:
        olp.Scenario("unknown")
    except ValueError as err:
        assert "cheapest-stop" in str(err)
    else:
        raise AssertionError("unknown scenario accepted")

    print("smoke test passed:", result)


if __name__ == "__main__":
    main()
