"""Smoke test for the certreach_py extension module.

Build and run:

    cargo build -p certreach-python --release --features extension-module
    cp target/release/libcertreach_py.so python/certreach_py.so
    python3 python/smoke_test.py
"""

import json
import math
import pathlib

import certreach_py as cr

ROOT = pathlib.Path(__file__).resolve().parent.parent
SYSTEM = ROOT / "data" / "double_integrator" / "system.toml"


def main():
    system = cr.System.load(str(SYSTEM))
    assert system.state_dim == 2 and system.horizon == 1.0
    assert abs(system.target([0.0, 0.0]) + 0.5) < 1e-15
    # forward set with min control: H = -x2*p1 - |p2|
    assert abs(system.hamiltonian(0.0, [0.0, 0.4], [2.0, -3.0]) + 3.8) < 1e-12

    net = cr.ValueNet(2, hidden=[8], omega=3.0, seed=1)
    v = net(0.5, [0.1, -0.2])
    dt, dx = net.gradients(0.5, [0.1, -0.2])
    h = 1e-6
    fd = (net(0.5 + h, [0.1, -0.2]) - net(0.5 - h, [0.1, -0.2])) / (2 * h)
    assert math.isfinite(v) and abs(dt - fd) < 1e-6 * (1 + abs(fd)) and len(dx) == 2

    trained, converged, epochs = cr.train(system, net, "batch_size = 64\nmax_epochs = 20\n")
    assert epochs == 20 and trained.params != net.params

    cert = json.loads(cr.certify(system, trained, 1e6, 1e6))
    assert cert["verdict"] == "unsat", cert["verdict"]

    cv = cr.CertifiedValue(trained, system, 0.015, 0.285)
    assert abs(cv.epsilon_total(0.0) - 0.3) < 1e-15
    rows = cv.grid(0.0, 5)
    assert len(rows) == 25
    assert {c for _, _, c in rows} <= {"in_under", "in_over_only", "outside"}
    assert cv.classify(0.0, [0.0, 0.0]) == rows[12][2]

    try:
        cr.System.load(str(ROOT / "missing.toml"))
    except OSError as e:
        assert "missing.toml" in str(e)
    else:
        raise AssertionError("missing system file accepted")

    print("smoke test passed:", cr.__version__, system, trained, f"{len(cert['queries'])} queries")


if __name__ == "__main__":
    main()
