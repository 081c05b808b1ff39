"""Smoke test for the pyparabloch extension.

Build and install it first:

    pip install --no-build-isolation -e crates/python
"""

import cmath
import json
import math
import tempfile

import pyparabloch as pb


def main():
    assert pb.fold_gap(21, 7.0) == (True, 8.0)

    c = pb.gaussian_coefficients(21, 7.0, math.pi / 4)
    assert abs(sum(abs(z) ** 2 for z in c.values()) - 1.0) < 1e-12

    basis = pb.Basis()
    energies = basis.energies()
    assert sorted(energies) == list(range(10, 33))
    spacing = energies[22] - energies[21]
    assert abs(spacing - 21.5) < 0.05, spacing

    dt = 2 * math.pi / 512
    q0 = basis.record(c)
    lo, hi = min(c), max(c)
    rec = pb.reconstruct_signal(q0, dt, (lo, hi), energies)
    theta = cmath.phase(sum(c[n].conjugate() * rec[n] for n in c))
    worst_amp = max(abs(abs(rec[n]) - abs(c[n])) for n in c)
    worst_phase = max(
        abs(cmath.phase(rec[n] / c[n] * cmath.exp(-1j * theta))) for n in c
    )
    print(f"max amplitude error {worst_amp:.2e}, max phase error {worst_phase:.2e}")
    assert worst_amp < 0.02 and worst_phase < 0.05

    with tempfile.TemporaryDirectory() as out:
        summary = json.loads(pb.run_pipeline(out=out))
        print(f"pipeline fidelity {summary['fidelity']:.7f}")
        assert summary["fidelity"] > 0.99

    try:
        pb.Basis(v0=-1.0)
    except ValueError as e:
        print(f"rejected: {e}")
    else:
        raise AssertionError("negative depth accepted")
    print("ok")


if __name__ == "__main__":
    main()
