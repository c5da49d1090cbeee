"""Smoke test for the phasefb Python bindings.

Build the extension first, for example

    cargo build --release -p phasefb-py --features extension-module
    cp target/release/libphasefb_py.so python/phasefb_py.so

then run ``python3 python/smoke_test.py``.
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import phasefb_py as pf


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(pf.eta(1), 2 / math.pi)
    assert close(pf.nmmse(1), 1 - 4 / math.pi**2)
    assert pf.nmmse_pl(0.5) > pf.nmmse_pl(0.75)

    greedy = pf.allocate([1.0, 0.1, 0.01], 6)
    brute = pf.allocate([1.0, 0.1, 0.01], 6, method="bruteforce")
    assert sum(greedy.bits) == 6
    assert close(greedy.objective, brute.objective)

    q, index, residual = pf.quantize_phase(1.0, 3)
    assert close(q + residual, 1.0)
    assert 0 <= index < 8

    geom = pf.Geometry(16, 0.5, 1.0, 0.9)
    a = pf.array_response(0.3, geom.lambda_dl, geom)
    assert len(a) == 16 and all(close(abs(x), 1.0) for x in a)

    users = []
    for k, aoa in enumerate([-0.6, 0.1, 0.7]):
        paths = [pf.Path(aoa, 1.0, 30.0, phase_dl=0.4 * k), pf.Path(aoa + 0.3, 0.5, 45.0, phase_dl=1.1)]
        rc = pf.reconstruct(paths, [4, 2], geom)
        trace = sum(rc.error_cov[i][i].real for i in range(16))
        expected = 16 * (1.0 * pf.nmmse(4) + 0.25 * pf.nmmse(2))
        assert close(trace, expected, 1e-10), (trace, expected)
        users.append((rc, pf.dl_channel(paths, geom)))

    estimates = [rc.estimate for rc, _ in users]
    covs = [rc.error_cov for rc, _ in users]
    noise = [1e-2] * 3
    out = pf.gpip(estimates, covs, noise, 1.0)
    norm = math.sqrt(sum(abs(x) ** 2 for f in out.precoder for x in f))
    assert close(norm, 1.0, 1e-10)
    assert out.se_trace[-1] >= out.se_trace[0] - 1e-12

    channels = [h for _, h in users]
    se_gpip = pf.sum_se(out.precoder, channels, noise, 1.0)
    se_zf = pf.sum_se(pf.zf(estimates), channels, noise, 1.0)
    assert se_gpip > 0 and se_zf > 0

    cfg = "antennas = 8\nusers = 2\npaths = 2\nbtot = [0, 4]\ntrials = 4\n"
    rows = pf.simulate("mse", cfg, seed=1)
    assert rows and {"method", "metric", "mean", "std_err"} <= rows[0].keys()
    assert rows == pf.simulate("mse", cfg, seed=1)
    drops = pf.precode("zf", cfg, seed=1)
    assert len(drops) == 8

    try:
        pf.allocate([1.0, -1.0], 3)
    except ValueError:
        pass
    else:
        raise AssertionError("negative weight accepted")

    print(f"ok: gpip {se_gpip:.3f} vs zf {se_zf:.3f} bit/s/Hz, {len(rows)} mse records")


if __name__ == "__main__":
    main()
