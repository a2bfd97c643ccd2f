"""Quick check of the compiled module: python python/smoke_test.py"""
import math

import qmitdd

v = [0.3, -0.7, 0.2, 0.9, -0.1, 0.5]
w = [-0.4, 0.6, 0.8, 0.1, 0.3, -0.9]
d = qmitdd.squared_distance(v, w)
assert math.isclose(d, sum((a - b) ** 2 for a, b in zip(v, w)))

assert qmitdd.circuit_shape("swap", v, w)[0] == 6
assert qmitdd.circuit_shape("h", v, w)[0] == 4

p = qmitdd.ideal_probability("h", v, w)
nv = math.sqrt(sum(a * a for a in v))
nw = math.sqrt(sum(b * b for b in w))
assert math.isclose(p, 0.5 + sum(a * b for a, b in zip(v, w)) / (2 * nv * nw), abs_tol=1e-12)

noise = qmitdd.NoiseModel()
assert 0 < noise.q1 < noise.q2 < 0.01
series = qmitdd.probability_series("h", v, w, 3, noise)
assert len(series) == 4 and abs(series[0] - 0.5) > abs(series[-1] - 0.5)

mitigated, raw = qmitdd.estimate_distance(v, w, "h", "richardson", 6, 10**8, noise, 1)
assert abs(mitigated - d) < abs(raw - d)

r = qmitdd.solve_truss("classical", seed=1)
assert r.converged and r.sigma_rms < 0.02
print(f"d={d:.4f} mitigated={mitigated:.4f} raw={raw:.4f} truss sigma_rms={r.sigma_rms:.4%}")
print("ok")
