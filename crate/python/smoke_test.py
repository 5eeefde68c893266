"""Smoke test for the pypchn extension module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, then run
`python3 python/smoke_test.py`.
"""

import pypchn

cfg = pypchn.Config({
    "architecture": "custom:12,8",
    "n_targets": 3,
    "epochs": 10,
    "horizon": 5,
    "flip_bits": 2,
})
assert cfg.total_units == 20
targets = cfg.targets()
assert len(targets) == 3 and all(len(t) == 20 for t in targets)

net = cfg.build_network()
mse = pypchn.train(cfg, net)
assert net.frozen
assert mse[-1] < mse[0], mse
print(f"trained: mse {mse[0]:.3g} -> {mse[-1]:.3g}")

study = pypchn.perturb(cfg, net)
runs = study.runs()
assert len(runs) == 3
assert study.csv().startswith("run_id,t,target_id,distance,metric,flags\n")
print(f"perturbation success {study.success_fraction:.2f}")

spectrum = pypchn.stability(cfg, net, 0)
assert len(spectrum.eigenvalues) == 40
assert spectrum.all_stable == (spectrum.max_real_part < 0)
print(spectrum.summary())

# checkpoint round trip into a fresh network
other = cfg.build_network()
other.load_checkpoint(net.checkpoint())
assert other.checkpoint() == net.checkpoint()

net.set_values(targets[0])
net.reset_errors()
e0 = net.energy()
net.step_fast(10)
assert len(net.values()) == 20 and net.energy() >= 0.0 and e0 >= 0.0

try:
    net.set_values([0.0] * 3)
except ValueError as e:
    print("rejected:", e)
else:
    raise AssertionError("short vector accepted")

try:
    pypchn.Config({"tau": 10, "gamma": 5})
except ValueError:
    pass
else:
    raise AssertionError("inverted time constants accepted")

pattern = [1.0 if i % 3 else -1.0 for i in range(20)]
hn = pypchn.HopfieldNet.store([pattern])
assert hn.is_fixed_point(pattern)
probe = list(pattern)
probe[0] = -probe[0]
probe[5] = -probe[5]
v, sweeps, converged = hn.recall(probe, 50, 1)
assert v == pattern and converged, (v, sweeps)
gap = hn.energy(pattern) - pypchn.interaction_energy([pattern], pattern)
assert abs(gap - 10.0) < 1e-12, gap

exact, within_one, csv = pypchn.hopfield_baseline(cfg)
assert csv.startswith("run_id,target_id,initial_distance,final_distance,sweeps,converged\n")
print(f"hopfield exact {exact:.2f}, within one bit {within_one:.2f}")

print("smoke test passed")
