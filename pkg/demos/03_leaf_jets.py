"""
Leaf jets under the flow
========================

Random admissible leaves are carried by the canonical flow.  In the splitting
frame the order-k jet shrinks by exactly lambda_+^(-(k+2) t); the
finite-difference oracle reproduces the transported slopes.
"""
import numpy as np

from anosovlab import adapted_metric as am
from anosovlab import flow_core as fc
from anosovlab import leaves as lv

model = fc.make_model("canonical")
lam, cs = am.hyperbolicity_constants(model)
params = am.choose_averaging_params(model, lam, cs)
es, eu = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
metric2 = am.MetricTwo(model, params, lambda X: np.tile(es, (len(X), 1)),
                       lambda X: np.tile(eu, (len(X), 1)))

rng = np.random.default_rng(2)
L = lv.random_leaves(metric2, rng.random((4, 3)), rng, M0=2.0)
for leaf in L:
    leaf.coeffs[1] += 0.1 * fc.REF_FRAME[:, 1]

for t in (0.25, 1.0, 2.0):
    res = lv.evolve_leaf(model, metric2, L, t, frame="splitting")
    ratio = res.jets[:, :, 0] / res.jets_initial[:, :, 0]
    want = fc.LAMBDA_PLUS ** (-(np.arange(ratio.shape[1]) + 2) * t)
    print(f"t={t}: max rel. deviation from lambda^-(k+2)t  "
          f"{np.max(np.abs(ratio / want - 1)):.2e}")

# untilted leaves for the adapted-frame oracle
L0 = lv.random_leaves(metric2, rng.random((4, 3)), rng, M0=2.0)
res = lv.evolve_leaf(model, metric2, L0, 0.5)
slope_err, jet_err = lv.oracle_errors(res, lv.slope_oracle(model, metric2, L0, 0.5))
print("oracle: slope error", slope_err.max(), " jet errors", jet_err.max(axis=0))

# covering an expanded arc
delta, t, Lam = 1e-3, 1.0, 1.2
B = lv.choose_B(0.8, Lam, [t])
u = np.linspace(-B * delta, B * delta, 2001)
cov = lv.vitali_cover(np.exp(Lam * t) * u, u, t, Lam, delta, B)
lv.partition_of_unity(cov, n=10001)
print("cover:", len(cov.centers), "pieces; checks pass:", lv.verify_cover(cov).passed)
