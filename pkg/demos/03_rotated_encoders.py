"""
Rotated encoders and feature fusion
===================================

With rotation enabled, encoder e sees the input turned by (e-1) quarter
turns. Its level maps are turned back before the four are summed, so the
fused map lives in the original orientation.
"""

import numpy as np

from prnet import tensor as T
from prnet.model import ModelConfig, build, fuse_features
from prnet.selftest import shared_weight_encoders

model = build(ModelConfig(encoders=4, rotate=True), seed=0)
x = T.Tensor(np.random.default_rng(0).uniform(0, 1, (1, 6, 48, 64)).astype(np.float32))

with T.no_grad():
    maps = [model.encode(e, T.rot90(x, model.config.angle_of(e)))[1] for e in (1, 2, 3, 4)]
for e, m in zip((1, 2, 3, 4), maps):
    print(f"encoder {e}: level-2 map {m.shape[2:]} (input turned {90 * model.config.angle_of(e)} deg)")

angles = [model.config.angle_of(e) for e in (1, 2, 3, 4)]
print("fused:", fuse_features(maps, angles).shape[2:])

# %%
# With shared weights and a constant input every encoder computes the same
# map, so the fused map is exactly four copies of encoder 1.
shared_weight_encoders(model)
const = T.Tensor(np.full((1, 6, 48, 64), 0.5, np.float32))
with T.no_grad():
    maps = [model.encode(e, T.rot90(const, model.config.angle_of(e)))[1] for e in (1, 2, 3, 4)]
    fused = fuse_features(maps, angles)
print("max |fused - 4 * encoder 1|:", float(np.abs(fused.data - 4 * maps[0].data).max()))
