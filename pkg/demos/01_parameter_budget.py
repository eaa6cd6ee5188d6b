"""
Where the parameters go
=======================

The baseline is a five-level UNet. The reduced networks keep only three
levels and buy back capacity with extra encoders, one stack per encoder.
"""

from prnet.model import ModelConfig, count_params, param_shapes, reduction_percent

baseline = ModelConfig(variant="adacof_baseline")
print(f"{'variant':<10} {'params':>12} {'reduction':>10}")
for label in ("PRNet_1", "PRNet_2", "PRNet_3", "PRNet_4", "PRNet_4*", "AdaCoFNet"):
    cfg = ModelConfig.from_label(label)
    print(f"{label:<10} {count_params(cfg):>12,} {reduction_percent(cfg):>9.1f}%")

# %%
# Break one reduced network down by component. The decoder and the kernel
# subnets are shared; only the encoder term scales with the encoder count.
shapes = param_shapes(ModelConfig(encoders=1))
groups = {}
for name, shape in shapes.items():
    key = name.split(".")[0] if not name.startswith("subnet.") else "subnet." + name.split(".")[1]
    size = 1
    for s in shape:
        size *= s
    groups[key] = groups.get(key, 0) + size
for key, size in groups.items():
    print(f"  {key:<18} {size:>9,}")

# %%
# The deep 256- and 512-channel levels dominate the baseline.
deep = sum(
    1 for n, s in param_shapes(baseline).items() if n.endswith("weight") and s[0] >= 256
)
print(f"baseline convs with >= 256 output channels: {deep}")
