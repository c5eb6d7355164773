"""
A random ReLU generator
=======================

Build a small generator, evaluate it on a batch of latents, check the
backpropagated latent gradient against finite differences and round-trip
the weights through the binary weight file.
"""

import tempfile
from pathlib import Path

import numpy as np

from momcs.generator import forward, latent_gradient, load_weights, random_generator, save_weights

# three layers: 5 -> 50 -> 100, He-style N(0, 1/fan_in) weights, zero biases
net = random_generator([5, 50, 100], seed=0)
print("layer dims:", net.layer_dims)

# latents can be stacked along a leading axis
Z = np.random.default_rng(1).standard_normal((4, 5))
X = forward(net, Z)
print("batch of signals:", X.shape)

# J^T u by backprop versus central differences
z, u = Z[0], np.random.default_rng(2).standard_normal(100)
h = 1e-5
fd = np.array([u @ (forward(net, z + h * e) - forward(net, z - h * e)) / (2 * h) for e in np.eye(5)])
print("gradient error:", np.max(np.abs(latent_gradient(net, z, u) - fd)))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "net.gnw"
    save_weights(net, path)
    print("weight file bytes:", path.stat().st_size, "round trip equal:", load_weights(path) == net)
