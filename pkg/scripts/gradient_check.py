#!/usr/bin/env python3
"""Compare analytic parameter and input gradients with central differences
on random small networks; prints the worst relative error per network."""
import argparse

import numpy as np

from advrl.adversary import adversarial_loss
from advrl.nn import DenseLayer, Network, forward, input_gradient, td_gradients


def central(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-7):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(s) for s in rng.integers(1, 33, size=depth + 1)]
    net = Network([DenseLayer(rng.normal(0, 1 / np.sqrt(i), (o, i)), rng.normal(0, 0.5, o),
                              "identity" if k == depth - 1 else "relu")
                   for k, (i, o) in enumerate(zip(sizes, sizes[1:]))])
    xb = rng.normal(size=(4, sizes[0]))
    acts = rng.integers(sizes[-1], size=4)
    ys = rng.normal(size=4)
    _, grads = td_gradients(net, xb, acts, ys)

    def loss():
        q = forward(net, xb)
        return np.mean((ys - q[np.arange(4), acts]) ** 2)

    worst = 0.0
    for layer, g in zip(net.layers, grads.layers):
        for name in ("weights", "biases"):
            worst = max(worst, rel_err(g[name], central(loss, getattr(layer, name))))
    x = rng.normal(size=sizes[0])
    a_star = int(np.argmax(forward(net, x)))

    def ce():
        q = forward(net, x)
        z = q - q.max()
        return -(z[a_star] - np.log(np.exp(z).sum()))

    worst = max(worst, rel_err(input_gradient(net, x, adversarial_loss), central(ce, x)))
    return sizes, worst


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nets", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    overall = 0.0
    for k in range(args.nets):
        sizes, worst = check(rng)
        overall = max(overall, worst)
        print(f"net {k:2d} sizes {sizes}: max rel err {worst:.2e}")
    print(f"worst over {args.nets} nets: {overall:.2e}")


if __name__ == "__main__":
    main()
