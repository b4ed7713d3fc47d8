"""Shared oracles: finite-difference gradient check and random small networks."""

import numpy as np

from dkrc.neuralnet import ACTIVATIONS, Activation, Conv2d, Dense, Flatten, Network, Unflatten, Upsample2d


def random_activation(rng):
    kind = ACTIVATIONS[rng.integers(len(ACTIVATIONS))]
    return Activation(kind, float(rng.uniform(0.05, 0.5)))


def random_network(rng):
    """A small dense or convolutional network with randomly chosen activations."""
    if rng.random() < 0.4:
        dims = rng.integers(1, 5, size=rng.integers(2, 5))
        layers = [Dense(int(a), int(b), random_activation(rng), rng) for a, b in zip(dims[:-1], dims[1:])]
        return Network(layers, (int(dims[0]),), latent_boundary=1), (int(rng.integers(1, 4)), int(dims[0]))
    c, h, w = (int(v) for v in rng.integers(1, 3, size=1)), int(rng.integers(3, 6)), int(rng.integers(3, 6))
    c = next(c)
    k = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    mid = int(rng.integers(1, 3))
    conv = Conv2d(c, mid, (k, int(rng.integers(1, 4))), (s, int(rng.integers(1, 3))), random_activation(rng), rng)
    shape = conv.output_shape((c, h, w))
    layers = [conv]
    if rng.random() < 0.5:
        layers.append(Upsample2d(h, w))
        shape = (mid, h, w)
    flat = int(np.prod(shape))
    latent = int(rng.integers(1, 4))
    layers += [Flatten(), Dense(flat, latent, random_activation(rng), rng),
               Dense(latent, 2 * h, random_activation(rng), rng), Unflatten((1, 2, h)),
               Conv2d(1, 1, 2, 1, random_activation(rng), rng)]
    return Network(layers, (c, h, w), latent_boundary=4), (int(rng.integers(1, 3)), c, h, w)


def gradient_errors(net, x, rng, h=1e-4):
    """Relative errors between backprop and central differences of L = sum(out * R), per parameter tensor."""
    out, caches = net.run(x)
    R = rng.standard_normal(out.shape)
    grads, gx = net.backprop(caches, R)

    def loss():
        return float(np.sum(net.run(x)[0] * R))

    errors = []
    for p, g in zip(net.parameters(), grads):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            fd[idx] = (up - down) / (2 * h)
        errors.append(np.linalg.norm(g - fd) / max(np.linalg.norm(g) + np.linalg.norm(fd), 1e-12))
    fdx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = loss()
        x[idx] = old - h
        down = loss()
        x[idx] = old
        fdx[idx] = (up - down) / (2 * h)
    errors.append(np.linalg.norm(gx - fdx) / max(np.linalg.norm(gx) + np.linalg.norm(fdx), 1e-12))
    return errors


def near_kink(net, x, margin=1e-2):
    """True if any leaky-ReLU pre-activation lies within ``margin`` of its kink.

    Central differences straddle the kink there and stop being a valid oracle.
    """
    for layer in net.layers:
        x, _ = layer.forward(x)
        act = getattr(layer, "activation", None)
        if act is not None and act.kind == "leaky_relu" and np.min(np.abs(x)) < margin * act.alpha:
            return True
    return False


def differentiable_instance(rng):
    while True:
        net, xshape = random_network(rng)
        x = rng.standard_normal(xshape)
        if not near_kink(net, x):
            return net, x


def max_gradient_error(n_nets=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        net, x = differentiable_instance(rng)
        worst = max(worst, max(gradient_errors(net, x, rng)))
    return worst
