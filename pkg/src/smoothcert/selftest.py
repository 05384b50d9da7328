"""Built-in numerical checks, runnable anywhere the package is installed.

Covers the three numerical cores: the inverse normal CDF, the
Clopper-Pearson lower bound, and layer gradients against central finite
differences.  These are quick smoke versions of the full test suite.
"""

import numpy as np
from scipy import special

from .certifier import (betainc_reg, clopper_pearson_lower, inv_norm_cdf,
                        norm_cdf)
from .network import LayerSpec, ModelSpec, Network, softmax_cross_entropy

# high-precision reference values (independent bisection oracle)
ICDF_REFERENCE = (
    (0.5, 0.0),
    (0.84134, 0.99998038596607891),
    (0.001, -3.0902323061678135),
    (0.999, 3.0902323061678135),
    (0.975, 1.9599639845400542),
    (0.9, 1.2815515655446005),
)

CP_REFERENCE = (
    (95, 100, 0.001, 0.8446326941895315),
    (9500, 10000, 0.001, 0.9429086109444296),
    (990, 1000, 0.01, 0.9799573940991211),
    (1, 2, 0.05, 0.02532056551910361),
)


def _check_icdf():
    for p, want in ICDF_REFERENCE:
        got = inv_norm_cdf(p)
        if abs(got - want) > 1e-9:
            return f"inv_norm_cdf({p}) = {got}, want {want}"
    ps = np.concatenate([np.logspace(-10, -1, 40), np.linspace(0.1, 0.9, 41),
                         1.0 - np.logspace(-10, -1, 40)])
    x = inv_norm_cdf(ps)
    round_trip = np.max(np.abs(norm_cdf(x) - ps) / np.maximum(ps * (1 - ps), 1e-12))
    if round_trip > 1e-7:
        return f"round trip error {round_trip}"
    q = np.linspace(1e-4, 0.4999, 500)
    asym = np.max(np.abs(inv_norm_cdf(q) + inv_norm_cdf(1.0 - q)))
    if asym > 1e-12:
        return f"odd symmetry violated by {asym}"
    return None


def _check_clopper_pearson():
    for k, n, alpha, want in CP_REFERENCE:
        got = clopper_pearson_lower(k, n, alpha)
        if abs(got - want) > 1e-9:
            return f"clopper_pearson_lower({k},{n},{alpha}) = {got}, want {want}"
    for n in (1, 7, 100, 1000):
        if clopper_pearson_lower(0, n, 0.01) != 0.0:
            return f"k=0 bound not zero at n={n}"
        want = 0.01 ** (1.0 / n)
        got = clopper_pearson_lower(n, n, 0.01)
        if abs(got - want) > 1e-12:
            return f"closed form alpha^(1/n) off at n={n}"
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.uniform(0.5, 500)
        b = rng.uniform(0.5, 500)
        x = rng.uniform(0.001, 0.999)
        ours = betainc_reg(a, b, x)
        ref = special.betainc(a, b, x)
        if abs(ours - ref) > 1e-10 * max(ref, 1e-10):
            return f"betainc_reg({a},{b},{x}) = {ours}, scipy {ref}"
    prev = 0.0
    for k in range(0, 101, 10):
        cur = clopper_pearson_lower(k, 100, 0.01)
        if cur < prev:
            return f"bound not monotone in k at k={k}"
        prev = cur
    return None


def _relu_kink_margin(net, x):
    margin = np.inf
    h = x
    for layer in net.layers:
        if layer.kind == "relu":
            margin = min(margin, float(np.min(np.abs(h))))
        h = layer.forward(h, train=True)
    return margin


def _check_gradients():
    h = 1e-3
    for norm_kind in (None, "batch", "instance", "group", "layer"):
        layers = [LayerSpec(kind="conv2d", in_channels=2, out_channels=4)]
        if norm_kind:
            layers.append(LayerSpec(kind="norm", norm_kind=norm_kind,
                                    groups=2 if norm_kind == "group" else None))
        layers += [LayerSpec(kind="relu"), LayerSpec(kind="flatten"),
                   LayerSpec(kind="dense", fan_in=64, fan_out=3)]
        net = Network(ModelSpec((2, 4, 4), tuple(layers)), seed=0).astype(np.float64)
        # finite differences are only valid away from the ReLU kink: take the
        # first probe batch whose activations clear the step size comfortably
        x = None
        for data_seed in range(100):
            candidate = np.random.default_rng(data_seed).normal(size=(3, 2, 4, 4))
            if _relu_kink_margin(net, candidate) > 5 * h:
                x = candidate
                break
        if x is None:
            return f"no kink-safe probe batch found (norm={norm_kind})"
        labels = np.array([0, 1, 2])
        net.zero_grad()
        net.loss_backward(x, labels)
        for p in net.params():
            analytic = p.grad
            flat = p.data.ravel()
            fd = np.zeros_like(flat)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp, _ = softmax_cross_entropy(net.forward(x, train=True), labels)
                flat[j] = orig - h
                lm, _ = softmax_cross_entropy(net.forward(x, train=True), labels)
                flat[j] = orig
                fd[j] = (lp - lm) / (2 * h)
            fd = fd.reshape(p.shape)
            scale = max(float(np.max(np.abs(fd))), 1e-8)
            err = float(np.max(np.abs(analytic - fd))) / scale
            if err > 1e-4:
                return f"gradient mismatch {err:.2e} (norm={norm_kind})"
    return None


CHECKS = (
    ("inverse normal CDF", _check_icdf),
    ("Clopper-Pearson lower bound", _check_clopper_pearson),
    ("layer gradients vs finite differences", _check_gradients),
)


def run_selftest(verbose=True):
    ok = True
    for name, fn in CHECKS:
        problem = fn()
        if problem is None:
            if verbose:
                print(f"ok: {name}")
        else:
            ok = False
            print(f"FAIL: {name}: {problem}")
    if verbose:
        print("selftest passed" if ok else "selftest FAILED")
    return ok
