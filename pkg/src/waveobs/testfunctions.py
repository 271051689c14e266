"""Closed-form test functions u(t, s, x) with derivatives up to second order.

Points are arrays of shape ``(N, 2 + n)`` ordered ``(t, s, x1, ..., xn)``.
``evaluate`` returns ``(value (N,), grad (N, m), hess (N, m, m))``.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


class TestFunction:
    __test__ = False  # keep pytest from collecting this class
    name = "base"

    def evaluate(self, z):
        raise NotImplementedError

    def __call__(self, z):
        return self.evaluate(z)[0]

    def self_test(self, z, steps=(1e-2, 5e-3, 2.5e-3)) -> dict:
        """Central-difference check of grad and hess at points ``z``.

        Returns the max error per step for both tensors and the observed
        convergence orders (about 2 for correct derivatives).
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        _, g, H = self.evaluate(z)
        m = z.shape[1]
        eg, eh = [], []
        for step in steps:
            fd_g = np.empty_like(g)
            fd_h = np.empty_like(H)
            for a in range(m):
                e = np.zeros(m)
                e[a] = step
                vp, gp, _ = self.evaluate(z + e)
                vm, gm, _ = self.evaluate(z - e)
                fd_g[:, a] = (vp - vm) / (2 * step)
                fd_h[:, :, a] = (gp - gm) / (2 * step)
            eg.append(float(np.max(np.abs(fd_g - g))))
            eh.append(float(np.max(np.abs(fd_h - H))))

        def order(err):
            if err[-1] <= 1e-13 or err[-2] <= 1e-13:
                return math.inf
            return math.log2(err[-2] / err[-1])

        return {"grad_err": eg, "hess_err": eh, "grad_order": order(eg), "hess_order": order(eh)}


class Zero(TestFunction):
    name = "zero"

    def evaluate(self, z):
        z = np.atleast_2d(z)
        N, m = z.shape
        return np.zeros(N), np.zeros((N, m)), np.zeros((N, m, m))


class Polynomial(TestFunction):
    """Sum of monomials ``coef * prod z_a^{e_a}``."""

    name = "polynomial"

    def __init__(self, terms):
        self.terms = [(float(c), tuple(int(k) for k in e)) for c, e in terms]

    @classmethod
    def random(cls, m: int, degree: int, rng) -> "Polynomial":
        terms = []
        for e in itertools.product(range(degree + 1), repeat=m):
            if sum(e) <= degree:
                terms.append((rng.uniform(-1, 1), e))
        return cls(terms)

    def evaluate(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        N, m = z.shape
        val = np.zeros(N)
        grad = np.zeros((N, m))
        hess = np.zeros((N, m, m))
        # powers[a][k] = z_a^k
        top = max((max(e) for _, e in self.terms), default=0)
        pw = np.ones((m, top + 1, N))
        for k in range(1, top + 1):
            pw[:, k] = pw[:, k - 1] * z.T
        for c, e in self.terms:
            fac = [pw[a, e[a]] for a in range(m)]
            val += c * np.prod(fac, axis=0)
            for a in range(m):
                if e[a] == 0:
                    continue
                fa = list(fac)
                fa[a] = e[a] * pw[a, e[a] - 1]
                grad[:, a] += c * np.prod(fa, axis=0)
                for b in range(m):
                    if b == a:
                        if e[a] < 2:
                            continue
                        fb = list(fac)
                        fb[a] = e[a] * (e[a] - 1) * pw[a, e[a] - 2]
                    else:
                        if e[b] == 0:
                            continue
                        fb = list(fa)
                        fb[b] = e[b] * pw[b, e[b] - 1]
                    hess[:, a, b] += c * np.prod(fb, axis=0)
        return val, grad, hess


class SeparableTrig(TestFunction):
    """prod_a sin(k_a z_a + phase_a)."""

    name = "trig"

    def __init__(self, k, phase):
        self.k = np.asarray(k, dtype=float)
        self.phase = np.asarray(phase, dtype=float)

    @classmethod
    def random(cls, m: int, rng) -> "SeparableTrig":
        return cls(rng.uniform(0.5, 3.0, m), rng.uniform(0, 2 * np.pi, m))

    def evaluate(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        arg = self.k * z + self.phase
        S, C = np.sin(arg), np.cos(arg)
        N, m = z.shape
        val = np.prod(S, axis=1)
        grad = np.empty((N, m))
        hess = np.empty((N, m, m))
        for a in range(m):
            fa = S.copy()
            fa[:, a] = self.k[a] * C[:, a]
            grad[:, a] = np.prod(fa, axis=1)
            for b in range(m):
                fb = fa.copy()
                if b == a:
                    fb[:, a] = -self.k[a] ** 2 * S[:, a]
                else:
                    fb[:, b] = self.k[b] * C[:, b]
                hess[:, a, b] = np.prod(fb, axis=1)
        return val, grad, hess


class Gaussian(TestFunction):
    """amp * exp(-|z - c|^2 / (2 sigma^2))."""

    name = "gaussian"

    def __init__(self, center, sigma: float, amp: float = 1.0):
        self.c = np.asarray(center, dtype=float)
        self.sigma = float(sigma)
        self.amp = float(amp)

    @classmethod
    def random(cls, m: int, rng, box=(0.0, 1.0)) -> "Gaussian":
        return cls(rng.uniform(*box, m), rng.uniform(0.3, 1.0), rng.uniform(0.5, 2.0))

    def evaluate(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = (z - self.c) / self.sigma**2
        val = self.amp * np.exp(-0.5 * np.sum((z - self.c) ** 2, axis=1) / self.sigma**2)
        grad = -r * val[:, None]
        eye = np.eye(z.shape[1]) / self.sigma**2
        hess = (r[:, :, None] * r[:, None, :] - eye) * val[:, None, None]
        return val, grad, hess


class Product(TestFunction):
    """Pointwise product f * g."""

    def __init__(self, f: TestFunction, g: TestFunction):
        self.f, self.g = f, g
        self.name = f"{f.name}*{g.name}"

    def evaluate(self, z):
        a, ga, Ha = self.f.evaluate(z)
        b, gb, Hb = self.g.evaluate(z)
        hess = (
            Ha * b[:, None, None]
            + Hb * a[:, None, None]
            + ga[:, :, None] * gb[:, None, :]
            + gb[:, :, None] * ga[:, None, :]
        )
        return a * b, ga * b[:, None] + gb * a[:, None], hess


class Restricted(TestFunction):
    """A function of selected coordinates only, lifted to all of z."""

    def __init__(self, f: TestFunction, coords, name=None):
        self.f = f
        self.coords = list(coords)
        self.name = name or f.name

    def evaluate(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        N, m = z.shape
        v, g, H = self.f.evaluate(z[:, self.coords])
        grad = np.zeros((N, m))
        hess = np.zeros((N, m, m))
        grad[:, self.coords] = g
        hess[np.ix_(range(N), self.coords, self.coords)] = H
        return v, grad, hess


class InverseWeight(TestFunction):
    """u = exp(-ell) for a Carleman weight, so that v = theta u = 1."""

    name = "inverse_weight"

    def __init__(self, weight):
        # weight: callable z -> bundle with ell, grad, hess
        self.weight = weight

    def evaluate(self, z):
        w = self.weight(z)
        u = np.exp(-w.ell)
        g = -w.grad * u[:, None]
        H = (w.grad[:, :, None] * w.grad[:, None, :] - w.hess) * u[:, None, None]
        return u, g, H


def sine_bump(T: float, dim: int = 1, width: float = 0.25) -> TestFunction:
    """sin(pi x1) times a Gaussian bump in (t, s) centred at (T/2, T/2)."""
    trig = Restricted(SeparableTrig([np.pi], [0.0]), [2], "sin")
    bump = Restricted(Gaussian([T / 2, T / 2], width * T), [0, 1], "bump")
    out = Product(trig, bump)
    out.name = "sin*bump"
    return out


FAMILIES = ("polynomial", "trig", "gaussian")


def random_family(name: str, m: int, rng) -> TestFunction:
    if name == "polynomial":
        return Polynomial.random(m, 3, rng)
    if name == "trig":
        return SeparableTrig.random(m, rng)
    if name == "gaussian":
        return Gaussian.random(m, rng)
    if name == "zero":
        return Zero()
    raise ValueError(f"unknown test-function family {name!r}")
