#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging

from typing import Callable, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from mmrisk.mm_exceptions import ConfigurationError, NonFiniteError, ShapeError


# row-major float64 array, 2-D for weights, 1-D for biases
Matrix = np.ndarray

BCE_EPSILON = 1e-7
SEED_MODULUS = 2 ** 64


class SeededRng:
    """
    Seeded random stream used for initialization, dropout masks, shuffling and fold assignment.
    One instance per worker: derived streams are created with `spawn(offset)` (seed + offset).
    """

    def __init__(self, seed: int = 0):
        if not 0 <= int(seed) < SEED_MODULUS:
            raise ConfigurationError(f"Seed must be a 64-bit unsigned integer, got {seed}!")
        self.seed = int(seed)
        self.generator = np.random.default_rng(self.seed)

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"

    def spawn(self, offset: int) -> 'SeededRng':
        return SeededRng((self.seed + int(offset)) % SEED_MODULUS)

    def uniform(self, low: float, high: float, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def random(self, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return self.generator.random(size=size)

    def normal(self, loc: float, scale: float, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return self.generator.normal(loc, scale, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def keep_mask(self, shape: Tuple[int, ...], rate: float) -> np.ndarray:
        """
        Inverted-dropout mask: zeros with probability `rate`, survivors scaled by 1 / (1 - rate)
        """
        if rate <= 0.0:
            return np.ones(shape, dtype=np.float64)
        keep = self.generator.random(size=shape) >= rate
        return keep.astype(np.float64) / (1.0 - rate)


def as_matrix(x) -> Matrix:
    return np.asarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str = 'matrix') -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"Non-finite entries found in {what}!")
    return x


def matmul(a, b) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply matrices of shapes {a.shape} and {b.shape}!")
    return check_finite(a @ b, f"product of {a.shape} and {b.shape}")


def sigmoid(x) -> Matrix:
    # expit saturates to exactly 0 / 1 instead of overflowing
    return expit(as_matrix(x))


def relu(x) -> Matrix:
    return np.maximum(as_matrix(x), 0.0)


def tanh_act(x) -> Matrix:
    return np.tanh(as_matrix(x))


def sigmoid_grad_from_output(s: np.ndarray) -> np.ndarray:
    return s * (1.0 - s)


def tanh_grad_from_output(t: np.ndarray) -> np.ndarray:
    return 1.0 - t * t


def relu_grad_from_input(z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(np.float64)


def glorot_uniform(rows: int, cols: int, rng: SeededRng) -> Matrix:
    if rows < 1 or cols < 1:
        raise ShapeError(f"Glorot initialization needs rows, cols >= 1, got ({rows}, {cols})!")
    bound = glorot_bound(rows, cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def glorot_bound(rows: int, cols: int) -> float:
    return float(np.sqrt(6.0 / (rows + cols)))


def bce_loss(p: Sequence[float], y: Sequence[float]) -> float:
    p = as_matrix(p).ravel()
    y = as_matrix(y).ravel()
    if p.shape != y.shape:
        raise ShapeError(f"Probabilities of shape {p.shape} do not match labels of shape {y.shape}!")
    if p.size == 0:
        return 0.0
    p = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_loss_from_logits(z: Sequence[float], y: Sequence[float]) -> float:
    """
    Mean BCE of sigmoid(z) computed as log(1 + e^z) - y * z, exact where the sigmoid saturates
    """
    z = as_matrix(z).ravel()
    y = as_matrix(y).ravel()
    if z.shape != y.shape:
        raise ShapeError(f"Logits of shape {z.shape} do not match labels of shape {y.shape}!")
    if z.size == 0:
        return 0.0
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_logit_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Gradient of the mean BCE w.r.t. the pre-sigmoid logits: (p - y) / n
    """
    p = as_matrix(p).ravel()
    y = as_matrix(y).ravel()
    if p.shape != y.shape:
        raise ShapeError(f"Probabilities of shape {p.shape} do not match labels of shape {y.shape}!")
    return (p - y) / max(p.size, 1)


def grad_check(f: Callable[[np.ndarray], float], analytic: np.ndarray, theta: np.ndarray,
               h: float = 1e-5) -> float:
    """
    Compare an analytic gradient with central differences of `f` around `theta`.
    :param f: scalar function of the full parameter vector
    :param analytic: analytic gradient of f at theta, same shape as theta
    :param theta: parameter vector (not modified)
    :param h: finite-difference step
    :return: max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    """
    theta = as_matrix(theta).ravel()
    analytic = as_matrix(analytic).ravel()
    if theta.shape != analytic.shape:
        raise ShapeError(f"Analytic gradient of shape {analytic.shape} does not match theta {theta.shape}!")
    worst = 0.0
    shifted = theta.copy()
    for idx in range(theta.size):
        shifted[idx] = theta[idx] + h
        f_plus = f(shifted)
        shifted[idx] = theta[idx] - h
        f_minus = f(shifted)
        shifted[idx] = theta[idx]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"Objective is not finite around coordinate {idx}: "
                                 f"f(+h)={f_plus}, f(-h)={f_minus}")
        numeric = (f_plus - f_minus) / (2.0 * h)
        rel_err = abs(analytic[idx] - numeric) / max(1e-8, abs(analytic[idx]) + abs(numeric))
        if rel_err > worst:
            worst = rel_err
    logging.debug(f"grad check over {theta.size} coordinates, max relative error: {worst:.3e}")
    return float(worst)
