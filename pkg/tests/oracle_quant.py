"""Scalar reference quantizers, evaluated one element at a time.

These are direct transcriptions of the closed-form quantizer definitions,
written without looking at the vectorized implementation: explicit python
loops, python float arithmetic, and an explicit half-away-from-zero rule.

Two primitives are shared with numpy on purpose. tanh is evaluated through
np.tanh on each scalar (numpy's vectorized tanh differs from math.tanh in
the last ulp on this platform, and "element-exact" is only well-defined
when both sides use the same transcendental); and the whole-tensor mean in
the binary quantizer uses np.mean, because a summation order has to be
fixed and python's sequential sum rounds differently. max is exact in
either world, so it stays pure python.
"""

from __future__ import annotations

import math

import numpy as np


def ref_round_half_away(v: float) -> float:
    if v >= 0.0:
        return math.floor(v + 0.5)
    return math.ceil(v - 0.5)


def _tanh(v: float) -> float:
    return float(np.tanh(v))


def ref_normalize(values: list[float]) -> list[float]:
    t = [_tanh(v) for v in values]
    m = max(abs(u) for u in t)
    if m == 0.0:
        raise ValueError("all-zero input")
    return [u / (2.0 * m) + 0.5 for u in t]


def ref_quantize_weights_kbit(values: list[float], k: int) -> list[float]:
    assert k >= 2
    levels = float(2 ** k - 1)
    out = []
    for u in ref_normalize(values):
        out.append(2.0 * ref_round_half_away(u * levels) / levels - 1.0)
    return out


def ref_quantize_weights_binary(values: list[float]) -> list[float]:
    if not values or all(v == 0.0 for v in values):
        raise ValueError("all-zero input")
    m = float(np.mean(np.abs(np.asarray(values, dtype=np.float64))))
    return [m if v >= 0.0 else -m for v in values]


def ref_quantize_activations(values: list[float], k: int) -> list[float]:
    assert k >= 1
    levels = float(2 ** k - 1)
    out = []
    for v in values:
        c = 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)
        out.append(ref_round_half_away(c * levels) / levels)
    return out


def ref_ste_mask(values: list[float], lo: float, hi: float) -> list[float]:
    return [1.0 if lo <= v <= hi else 0.0 for v in values]
