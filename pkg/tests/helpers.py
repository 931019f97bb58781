"""Shared test oracles.

The gradient oracle uses central finite differences on the plain
forward computation (no tape), so it is independent of the backward
rules it checks.
"""

from __future__ import annotations

import numpy as np

from vidshift.autodiff import Tape, Tensor, backward, mul, sum_all

REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def numeric_grad(f, arrays: list[np.ndarray], which: int, coords, step: float = 1e-5) -> np.ndarray:
    """Central-difference d f / d arrays[which] at the given flat coords."""
    out = np.zeros(len(coords))
    for n, idx in enumerate(coords):
        for sign in (+1.0, -1.0):
            perturbed = [a.copy() for a in arrays]
            perturbed[which].flat[idx] += sign * step
            out[n] += sign * f(*perturbed)
    return out / (2.0 * step)


def grad_close(analytic, numeric, rel: float = REL_TOL, floor: float = ABS_FLOOR) -> bool:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((diff <= floor) | (diff <= rel * denom)))


def check_grads(apply_fn, arrays, seed: int = 0, max_coords: int = 40, step: float = 1e-5) -> None:
    """Compare tape gradients against finite differences.

    ``apply_fn`` maps Tensors to a Tensor; the checked scalar is the
    output weighted by fixed random coefficients, so every output element
    contributes. A random subset of input coordinates is probed.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    rng = np.random.default_rng(seed)
    out_plain = apply_fn(*[Tensor(a) for a in arrays])
    probe = rng.standard_normal(out_plain.shape)

    def forward_plain(*arrs) -> float:
        out = apply_fn(*[Tensor(a) for a in arrs])
        return float((out.data * probe).sum())

    tape = Tape()
    tensors = [tape.watch(Tensor(a.copy())) for a in arrays]
    root = sum_all(mul(apply_fn(*tensors), Tensor(probe)))
    backward(tape, root)

    for which, arr in enumerate(arrays):
        if arr.size > max_coords:
            coords = rng.choice(arr.size, size=max_coords, replace=False)
        else:
            coords = np.arange(arr.size)
        num = numeric_grad(forward_plain, arrays, which, coords, step)
        ana = tensors[which].grad.flat[list(coords)]
        assert grad_close(ana, num), (
            f"gradient mismatch on input {which}:\nanalytic {ana}\nnumeric  {num}"
        )
