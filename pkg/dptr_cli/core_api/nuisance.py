# dptr_cli/core_api/nuisance.py
"""Nuisance regression g(X) for the partial-linear model Y = g(X)'t + e.

The network is a small numpy MLP (two ReLU hidden layers, linear head of
size dim(t)) trained full-batch with Adam on the squared loss
(Y - g(X)'t)^2. Lambda = 2 E[t t'] does not depend on X under full
randomization, so it is estimated as a plain sample mean.
"""
import logging
from typing import List, Optional

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from dptr_cli.core import config
from dptr_cli.core_api.exceptions import EmptyInputError, NonFiniteLossError, SingularLambdaError
from dptr_cli.core_api.rng import stream

logger = logging.getLogger(__name__)

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


class NetworkConfig(BaseModel):
    """Architecture and optimizer settings for the nuisance network."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden_width: Optional[int] = Field(
        default=None, ge=1, description="Units per hidden layer; None means 10 (non-overlapping) or K + 10."
    )
    learning_rate: float = Field(default=config.DEFAULT_LEARNING_RATE, gt=0.0)
    epochs: int = Field(default=config.DEFAULT_EPOCHS, ge=1)
    init_scale: float = Field(default=config.DEFAULT_INIT_SCALE, gt=0.0)

    def width_for(self, k: int, overlapping: bool) -> int:
        if self.hidden_width is not None:
            return self.hidden_width
        return k + config.DEFAULT_HIDDEN_WIDTH if overlapping else config.DEFAULT_HIDDEN_WIDTH


class MLP:
    """Fully connected ReLU network with two hidden layers and a linear output layer."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, init_scale: float, rng: np.random.Generator):
        sizes = [in_dim, hidden, hidden, out_dim]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(rng.uniform(-init_scale, init_scale, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-init_scale, init_scale, size=fan_out))

    def params(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def _forward(self, x: np.ndarray):
        activations = [x]
        pre_activations = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_activations.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            activations.append(h)
        return activations, pre_activations

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0][-1]

    def gradients(self, x: np.ndarray, grad_out: np.ndarray) -> List[np.ndarray]:
        """Backpropagates dLoss/dOutput; returns grads ordered like params()."""
        activations, pre_activations = self._forward(x)
        grad_w = [np.empty(0)] * len(self.weights)
        grad_b = [np.empty(0)] * len(self.biases)
        delta = grad_out
        for i in reversed(range(len(self.weights))):
            grad_w[i] = activations[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre_activations[i - 1] > 0)
        return grad_w + grad_b


class NuisanceFit(BaseModel):
    """Trained g-hat and Lambda-hat for one cross-fitting fold."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    network: MLP
    lambda_hat: np.ndarray
    lambda_inv: np.ndarray
    fold_id: int
    final_loss: float

    def g_hat(self, x: np.ndarray) -> np.ndarray:
        return self.network.predict(x)


def estimate_lambda(t: np.ndarray) -> np.ndarray:
    """Lambda-hat = 2 * mean(t t'), symmetrised."""
    lam = 2.0 * (t.T @ t) / t.shape[0]
    return 0.5 * (lam + lam.T)


def invert_lambda(lam: np.ndarray) -> np.ndarray:
    try:
        inverse = scipy.linalg.inv(lam)
        if np.all(np.isfinite(inverse)):
            return inverse
    except (np.linalg.LinAlgError, ValueError):
        pass
    logger.warning("Lambda-hat is singular; falling back to a ridge pseudo-inverse.")
    ridged = lam + config.LAMBDA_RIDGE * np.eye(lam.shape[0])
    try:
        inverse = scipy.linalg.pinvh(ridged)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularLambdaError("Lambda-hat could not be inverted even with ridge.", original_exception=e)
    if not np.all(np.isfinite(inverse)):
        raise SingularLambdaError("Lambda-hat pseudo-inverse is not finite.")
    return inverse


def _features(x: Optional[np.ndarray], n: int) -> np.ndarray:
    # Covariate-free data still needs an input column for the network.
    return np.ones((n, 1)) if x is None else x


def train_nuisance(
    y: np.ndarray,
    t: np.ndarray,
    x: Optional[np.ndarray],
    arch: NetworkConfig,
    seed: int,
    fold_id: int = 0,
    hidden_width: Optional[int] = None,
) -> NuisanceFit:
    """Fits g-hat on (y, t, x) rows of a fold complement.

    `t` is the augmented treatment vector (leading 1 then the treatment
    flags); the network output has the same dimension as `t`.
    """
    n = y.shape[0]
    if n == 0:
        raise EmptyInputError("Cannot train the nuisance network on an empty fold complement.")
    features = _features(x, n)
    width = hidden_width or arch.width_for(t.shape[1] - 1, overlapping=t.shape[1] > 2)
    rng = stream(seed, "nuisance-init", fold_id)
    network = MLP(features.shape[1], width, t.shape[1], arch.init_scale, rng)

    params = network.params()
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    loss = np.inf
    for step in range(1, arch.epochs + 1):
        output = network.predict(features)
        residual = y - np.einsum("ij,ij->i", output, t)
        loss = float(np.mean(residual**2))
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"Nuisance loss became non-finite at epoch {step} (learning rate {arch.learning_rate})."
            )
        grad_out = (-2.0 / n) * residual[:, None] * t
        grads = network.gradients(features, grad_out)
        bias1 = 1.0 - _ADAM_BETA1**step
        bias2 = 1.0 - _ADAM_BETA2**step
        for p, g, m, v in zip(params, grads, first_moment, second_moment):
            m *= _ADAM_BETA1
            m += (1.0 - _ADAM_BETA1) * g
            v *= _ADAM_BETA2
            v += (1.0 - _ADAM_BETA2) * g * g
            p -= arch.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + _ADAM_EPS)

    lam = estimate_lambda(t)
    logger.debug(f"Nuisance fold {fold_id}: {n} rows, width {width}, final loss {loss:.6g}")
    return NuisanceFit(
        network=network,
        lambda_hat=lam,
        lambda_inv=invert_lambda(lam),
        fold_id=fold_id,
        final_loss=loss,
    )


def psi_scores(fit: NuisanceFit, y: np.ndarray, t: np.ndarray, x: Optional[np.ndarray]) -> np.ndarray:
    """Debiased scores for every treatment coordinate on held-out rows.

    Returns an (n, dim(t) - 1) array whose column k is
    g_{k+1}(X) + 2 e_{k+1}' Lambda^-1 t (Y - g(X)'t).
    """
    output = fit.g_hat(_features(x, y.shape[0]))
    residual = y - np.einsum("ij,ij->i", output, t)
    correction = 2.0 * (t @ fit.lambda_inv.T) * residual[:, None]
    return (output + correction)[:, 1:]
