"""Small feed-forward network with analytic gradients and an Adam optimizer.

The critics need only a few thousand parameters, so everything is plain
numpy: tanh hidden layers, a linear output layer, softmax cross-entropy
and mean-squared-error losses, and central-difference gradient checking.
"""
from pathlib import Path
from typing import Callable

import numpy as np

from src.errors import ConfigurationError, TrainingDivergenceError

PARAMETER_FILE_HEADER = "# reward-denoise network parameters v1"

LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


class MLP:
    """tanh MLP; layer sizes include the input and output widths"""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        if len(sizes) < 2 or any(size < 1 for size in sizes):
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        self.sizes = list(sizes)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        activations = [X]
        h = X
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            h = h @ W + b
            if layer < n_layers - 1:
                h = np.tanh(h)
            activations.append(h)
        return h, activations

    def backward(self, activations: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
        grads: list[np.ndarray] = [None] * len(self.params)
        n_layers = len(self.params) // 2
        delta = dout
        for layer in reversed(range(n_layers)):
            inputs = activations[layer]
            grads[2 * layer] = inputs.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.params[2 * layer].T) * (1.0 - inputs**2)
        return grads

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits"""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / n


def mse_loss(outputs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    residual = outputs - targets.reshape(outputs.shape)
    return float(np.mean(residual**2)), 2.0 * residual / residual.size


class Adam:
    def __init__(self, params: list[np.ndarray], learning_rate=1e-3, beta_1=0.9, beta_2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        correction_1 = 1 - self.beta_1**self.t
        correction_2 = 1 - self.beta_2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta_1
            m += (1 - self.beta_1) * g
            v *= self.beta_2
            v += (1 - self.beta_2) * g**2
            p -= self.learning_rate * (m / correction_1) / (np.sqrt(v / correction_2) + self.epsilon)


def evaluate_loss(model: MLP, X: np.ndarray, targets: np.ndarray, loss_fn: LossFn) -> float:
    return loss_fn(model(X), targets)[0]


def train_minibatches(
    model: MLP,
    optimizer: Adam,
    X: np.ndarray,
    targets: np.ndarray,
    loss_fn: LossFn,
    iterations: int,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """Run `iterations` optimizer steps on random minibatches and return the
    full-batch loss afterwards."""
    n = X.shape[0]
    for iteration in range(iterations):
        idx = rng.integers(0, n, size=min(batch_size, n))
        outputs, activations = model.forward(X[idx])
        loss, dout = loss_fn(outputs, targets[idx])
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                "non-finite minibatch loss", {"iteration": iteration, "loss": loss, "optimizer_step": optimizer.t}
            )
        optimizer.step(model.params, model.backward(activations, dout))
    loss = evaluate_loss(model, X, targets, loss_fn)
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite loss after training", {"loss": loss, "optimizer_step": optimizer.t})
    return loss


def gradient_check(
    model: MLP,
    X: np.ndarray,
    targets: np.ndarray,
    loss_fn: LossFn,
    rng: np.random.Generator,
    checks_per_array: int = 5,
    eps: float = 1e-5,
) -> np.ndarray:
    """Relative errors between analytic and central-difference gradients at
    randomly chosen parameters (checks_per_array per weight/bias array)."""
    outputs, activations = model.forward(X)
    _, dout = loss_fn(outputs, targets)
    analytic = model.backward(activations, dout)
    errors = []
    for p, g in zip(model.params, analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in rng.choice(flat.size, size=min(checks_per_array, flat.size), replace=False):
            original = flat[i]
            flat[i] = original + eps
            plus = evaluate_loss(model, X, targets, loss_fn)
            flat[i] = original - eps
            minus = evaluate_loss(model, X, targets, loss_fn)
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            errors.append(abs(gflat[i] - numeric) / max(abs(gflat[i]) + abs(numeric), 1e-6))
    return np.array(errors)


def save_parameters(model: MLP, path: Path):
    shapes = " ".join("x".join(str(d) for d in p.shape) for p in model.params)
    lines = [PARAMETER_FILE_HEADER, f"# sizes: {' '.join(map(str, model.sizes))}", f"# shapes: {shapes}"]
    lines += [f"{value:.17g}" for p in model.params for value in p.reshape(-1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_parameters(model: MLP, path: Path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != PARAMETER_FILE_HEADER:
        raise ConfigurationError(f"{path} is not a parameter file")
    sizes = [int(s) for s in lines[1].removeprefix("# sizes:").split()]
    if sizes != model.sizes:
        raise ConfigurationError(f"{path} holds a {sizes} network, model is {model.sizes}")
    values = np.array([float(line) for line in lines[3:] if line.strip()])
    if values.size != model.n_parameters:
        raise ConfigurationError(f"{path} holds {values.size} values, expected {model.n_parameters}")
    offset = 0
    for p in model.params:
        p[...] = values[offset : offset + p.size].reshape(p.shape)
        offset += p.size
