"""Small dense networks on torch

Networks run in double precision, observations arrive as numpy arrays and
are converted with as_tensor. Weights are Glorot uniform from a seeded
generator so runs with the same seed start from the same weights.
"""

import math
from typing import Dict, Optional, Sequence, Type, Union

import numpy as np
import torch
from torch import nn

from jsstools.exceptions import DivergedError, JSTError

DTYPE = torch.float64

ACTIVATIONS: Dict[str, Type[nn.Module]] = {
    "sigmoid": nn.Sigmoid,
    "tanh": nn.Tanh,
    "relu": nn.ReLU,
}

Seed = Union[torch.Generator, int, None]


def generator(seed: Seed) -> torch.Generator:

    if isinstance(seed, torch.Generator):
        return seed
    gen = torch.Generator()
    if seed is None:
        gen.seed()
    else:
        gen.manual_seed(int(seed))
    return gen


def as_tensor(x: Union[np.ndarray, Sequence[float], torch.Tensor]) -> torch.Tensor:
    """Batch of observations, a single observation becomes a batch of one"""

    t = torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)
    return t.unsqueeze(0) if t.dim() < 2 else t


class DenseNet(nn.Module):
    """Fully connected network

    Hidden layers use the activation, the output layer is linear unless
    activate_output is set.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        activation: str = "tanh",
        seed: Seed = None,
        activate_output: bool = False,
    ) -> None:

        super().__init__()
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise JSTError(f"Invalid layer sizes {list(sizes)}")
        if activation not in ACTIVATIONS:
            raise JSTError(
                f"Unknown activation {activation!r}, use {', '.join(ACTIVATIONS)}"
            )

        self.sizes = tuple(sizes)
        self.activation = activation
        self.activate_output = activate_output

        gen = generator(seed)
        layers = []
        last = len(sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            linear = nn.Linear(n_in, n_out, dtype=DTYPE)
            limit = math.sqrt(6.0 / (n_in + n_out))
            with torch.no_grad():
                linear.weight.uniform_(-limit, limit, generator=gen)
                linear.bias.zero_()
            layers.append(linear)
            if i < last or activate_output:
                layers.append(ACTIVATIONS[activation]())
        self.layers = nn.Sequential(*layers)

    @property
    def linears(self) -> Sequence[nn.Linear]:
        return [m for m in self.layers if isinstance(m, nn.Linear)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class QNetwork(nn.Module):
    """Action value network, optionally with a dueling head

    The dueling head combines a state value V and action advantages A as
    Q = V + A - mean(A).
    """

    def __init__(
        self,
        n_inputs: int,
        n_actions: int,
        hidden: Sequence[int] = (64, 64),
        activation: str = "sigmoid",
        seed: Seed = None,
        dueling: bool = False,
    ) -> None:

        super().__init__()
        gen = generator(seed)
        self.n_actions = n_actions
        self.dueling = dueling
        if not dueling:
            self.body = DenseNet([n_inputs, *hidden, n_actions], activation, gen)
        else:
            if not hidden:
                raise JSTError("A dueling network needs a hidden layer")
            self.body = DenseNet(
                [n_inputs, *hidden], activation, gen, activate_output=True
            )
            self.value_head = DenseNet([hidden[-1], 1], activation, gen)
            self.advantage_head = DenseNet([hidden[-1], n_actions], activation, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:

        features = self.body(x)
        if not self.dueling:
            return features
        value = self.value_head(features)
        advantage = self.advantage_head(features)
        return value + advantage - advantage.mean(dim=1, keepdim=True)


def predict(net: nn.Module, x: Union[np.ndarray, Sequence[float]]) -> np.ndarray:
    """Forward pass without gradients as a numpy batch"""

    with torch.no_grad():
        return net(as_tensor(x)).numpy()


def copy_params(source: nn.Module, target: nn.Module) -> None:
    target.load_state_dict(source.state_dict())


def squared_loss(
    prediction: torch.Tensor,
    targets: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Summed squared error per sample, averaged over the batch"""

    diff = prediction - targets
    if mask is not None:
        diff = diff * mask
    return (diff * diff).sum() / max(len(diff), 1)


def _like(values: np.ndarray, prediction: torch.Tensor) -> torch.Tensor:

    t = torch.as_tensor(np.asarray(values, dtype=float), dtype=DTYPE)
    return t.reshape(prediction.shape)


def backprop_step(
    net: nn.Module,
    x: np.ndarray,
    targets: np.ndarray,
    optimizer: Union[torch.optim.Optimizer, float],
    mask: Optional[np.ndarray] = None,
    max_grad_norm: Optional[float] = None,
    step: int = -1,
) -> float:
    """One gradient step on the squared loss, returns the loss before the step

    A float optimizer is a plain SGD learning rate. With a mask only the
    selected outputs contribute to the loss.
    """

    if not isinstance(optimizer, torch.optim.Optimizer):
        if optimizer <= 0:
            raise JSTError(f"learning_rate must be > 0, not {optimizer}")
        optimizer = torch.optim.SGD(net.parameters(), lr=optimizer)

    prediction = net(as_tensor(x))
    loss = squared_loss(
        prediction,
        _like(targets, prediction),
        None if mask is None else _like(mask, prediction),
    )
    if not torch.isfinite(loss):
        raise DivergedError("Loss is not finite", step)

    optimizer.zero_grad()
    loss.backward()
    if max_grad_norm is not None:
        nn.utils.clip_grad_norm_(net.parameters(), max_grad_norm)
    optimizer.step()
    return float(loss)


def gradient_check(
    net: nn.Module,
    x: np.ndarray,
    targets: np.ndarray,
    h: float = 1e-6,
    mask: Optional[np.ndarray] = None,
    floor: float = 1e-3,
) -> float:
    """Largest relative difference of autograd and central difference gradients

    Gradients smaller than floor are compared on the absolute scale of floor.
    """

    inputs = as_tensor(x)
    prediction = net(inputs)
    y = _like(targets, prediction)
    m = None if mask is None else _like(mask, prediction)

    net.zero_grad()
    squared_loss(prediction, y, m).backward()

    worst = 0.0
    with torch.no_grad():
        for p in net.parameters():
            analytic = p.grad.reshape(-1).clone()
            flat = p.view(-1)
            for i in range(flat.numel()):
                saved = float(flat[i])
                flat[i] = saved + h
                plus = float(squared_loss(net(inputs), y, m))
                flat[i] = saved - h
                minus = float(squared_loss(net(inputs), y, m))
                flat[i] = saved
                numeric = (plus - minus) / (2 * h)
                g = float(analytic[i])
                worst = max(worst, abs(numeric - g) / max(abs(numeric), abs(g), floor))
    net.zero_grad()
    return worst


def load_module_state(
    module: nn.Module, state: Dict[str, torch.Tensor], name: str
) -> None:
    """load_state_dict with shape mismatches reported as JSTError"""

    try:
        module.load_state_dict(state)
    except (RuntimeError, KeyError) as exc:
        raise JSTError(f"Cannot load {name}: {exc}")
