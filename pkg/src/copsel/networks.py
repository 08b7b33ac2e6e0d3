"""ChoiceNet / sampler / PredictNet architecture and joint training.

ChoiceNet maps a sample to per-feature scores alpha plus the factor
parameterization (L, sigma) of the noise correlation. The sampler turns
alpha and correlated uniform noise into a relaxed mask; PredictNet
classifies the suppressed input x * mask. Both networks are trained
jointly with Adam, gradients flowing through the sampler and the
Cholesky factorization into the copula heads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .copula import (CorrelationModel, independent_uniform,
                     sample_correlated_uniform, sample_factor_uniform)
from .samplers import RelaxedMask, SamplerParams, binary_mask, topk_relaxed, trunc
from .synthetic import Dataset
from .tensor import BatchNorm, Tensor

ALPHA_FLOOR = 1e-6
SIGMA_FLOOR = 1e-4

_ACTIVATIONS = {"relu": T.relu, "selu": T.selu}


@dataclass
class TrainingConfig:
    mode: str = "binary"  # binary | topk
    t: float = 3.0
    delta: float = 0.8
    lam: float = 0.1
    k: int = 1
    tau: float = 1.0
    h_c: int = 100
    h_p: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 1000
    epochs: int = 1000
    weight_decay: float = 1e-3
    rank_mode: str = "full"  # low | full
    p: int = 0  # factor rank when rank_mode == "low"
    seed: int = 0
    activation: str = "relu"
    score_head: str = "linear"  # linear | sigmoid (binary mode only)
    nola: bool = False
    stochastic_binary_inference: bool = False
    eval_every: int = 0  # 0 -> only at the end

    def __post_init__(self):
        if self.mode not in ("binary", "topk"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch norm)")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        SamplerParams(t=self.t, delta=self.delta, k=self.k, lam=self.lam)

    def sampler_params(self) -> SamplerParams:
        return SamplerParams(t=self.t, delta=self.delta, k=self.k,
                             lam=self.lam)

    def factor_rank(self, d: int) -> int:
        if self.rank_mode == "full":
            return d
        if self.p < 1:
            raise ValueError("low-rank mode requires p >= 1")
        return self.p


class Linear:
    """Fully connected layer with fan-in uniform init."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias: bool = True):
        limit = np.sqrt(6.0 / n_in)
        self.W = Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.W)
        return T.add(out, self.b) if self.b is not None else out

    def parameters(self):
        return [self.W] if self.b is None else [self.W, self.b]


class ChoiceNet:
    """Scores alpha plus copula heads (L, sigma) from the hidden state.

    Three-layer MLP d -> h_c -> h_c -> d for the scores; the second
    hidden activation O_h also feeds the weight-only heads producing the
    factor matrix L (ReLU) and the noise scalar sigma (|mean(tanh)|,
    floored to keep the covariance positive definite).
    """

    def __init__(self, d: int, h_c: int, rank: int, mode: str,
                 rng: np.random.Generator, activation: str = "relu",
                 score_head: str = "linear"):
        self.d = d
        self.rank = rank
        self.mode = mode
        self.score_head = score_head
        self.act = _ACTIVATIONS[activation]
        self.fc1 = Linear(d, h_c, rng)
        self.fc2 = Linear(h_c, h_c, rng)
        self.fc3 = Linear(h_c, d, rng)
        self.W_L = Linear(h_c, d * rank, rng, bias=False)
        self.W_sigma = Linear(h_c, d, rng, bias=False)

    def hidden(self, x: Tensor) -> Tensor:
        return self.act(self.fc2(self.act(self.fc1(x))))

    def scores(self, o_h: Tensor) -> Tensor:
        raw = self.fc3(o_h)
        if self.mode == "topk":
            return T.add(T.softplus(raw), ALPHA_FLOOR)
        if self.score_head == "sigmoid":
            return T.sigmoid(raw)
        return raw

    def forward(self, x: Tensor, tau: float = 1.0):
        """Returns (alpha, per-sample CorrelationModel)."""
        o_h = self.hidden(x)
        alpha = self.scores(o_h)
        batch = x.shape[0]
        L = T.reshape(T.relu(self.W_L(o_h)), (batch, self.d, self.rank))
        sigma = None
        if self.mode == "binary":
            sigma = T.add(
                T.absolute(T.mean_(T.tanh(self.W_sigma(o_h)), axis=1)),
                SIGMA_FLOOR)
        model = CorrelationModel(L=L, sigma=sigma, tau=tau,
                                 rank_mode="low" if self.rank < self.d else "full",
                                 mode=self.mode)
        return alpha, model

    def parameters(self):
        return (self.fc1.parameters() + self.fc2.parameters()
                + self.fc3.parameters() + self.W_L.parameters()
                + self.W_sigma.parameters())


class PredictNet:
    """Three-layer softmax classifier with batch norm after activations."""

    def __init__(self, d: int, h_p: int, n_classes: int,
                 rng: np.random.Generator, activation: str = "relu"):
        self.act = _ACTIVATIONS[activation]
        self.fc1 = Linear(d, h_p, rng)
        self.bn1 = BatchNorm(h_p)
        self.fc2 = Linear(h_p, h_p, rng)
        self.bn2 = BatchNorm(h_p)
        self.fc3 = Linear(h_p, n_classes, rng)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        h = self.bn1(self.act(self.fc1(x)), training)
        h = self.bn2(self.act(self.fc2(h)), training)
        return T.softmax(self.fc3(h), axis=-1)

    def parameters(self):
        return (self.fc1.parameters() + self.bn1.parameters()
                + self.fc2.parameters() + self.bn2.parameters()
                + self.fc3.parameters())


def cross_entropy(pred: Tensor, y: np.ndarray) -> Tensor:
    picked = T.gather_rows(pred, y)
    return T.neg(T.mean_(T.log(T.clamp(picked, 1e-30, None))))


def loss_binary(pred: Tensor, y: np.ndarray, soft: Tensor, lam: float) -> Tensor:
    """Cross-entropy plus lambda * mean L1 of the relaxed mask."""
    ce = cross_entropy(pred, y)
    if lam == 0.0:
        return ce
    return T.add(ce, T.mul(T.mean_(T.sum_(soft, axis=1)), lam))


def loss_topk(pred: Tensor, y: np.ndarray) -> Tensor:
    """Plain cross-entropy; cardinality is enforced by the sampler."""
    return cross_entropy(pred, y)


class Adam:
    """Bias-corrected Adam with decoupled weight decay."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def zero_grad(self):
        T.zero_grads(self.params)


@dataclass
class TrainedModel:
    choice: ChoiceNet
    predict: PredictNet
    config: TrainingConfig
    history: list = field(default_factory=list)


def _sample_mask(choice: ChoiceNet, xb: Tensor, config: TrainingConfig,
                 rng: np.random.Generator) -> tuple[Tensor, RelaxedMask]:
    alpha, corr = choice.forward(xb, tau=config.tau)
    if config.nola:
        noise = independent_uniform((xb.shape[0], choice.d), rng)
    else:
        # distribution-identical to sample_correlated_uniform but avoids
        # the per-sample d x d Cholesky in the training hot path
        noise = sample_factor_uniform(corr, rng)
    params = config.sampler_params()
    if config.mode == "binary":
        return alpha, binary_mask(alpha, noise, params)
    return alpha, topk_relaxed(alpha, noise, params)


def train(config: TrainingConfig, data: Dataset,
          test_data: Dataset | None = None,
          progress=None) -> TrainedModel:
    """Jointly optimize ChoiceNet and PredictNet; deterministic per seed."""
    if data.n == 0:
        raise ValueError("dataset is empty")
    d = data.d
    if config.mode == "topk" and config.k > d:
        raise ValueError(f"k={config.k} exceeds feature dimension {d}")
    rank = config.factor_rank(d)
    rng = np.random.default_rng(config.seed)
    choice = ChoiceNet(d, config.h_c, rank, config.mode, rng,
                       activation=config.activation,
                       score_head=config.score_head)
    predict = PredictNet(d, config.h_p, data.n_classes, rng,
                         activation=config.activation)
    params = choice.parameters() + predict.parameters()
    opt = Adam(params, lr=config.learning_rate,
               weight_decay=config.weight_decay)

    model = TrainedModel(choice=choice, predict=predict, config=config)
    n = data.n
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.shape[0] < 2:
                continue  # batch norm needs >= 2 rows
            xb = Tensor(data.x[idx])
            yb = data.y[idx]
            try:
                alpha, mask = _sample_mask(choice, xb, config, rng)
                pred = predict.forward(T.mul(xb, mask.soft), training=True)
                if config.mode == "binary":
                    loss = loss_binary(pred, yb, mask.soft, config.lam)
                else:
                    loss = loss_topk(pred, yb)
            except T.TensorError as err:
                raise T.TensorError(
                    f"non-finite value at epoch {epoch}, batch {n_batches}: "
                    f"{err}") from err
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            n_batches += 1

        entry = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1)}
        last = epoch == config.epochs - 1
        if test_data is not None and (
                last or (config.eval_every and
                         (epoch + 1) % config.eval_every == 0)):
            entry.update(evaluate(model, test_data))
        model.history.append(entry)
        if progress is not None:
            progress(entry)
    return model


def infer_mask(choice: ChoiceNet, x, config: TrainingConfig,
               rng: np.random.Generator | None = None) -> RelaxedMask:
    """Deterministic inference masks (noise-free).

    Binary mode rounds the marginal inclusion probability
    sigmoid(alpha) half-to-even (optionally samples Bernoulli instead);
    top-k mode runs the relaxation with constant noise u = 0.5, whose
    keys log(0.5)/alpha rank exactly like alpha.
    """
    x = T.as_tensor(x)
    with T.no_grad():
        alpha, _ = choice.forward(x, tau=config.tau)
        if config.mode == "binary":
            prob = T.sigmoid(alpha)
            if config.stochastic_binary_inference:
                if rng is None:
                    raise ValueError("stochastic inference needs an rng")
                hard = (rng.uniform(size=prob.shape) < prob.data).astype(float)
            else:
                hard = np.round(prob.data)
            return RelaxedMask(soft=prob, hard=hard, mode="binary")
        from .copula import NoiseDraw
        half = Tensor(np.full(alpha.shape, 0.5))
        noise = NoiseDraw(zeta=None, q=half, u=half)
        mask = topk_relaxed(alpha, noise, config.sampler_params())
    return mask


def evaluate(model: TrainedModel, data: Dataset) -> dict:
    """Hard-mask metrics on a dataset: accuracy plus TPR/FDR when
    ground truth is available."""
    from .evaluation import accuracy, tpr_fdr

    with T.no_grad():
        mask = infer_mask(model.choice, data.x, model.config)
        pred = model.predict.forward(
            T.mul(Tensor(data.x), Tensor(mask.hard)), training=False)
    out = {"accuracy": accuracy(pred.data, data.y),
           "mean_selected": float(mask.hard.sum(axis=1).mean())}
    if data.relevant is not None:
        metrics = tpr_fdr(mask.hard, data.relevant)
        out["tpr"] = metrics.tpr
        out["fdr"] = metrics.fdr
    return out


# -- checkpoint format ----------------------------------------------------

def _named_parameters(model: TrainedModel) -> dict:
    names = {}
    for prefix, net in (("choice", model.choice), ("predict", model.predict)):
        for i, p in enumerate(net.parameters()):
            names[f"{prefix}.{i}"] = p
    names["predict.bn1.running_mean"] = model.predict.bn1.running_mean
    names["predict.bn1.running_var"] = model.predict.bn1.running_var
    names["predict.bn2.running_mean"] = model.predict.bn2.running_mean
    names["predict.bn2.running_var"] = model.predict.bn2.running_var
    return names


def config_hash(config: TrainingConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(model: TrainedModel, arrays_path, manifest_path,
                    extra: dict | None = None) -> None:
    """Named parameter arrays (.npz) plus a JSON manifest."""
    named = _named_parameters(model)
    arrays = {k: (v.data if isinstance(v, Tensor) else v)
              for k, v in named.items()}
    np.savez(arrays_path, **arrays)
    manifest = {
        "config": asdict(model.config),
        "config_hash": config_hash(model.config),
        "d": model.choice.d,
        "n_classes": model.predict.fc3.W.shape[1],
        "rank": model.choice.rank,
        "parameters": {k: list(a.shape) for k, a in arrays.items()},
    }
    if extra:
        manifest.update(extra)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_checkpoint(arrays_path, manifest_path) -> TrainedModel:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = TrainingConfig(**manifest["config"])
    d = manifest["d"]
    n_classes = manifest["n_classes"]
    rng = np.random.default_rng(config.seed)
    choice = ChoiceNet(d, config.h_c, manifest["rank"], config.mode, rng,
                       activation=config.activation,
                       score_head=config.score_head)
    predict = PredictNet(d, config.h_p, n_classes, rng,
                         activation=config.activation)
    model = TrainedModel(choice=choice, predict=predict, config=config)
    arrays = np.load(arrays_path)
    named = _named_parameters(model)
    for key, target in named.items():
        value = arrays[key]
        if isinstance(target, Tensor):
            target.data[...] = value
        else:
            target[...] = value
    return model
