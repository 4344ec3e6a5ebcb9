"""Feed-forward encoder over descriptors, AMSGrad-style optimizer, batch
construction from answered material triples, and the training loop.

The encoder maps a descriptor vector to a feature vector (default 128-d)
through fully-connected layers with rectified hidden units and an identity
output.  Training minimizes the combined loss over triplets instantiated from
the answered material-level comparisons present in each batch.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AnswerStore, DatasetBundle, DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION
from .losses import LossBatch, LossConfig, loss_combined


class TrainError(RuntimeError):
    pass


class EncoderModel:
    """Multilayer perceptron: rectifier on hidden layers, identity output.

    layer_dims = [input, hidden..., output].  A single entry means the
    identity map (no parameters).
    """

    def __init__(self, layer_dims, seed: int = 0, weights=None, biases=None):
        self.layer_dims = list(layer_dims)
        self.seed = seed
        if weights is not None:
            self.weights = [np.array(w, dtype=np.float64) for w in weights]
            self.biases = [np.array(b, dtype=np.float64) for b in biases]
        else:
            rng = np.random.default_rng(seed)
            self.weights, self.biases = [], []
            for fan_in, fan_out in zip(self.layer_dims, self.layer_dims[1:]):
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise TrainError("non-finite encoder parameter")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.layer_dims, self.seed,
                            [w.copy() for w in self.weights],
                            [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray, cache: bool = False):
        """Apply the encoder to one descriptor or a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise TrainError(
                f"descriptor dim {x.shape[1]} != encoder input {self.input_dim}")
        activations = [x]
        h = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
            activations.append(h)
        if not np.all(np.isfinite(h)):
            raise TrainError("non-finite encoder output")
        out = h[0] if squeeze else h
        if cache:
            return out, activations
        return out

    def backward(self, activations, grad_out: np.ndarray):
        """Reverse-mode pass.  Returns (param_grads aligned with parameters(),
        input gradients)."""
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        n_layers = len(self.weights)
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:  # rectifier gate on this layer's output
                g = g * (activations[i + 1] > 0)
            w_grads[i] = activations[i].T @ g
            b_grads[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        params = []
        for wg, bg in zip(w_grads, b_grads):
            params.extend([wg, bg])
        return params, g


def identity_model(dim: int) -> EncoderModel:
    """Parameter-free identity encoder (useful for analytic test problems)."""
    return EncoderModel([dim])


@dataclass
class OptimizerState:
    """Adam with the non-decreasing second-moment correction (AMSGrad)."""
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    v_max: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "OptimizerState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   v_max=[np.zeros_like(p) for p in params])


def optimizer_step(state: OptimizerState, params, grads, lr: float):
    """Apply one corrected-Adam update in place."""
    state.step_count += 1
    t = state.step_count
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise TrainError(f"parameter/gradient shape mismatch at index {i}")
        if not np.all(np.isfinite(g)):
            raise TrainError("non-finite gradient")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        state.v_max[i] = np.maximum(state.v_max[i], v_hat)
        p -= lr * m_hat / (np.sqrt(state.v_max[i]) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate_initial: float = 1e-3
    epochs: int = 80
    lr_step_epochs: int = 20
    lr_decay_factor: float = 10.0
    batch_materials: int = 8   # P
    views_per_batch_material: int = 4  # K
    hidden_dims: tuple = (64,)
    feature_dim: int = 128
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    batch_retries: int = 50
    parallel: bool = False

    def __post_init__(self):
        if self.batch_materials < 3:
            raise TrainError("batch needs at least 3 materials for a triplet")
        if min(self.learning_rate_initial, self.lr_step_epochs,
               self.lr_decay_factor) <= 0 or self.epochs < 0:
            raise TrainError("invalid training hyperparameters")


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise TrainError("epoch must be >= 0")
    steps = epoch // config.lr_step_epochs
    return config.learning_rate_initial / config.lr_decay_factor ** steps


@dataclass
class TrainingBatch:
    view_rows: np.ndarray          # descriptor row indices in the batch
    material_labels: np.ndarray    # material index per batch position
    triplets: list                 # (r_pos, a_pos, b_pos) positions into view_rows


def build_batch(bundle: DatasetBundle, answers: AnswerStore, config: TrainConfig,
                rng: np.random.Generator) -> TrainingBatch:
    """Sample P materials x K views and instantiate every answered material
    triple present in the batch, majority side first.  Tied comparisons are
    never instantiated."""
    triples = answers.majority_triples()
    if not triples:
        raise TrainError("answer store holds no majority-decided comparisons")
    mat_ids = bundle.material_ids
    mat_index = {m: i for i, m in enumerate(mat_ids)}
    by_material: dict[str, list[int]] = {m: [] for m in mat_ids}
    for v in bundle.views:
        by_material[v.material_id].append(v.descriptor_row)

    last_err = None
    for _ in range(config.batch_retries):
        chosen = rng.choice(len(mat_ids), size=min(config.batch_materials, len(mat_ids)),
                            replace=False)
        chosen_ids = [mat_ids[i] for i in chosen]
        rows, labels = [], []
        positions: dict[str, list[int]] = {}
        for mid in chosen_ids:
            avail = by_material[mid]
            k = min(config.views_per_batch_material, len(avail))
            picks = rng.choice(len(avail), size=k, replace=False)
            positions[mid] = []
            for p in picks:
                positions[mid].append(len(rows))
                rows.append(avail[p])
                labels.append(mat_index[mid])
        in_batch = set(chosen_ids)
        instantiated = []
        for mr, ma, mb in triples:
            if mr in in_batch and ma in in_batch and mb in in_batch:
                for pr in positions[mr]:
                    for pa in positions[ma]:
                        for pb in positions[mb]:
                            instantiated.append((pr, pa, pb))
        if instantiated:
            return TrainingBatch(np.array(rows, dtype=int),
                                 np.array(labels, dtype=int), instantiated)
        last_err = "no answered material triple instantiable in sampled batch"
    raise TrainError(f"{last_err} after {config.batch_retries} retries")


def train(bundle: DatasetBundle, answers: AnswerStore, config: TrainConfig,
          ) -> tuple[EncoderModel, list[float]]:
    """Train the encoder; returns the final model and the per-epoch loss trace.

    Deterministic per seed.  With weight_ce > 0 a linear softmax head over the
    feature vector provides the class distributions; its parameters train
    jointly with the encoder.
    """
    layer_dims = [bundle.descriptor_dim, *config.hidden_dims, config.feature_dim]
    model = EncoderModel(layer_dims, seed=config.seed)
    loss_cfg = config.loss
    use_ce = loss_cfg.weight_ce > 0
    n_classes = loss_cfg.n_classes or len(bundle.materials)
    rng = np.random.default_rng(config.seed)
    head_w = head_b = None
    if use_ce:
        bound = np.sqrt(6.0 / (config.feature_dim + n_classes))
        head_w = rng.uniform(-bound, bound, size=(config.feature_dim, n_classes))
        head_b = np.zeros(n_classes)

    params = model.parameters()
    if use_ce:
        params = params + [head_w, head_b]
    state = OptimizerState.for_params(params)

    batch_size = config.batch_materials * config.views_per_batch_material
    batches_per_epoch = max(1, len(bundle.views) // batch_size)
    trace: list[float] = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        epoch_losses = []
        for _ in range(batches_per_epoch):
            batch = build_batch(bundle, answers, config, rng)
            x = bundle.descriptors[batch.view_rows]
            feats, acts = model.forward(x, cache=True)

            lb = LossBatch(
                triplets=[(feats[r], feats[a], feats[b]) for r, a, b in batch.triplets],
                features=feats if loss_cfg.weight_btl > 0 else None,
                labels=batch.material_labels if (loss_cfg.weight_btl > 0 or use_ce) else None,
            )
            head_cache = None
            if use_ce:
                logits = feats @ head_w + head_b
                logits -= logits.max(axis=1, keepdims=True)
                expz = np.exp(logits)
                probs = expz / expz.sum(axis=1, keepdims=True)
                lb.class_probs = probs
                head_cache = probs
            value, grads = loss_combined(lb, loss_cfg, parallel=config.parallel)
            if not np.isfinite(value):
                raise TrainError(f"non-finite loss at epoch {epoch}")
            epoch_losses.append(value)

            feat_grad = np.zeros_like(feats)
            if grads.triplet is not None:
                g_r, g_a, g_b = grads.triplet
                for t, (r, a, b) in enumerate(batch.triplets):
                    feat_grad[r] += g_r[t]
                    feat_grad[a] += g_a[t]
                    feat_grad[b] += g_b[t]
            if grads.features is not None:
                feat_grad += grads.features
            head_grads = []
            if use_ce and grads.class_probs is not None:
                probs = head_cache
                # softmax jacobian: dL/dlogit = p * (dL/dp - sum_k dL/dp_k p_k)
                gp = grads.class_probs
                dlogit = probs * (gp - (gp * probs).sum(axis=1, keepdims=True))
                head_grads = [feats.T @ dlogit, dlogit.sum(axis=0)]
                feat_grad += dlogit @ head_w.T
            param_grads, _ = model.backward(acts, feat_grad)
            optimizer_step(state, params, param_grads + head_grads, lr)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise TrainError(f"non-finite parameter after epoch {epoch}")
        trace.append(float(np.mean(epoch_losses)))
    return model, trace


# ---------------------------------------------------------------------------
# Checkpoints: JSON header line, then one PDSC block per parameter tensor
# (layer order, weights before biases).


def save_checkpoint(path: Path, model: EncoderModel, epoch: int,
                    loss_config: LossConfig) -> None:
    header = {
        "layer_dims": model.layer_dims,
        "activation": "relu",
        "seed": model.seed,
        "epoch": epoch,
        "loss_config": {
            "margin_mu": loss_config.margin_mu,
            "weight_tl": loss_config.weight_tl,
            "weight_p": loss_config.weight_p,
            "weight_ce": loss_config.weight_ce,
            "weight_btl": loss_config.weight_btl,
            "label_smoothing_epsilon": loss_config.label_smoothing_epsilon,
            "n_classes": loss_config.n_classes,
        },
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for w, b in zip(model.weights, model.biases):
        for tensor in (w, b.reshape(1, -1)):
            rows, cols = tensor.shape
            buf.write(DESCRIPTOR_MAGIC)
            buf.write(struct.pack("<III", DESCRIPTOR_VERSION, rows, cols))
            buf.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Path) -> tuple[EncoderModel, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    offset = nl + 1
    tensors = []
    while offset < len(raw):
        if raw[offset:offset + 4] != DESCRIPTOR_MAGIC:
            raise TrainError(f"{path}: bad tensor block magic")
        version, rows, cols = struct.unpack("<III", raw[offset + 4:offset + 16])
        if version != DESCRIPTOR_VERSION:
            raise TrainError(f"{path}: unsupported block version {version}")
        count = rows * cols
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset + 16)
        tensors.append(data.reshape(rows, cols).astype(np.float64))
        offset += 16 + count * 4
    weights = tensors[0::2]
    biases = [t.ravel() for t in tensors[1::2]]
    model = EncoderModel(header["layer_dims"], seed=header.get("seed", 0),
                         weights=weights, biases=biases)
    return model, header
