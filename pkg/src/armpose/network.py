"""From-scratch feedforward and recurrent estimators.

Both architectures are built on plain numpy with hand-written backprop:

* feedforward: five SELU hidden layers of width 128, inverted dropout after
  each hidden layer, linear output head;
* recurrent: four stacked LSTM layers of width 128 unrolled over 6 steps,
  dropout between stacked layers (never through time), linear head on the
  final step of the top layer.

Training uses Adam (lr 0.001), an MAE loss, up to 200 epochs and early
stopping once the best validation loss has not improved for 10 epochs.
Inputs are deliberately not normalized; SELU's self-normalizing behavior is
relied on instead. Everything is deterministic given a seed.
"""

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .codecs import codec_dim
from .errors import ShapeError, TrainingDivergedError
from .frames import FEATURE_DIM, SEQUENCE_STEP_DIM

SELU_ALPHA = 1.6733
SELU_LAMBDA = 1.0507

_ARCH_DEPTH = {"feedforward": 5, "recurrent": 4}
_ARCH_INPUT = {"feedforward": FEATURE_DIM, "recurrent": SEQUENCE_STEP_DIM}


def selu(x):
    """lambda * x for x > 0, lambda * alpha * (e^x - 1) otherwise."""
    x = np.asarray(x)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def _selu_grad(z):
    z = np.asarray(z)
    return np.where(
        z > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0))
    )


def _sigmoid(x):
    # tanh-based form keeps float32 throughput high
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; unset fields resolve to the defaults above."""

    arch: str
    codec: str | None = None
    width: int = 128
    depth: int | None = None
    dropout: float = 0.2
    input_dim: int | None = None
    output_dim: int | None = None

    def __post_init__(self):
        if self.arch not in _ARCH_DEPTH:
            raise ShapeError(f"unknown architecture {self.arch!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ShapeError("dropout rate must be in [0, 1)")
        if self.depth is None:
            object.__setattr__(self, "depth", _ARCH_DEPTH[self.arch])
        if self.input_dim is None:
            object.__setattr__(self, "input_dim", _ARCH_INPUT[self.arch])
        if self.output_dim is None:
            if self.codec is None:
                raise ShapeError("ModelSpec needs a codec or an explicit output_dim")
            object.__setattr__(self, "output_dim", codec_dim(self.codec))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def parameter_layout(spec):
    """Named parameter shapes, in storage order."""
    entries = []
    if spec.arch == "feedforward":
        d = spec.input_dim
        for i in range(spec.depth):
            entries.append((f"h{i + 1}.W", (d, spec.width)))
            entries.append((f"h{i + 1}.b", (spec.width,)))
            d = spec.width
    else:
        d = spec.input_dim
        for i in range(spec.depth):
            entries.append((f"l{i + 1}.W", (d, 4 * spec.width)))
            entries.append((f"l{i + 1}.U", (spec.width, 4 * spec.width)))
            entries.append((f"l{i + 1}.b", (4 * spec.width,)))
            d = spec.width
    entries.append(("head.W", (spec.width, spec.output_dim)))
    entries.append(("head.b", (spec.output_dim,)))
    return entries


class Parameters:
    """A flat parameter vector plus named views into it (and its gradient)."""

    def __init__(self, layout, data=None, dtype=np.float64):
        self.layout = [(name, tuple(shape)) for name, shape in layout]
        total = sum(int(np.prod(shape)) for _, shape in self.layout)
        if data is None:
            data = np.zeros(total, dtype=dtype)
        else:
            data = np.asarray(data, dtype=dtype)
            if data.shape != (total,):
                raise ShapeError(
                    f"flat parameter vector has {data.shape}, layout wants ({total},)"
                )
        self.data = data
        self.grad = np.zeros(total, dtype=dtype)
        self._views = {}
        self._grad_views = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self._views[name] = self.data[offset : offset + size].reshape(shape)
            self._grad_views[name] = self.grad[offset : offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name):
        return self._views[name]

    def grad_of(self, name):
        return self._grad_views[name]

    def zero_grad(self):
        self.grad[:] = 0.0

    @property
    def dtype(self):
        return self.data.dtype


def init_params(spec, rng, dtype=np.float64):
    """Fan-in-scaled Gaussian init (variance 1/fan_in), suited to SELU;
    LSTM forget-gate biases start at +1."""
    params = Parameters(parameter_layout(spec), dtype=dtype)
    for name, shape in params.layout:
        view = params[name]
        if name.endswith(".W") or name.endswith(".U"):
            fan_in = shape[0]
            view[:] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        elif name.endswith(".b") and name.startswith("l"):
            w = spec.width
            view[:] = 0.0
            view[w : 2 * w] = 1.0  # forget gate
        else:
            view[:] = 0.0
    return params


def _as_masks(spec, dropout, n, steps=None, dtype=np.float64):
    """Normalize the dropout argument to a list of scaled mask arrays.

    `dropout` may be None (off), a numpy Generator (fresh masks drawn in a
    fixed layer order) or a pre-built list of mask arrays.
    """
    if dropout is None:
        return None
    p = spec.dropout
    if isinstance(dropout, np.random.Generator):
        if p == 0.0:
            return None
        shapes = dropout_mask_shapes(spec, steps)
        return [
            ((dropout.random((n,) + s) >= p) / (1.0 - p)).astype(dtype)
            for s in shapes
        ]
    return [np.asarray(m, dtype=dtype) for m in dropout]


def dropout_mask_shapes(spec, steps=None):
    """Per-pass mask shapes, in draw order."""
    if spec.arch == "feedforward":
        return [(spec.width,)] * spec.depth
    if steps is None:
        raise ShapeError("recurrent mask shapes need the sequence length")
    return [(steps, spec.width)] * (spec.depth - 1)


class FeedForwardNet:
    def __init__(self, spec, params):
        self.spec = spec
        self.params = params

    def forward(self, X, dropout=None):
        y, _ = self._run(X, dropout, keep_cache=False)
        return y

    def forward_train(self, X, dropout=None):
        return self._run(X, dropout, keep_cache=True)

    def forward_mc(self, x, masks):
        """Stochastic passes over one input: row i of every mask is pass i.

        The first hidden layer sees identical rows, so it is evaluated once
        and tiled before the first mask is applied.
        """
        p = self.params
        x = np.asarray(x, dtype=p.dtype).reshape(1, -1)
        self._check_input(x)
        h = selu(x @ p["h1.W"] + p["h1.b"])
        a = masks[0] * h  # broadcasts the shared first layer over the passes
        for i in range(2, self.spec.depth + 1):
            a = selu(np.dot(a, p[f"h{i}.W"]) + p[f"h{i}.b"]) * masks[i - 1]
        return np.dot(a, p["head.W"]) + p["head.b"]

    def _check_input(self, X):
        if X.ndim != 2 or X.shape[1] != self.spec.input_dim:
            raise ShapeError(
                f"feedforward input must be (n, {self.spec.input_dim}), got {X.shape}"
            )

    def _run(self, X, dropout, keep_cache):
        p = self.params
        X = np.asarray(X, dtype=p.dtype)
        self._check_input(X)
        masks = _as_masks(self.spec, dropout, X.shape[0], dtype=p.dtype)
        a = X
        cache = {"inputs": [], "pre": [], "masks": masks} if keep_cache else None
        for i in range(1, self.spec.depth + 1):
            z = a @ p[f"h{i}.W"] + p[f"h{i}.b"]
            h = selu(z)
            if masks is not None:
                h = h * masks[i - 1]
            if keep_cache:
                cache["inputs"].append(a)
                cache["pre"].append(z)
            a = h
        if keep_cache:
            cache["top"] = a
        return a @ p["head.W"] + p["head.b"], cache

    def backward(self, d_out, cache):
        """Accumulate parameter gradients for a forward_train pass."""
        p = self.params
        d_out = np.asarray(d_out, dtype=p.dtype)
        p.grad_of("head.W")[:] += cache["top"].T @ d_out
        p.grad_of("head.b")[:] += d_out.sum(axis=0)
        da = d_out @ p["head.W"].T
        masks = cache["masks"]
        for i in range(self.spec.depth, 0, -1):
            if masks is not None:
                da = da * masks[i - 1]
            dz = da * _selu_grad(cache["pre"][i - 1])
            p.grad_of(f"h{i}.W")[:] += cache["inputs"][i - 1].T @ dz
            p.grad_of(f"h{i}.b")[:] += dz.sum(axis=0)
            if i > 1:
                da = dz @ p[f"h{i}.W"].T
        return da


class RecurrentNet:
    def __init__(self, spec, params):
        self.spec = spec
        self.params = params

    def _check_input(self, X):
        if X.ndim != 3 or X.shape[2] != self.spec.input_dim:
            raise ShapeError(
                f"recurrent input must be (n, steps, {self.spec.input_dim}), got {X.shape}"
            )

    def forward(self, X, dropout=None):
        y, _ = self._run(X, dropout, keep_cache=False)
        return y

    def forward_train(self, X, dropout=None):
        return self._run(X, dropout, keep_cache=True)

    def forward_mc(self, x, masks):
        """Stochastic passes over one window; the dropout-free bottom layer
        is evaluated once and tiled."""
        p = self.params
        x = np.asarray(x, dtype=p.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError("forward_mc expects one (steps, input_dim) window")
        h, _ = self._layer_forward(1, x[None, :, :], keep_cache=False)
        a = masks[0] * h  # broadcasts the shared bottom layer over the passes
        for layer in range(2, self.spec.depth + 1):
            h, _ = self._layer_forward(layer, a, keep_cache=False)
            if layer < self.spec.depth:
                np.multiply(h, masks[layer - 1], out=h)
            a = h
        return np.dot(a[:, -1, :], p["head.W"]) + p["head.b"]

    def _layer_forward(self, layer, X, keep_cache):
        """One LSTM layer over all steps; X is (n, T, d_in)."""
        p = self.params
        W = p[f"l{layer}.W"]
        U = p[f"l{layer}.U"]
        b = p[f"l{layer}.b"]
        n, T, d_in = X.shape
        w = self.spec.width
        if not keep_cache:
            zx = np.dot(np.ascontiguousarray(X).reshape(n * T, d_in), W)
            zx += b
            return self._layer_forward_fast(U, zx.reshape(n, T, 4 * w), n, T, w), None
        zx = (X.reshape(n * T, d_in) @ W).reshape(n, T, 4 * w) + b
        h = np.zeros((n, w), dtype=p.dtype)
        c = np.zeros((n, w), dtype=p.dtype)
        hs = np.empty((n, T, w), dtype=p.dtype)
        cache = {"X": X, "i": [], "f": [], "g": [], "o": [], "tc": [],
                 "c_prev": [], "h_prev": []}
        for t in range(T):
            z = zx[:, t, :] + h @ U
            i = _sigmoid(z[:, :w])
            f = _sigmoid(z[:, w : 2 * w])
            o = _sigmoid(z[:, 2 * w : 3 * w])
            g = np.tanh(z[:, 3 * w :])
            cache["c_prev"].append(c)
            cache["h_prev"].append(h)
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t, :] = h
            cache["i"].append(i)
            cache["f"].append(f)
            cache["g"].append(g)
            cache["o"].append(o)
            cache["tc"].append(tc)
        return hs, cache

    def _layer_forward_fast(self, U, zx, n, T, w):
        """Inference-only step loop: preallocated buffers, in-place gates."""
        dtype = self.params.dtype
        h = np.zeros((n, w), dtype=dtype)
        c = np.zeros((n, w), dtype=dtype)
        hs = np.empty((n, T, w), dtype=dtype)
        z = np.empty((n, 4 * w), dtype=dtype)
        tmp = np.empty((n, w), dtype=dtype)
        for t in range(T):
            np.dot(h, U, out=z)  # dot hits BLAS with less overhead than matmul
            z += zx[:, t, :]
            # gates are laid out [i, f, o, g]: one contiguous sigmoid block
            sig = z[:, : 3 * w]
            sig *= 0.5
            np.tanh(sig, out=sig)
            sig *= 0.5
            sig += 0.5
            g = z[:, 3 * w :]
            np.tanh(g, out=g)
            c *= z[:, w : 2 * w]
            np.multiply(z[:, :w], g, out=tmp)
            c += tmp
            np.tanh(c, out=tmp)
            np.multiply(z[:, 2 * w : 3 * w], tmp, out=h)
            hs[:, t, :] = h
        return hs

    def _layer_backward(self, layer, cache, d_hs):
        """BPTT for one layer; d_hs is (n, T, w) incoming state gradients.
        Returns the gradient w.r.t. the layer input."""
        p = self.params
        W = p[f"l{layer}.W"]
        U = p[f"l{layer}.U"]
        X = cache["X"]
        n, T, d_in = X.shape
        w = self.spec.width
        dZ = np.empty((n, T, 4 * w), dtype=p.dtype)
        dh_next = np.zeros((n, w), dtype=p.dtype)
        dc_next = np.zeros((n, w), dtype=p.dtype)
        dU = np.zeros_like(U)
        for t in range(T - 1, -1, -1):
            i = cache["i"][t]
            f = cache["f"][t]
            g = cache["g"][t]
            o = cache["o"][t]
            tc = cache["tc"][t]
            dh = d_hs[:, t, :] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cache["c_prev"][t]
            dc_next = dc * f
            dz = dZ[:, t, :]
            dz[:, :w] = di * i * (1.0 - i)
            dz[:, w : 2 * w] = df * f * (1.0 - f)
            dz[:, 2 * w : 3 * w] = do * o * (1.0 - o)
            dz[:, 3 * w :] = dg * (1.0 - g * g)
            dU += cache["h_prev"][t].T @ dz
            dh_next = dz @ U.T
        dZ_flat = dZ.reshape(n * T, 4 * w)
        p.grad_of(f"l{layer}.W")[:] += X.reshape(n * T, d_in).T @ dZ_flat
        p.grad_of(f"l{layer}.U")[:] += dU
        p.grad_of(f"l{layer}.b")[:] += dZ_flat.sum(axis=0)
        return (dZ_flat @ W.T).reshape(n, T, d_in)

    def _run(self, X, dropout, keep_cache):
        p = self.params
        X = np.asarray(X, dtype=p.dtype)
        self._check_input(X)
        n, T, _ = X.shape
        masks = _as_masks(self.spec, dropout, n, steps=T, dtype=p.dtype)
        caches = []
        a = X
        for layer in range(1, self.spec.depth + 1):
            h, cache = self._layer_forward(layer, a, keep_cache)
            caches.append(cache)
            if masks is not None and layer < self.spec.depth:
                h = h * masks[layer - 1]
            a = h
        top_last = a[:, -1, :]
        y = top_last @ p["head.W"] + p["head.b"]
        if not keep_cache:
            return y, None
        return y, {"layers": caches, "masks": masks, "top_last": top_last, "steps": T}

    def backward(self, d_out, cache):
        p = self.params
        d_out = np.asarray(d_out, dtype=p.dtype)
        p.grad_of("head.W")[:] += cache["top_last"].T @ d_out
        p.grad_of("head.b")[:] += d_out.sum(axis=0)
        n = d_out.shape[0]
        T = cache["steps"]
        masks = cache["masks"]
        d_hs = np.zeros((n, T, self.spec.width), dtype=p.dtype)
        d_hs[:, -1, :] = d_out @ p["head.W"].T
        for layer in range(self.spec.depth, 0, -1):
            if masks is not None and layer < self.spec.depth:
                d_hs = d_hs * masks[layer - 1]
            d_hs = self._layer_backward(layer, cache["layers"][layer - 1], d_hs)
        return d_hs


def build_network(spec, params):
    cls = FeedForwardNet if spec.arch == "feedforward" else RecurrentNet
    return cls(spec, params)


def mae_loss(pred, target):
    """Mean absolute difference over every output value in the batch."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target), dtype=np.float64))


def mae_grad(pred, target):
    return np.sign(pred - target) / pred.size


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_init(n, dtype=np.float64):
    return AdamState(m=np.zeros(n, dtype=dtype), v=np.zeros(n, dtype=dtype))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place; returns the state."""
    state.t += 1
    state.m += (1.0 - beta1) * (grads - state.m)
    state.v += (1.0 - beta2) * (grads * grads - state.v)
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


@dataclass(frozen=True)
class Hyper:
    epochs: int = 200
    lr: float = 0.001
    batch: int = 256
    patience: int = 10
    seed: int = 0
    dtype: str = "float32"


@dataclass(frozen=True)
class TrainingMeta:
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    seed: int
    dtype: str


@dataclass
class TrainedModel:
    """Immutable after training; parameters are stored as float64."""

    spec: ModelSpec
    params: np.ndarray  # flat
    meta: TrainingMeta
    _nets: dict = field(default_factory=dict, repr=False, compare=False)

    def network(self, dtype=None):
        dtype = np.dtype(dtype if dtype is not None else self.meta.dtype)
        key = dtype.str
        if key not in self._nets:
            params = Parameters(parameter_layout(self.spec), data=self.params, dtype=dtype)
            self._nets[key] = build_network(self.spec, params)
        return self._nets[key]

    def predict(self, X, dtype=None):
        """Deterministic forward pass (dropout off)."""
        return self.network(dtype).forward(X)


def ff_forward(model, x, dropout_on=False, rng=None):
    """Raw output of a feedforward model for one feature vector."""
    if model.spec.arch != "feedforward":
        raise ShapeError("ff_forward needs a feedforward model")
    net = model.network()
    X = np.asarray(x, dtype=net.params.dtype).reshape(1, -1)
    return net.forward(X, dropout=rng if dropout_on else None)[0]


def rnn_forward(model, window, dropout_on=False, rng=None):
    """Raw output of a recurrent model for one (steps, input_dim) window."""
    if model.spec.arch != "recurrent":
        raise ShapeError("rnn_forward needs a recurrent model")
    net = model.network()
    X = np.asarray(window, dtype=net.params.dtype)[None, :, :]
    return net.forward(X, dropout=rng if dropout_on else None)[0]


def train(spec, train_data, val_data, hyper=Hyper()):
    """Minibatch Adam training with early stopping on the validation MAE.

    Returns (TrainedModel holding the best-validation parameters, history);
    the history has one dict per epoch with train and validation losses.
    Raises TrainingDivergedError (carrying the history) if a loss goes
    non-finite.
    """
    X, Y = train_data
    Xv, Yv = val_data
    X = np.asarray(X)
    Y = np.asarray(Y)
    Xv = np.asarray(Xv)
    Yv = np.asarray(Yv)
    if len(X) == 0 or len(Xv) == 0:
        raise ShapeError("training and validation sets must be non-empty")
    if Y.shape[1] != spec.output_dim or Yv.shape[1] != spec.output_dim:
        raise ShapeError("target width does not match the model spec")

    dtype = np.dtype(hyper.dtype)
    rng = np.random.default_rng(hyper.seed)
    params = init_params(spec, rng, dtype=dtype)
    net = build_network(spec, params)
    adam = adam_init(params.data.size, dtype=dtype)
    X = X.astype(dtype)
    Y = Y.astype(dtype)
    Xv = Xv.astype(dtype)
    Yv = Yv.astype(dtype)

    history = []
    best_val = np.inf
    best_epoch = -1
    best_params = params.data.copy()
    n = len(X)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            out, cache = net.forward_train(X[idx], dropout=rng)
            loss = mae_loss(out, Y[idx])
            params.zero_grad()
            net.backward(mae_grad(out, Y[idx]), cache)
            adam_step(params.data, params.grad, adam, hyper.lr)
            total += loss * len(idx)
        train_loss = total / n
        val_loss = _evaluate_mae(net, Xv, Yv)
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch}", history=history
            )
        history.append({"epoch": epoch, "train_mae": train_loss, "val_mae": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.data.copy()
        elif epoch - best_epoch >= hyper.patience:
            break

    meta = TrainingMeta(
        epochs_run=len(history),
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
        seed=hyper.seed,
        dtype=dtype.name,
    )
    model = TrainedModel(spec=spec, params=best_params.astype(np.float64), meta=meta)
    return model, history


def _evaluate_mae(net, X, Y, chunk=4096):
    total = 0.0
    for start in range(0, len(X), chunk):
        out = net.forward(X[start : start + chunk])
        total += float(np.sum(np.abs(out - Y[start : start + chunk]), dtype=np.float64))
    return total / Y.size


def save_model(path, model):
    doc = {
        "format": "armpose-model",
        "version": 1,
        "spec": model.spec.to_dict(),
        "meta": asdict(model.meta),
        "layout": [[name, list(shape)] for name, shape in parameter_layout(model.spec)],
        "dtype": "<f8",
        "params_b64": base64.b64encode(
            np.ascontiguousarray(model.params, dtype="<f8").tobytes()
        ).decode("ascii"),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "armpose-model" or doc.get("version") != 1:
        raise ShapeError("not an armpose model file (or unsupported version)")
    spec = ModelSpec.from_dict(doc["spec"])
    params = np.frombuffer(base64.b64decode(doc["params_b64"]), dtype="<f8").astype(np.float64)
    expected = [[name, list(shape)] for name, shape in parameter_layout(spec)]
    if doc["layout"] != expected:
        raise ShapeError("model file layout does not match its spec")
    meta = TrainingMeta(**doc["meta"])
    return TrainedModel(spec=spec, params=params, meta=meta)


def write_history_csv(path, history):
    from .frames import write_csv

    write_csv(
        path,
        ("epoch", "train_mae", "val_mae"),
        ([h["epoch"], h["train_mae"], h["val_mae"]] for h in history),
    )
