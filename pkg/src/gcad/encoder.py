"""The context-aware GNN encoder.

Each layer runs three steps on the current embeddings ``H``, adjacency and
global context ``q``:

1. edge update: score every surviving edge with a link predictor, drop edges
   through a Gumbel keep-gate, and mix the old weight with the new likelihood;
2. node update: aggregate neighbours over the updated adjacency and combine
   with the node's own embedding;
3. graph update: attention readout keyed by a memory of the previous context.
"""

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from gcad.diffmath import ops
from gcad.diffmath.tensor import Node, const, param

LIKELIHOOD_CLAMP = 1e-6
AGGREGATORS = ("mean", "sum")
EDGE_MODES = ("full", "no-global-info", "none")
READOUTS = ("memory", "mean", "sum", "max")


@dataclass
class ModelConfig:
    input_dim: int
    num_layers: int = 2
    hidden_dims: list = None
    aggregator: str = "sum"
    gumbel_temperature: float = 0.6
    keep_self_loops_in_readout: bool = True
    edge_update: str = "full"
    readout: str = "memory"
    classifier: bool = False
    link_bias_init: float = 2.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dims is None:
            self.hidden_dims = [self.input_dim] * self.num_layers
        self.hidden_dims = [int(d) for d in self.hidden_dims]
        if len(self.hidden_dims) != self.num_layers:
            raise ValueError(f"need {self.num_layers} hidden dims, got {len(self.hidden_dims)}")
        if self.input_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ValueError("dimensions must be positive")
        if not self.gumbel_temperature > 0:
            raise ValueError("gumbel_temperature must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.edge_update not in EDGE_MODES:
            raise ValueError(f"edge_update must be one of {EDGE_MODES}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")

    @property
    def dims(self):
        return [self.input_dim] + self.hidden_dims

    @property
    def output_dim(self):
        return self.hidden_dims[-1]

    def to_dict(self):
        return asdict(self)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def param_shapes(config):
    """Name -> shape for every learnable tensor."""
    shapes = {}
    for layer, (din, dout) in enumerate(zip(config.dims[:-1], config.dims[1:]), start=1):
        pre = f"l{layer}"
        if config.edge_update != "none":
            width = din if config.edge_update == "no-global-info" else 3 * din
            shapes[f"{pre}.link.w1"] = (width, din)
            shapes[f"{pre}.link.b1"] = (1, din)
            shapes[f"{pre}.link.w2"] = (din, 1)
            shapes[f"{pre}.link.b2"] = (1, 1)
            shapes[f"{pre}.alpha"] = (1, 1)
        shapes[f"{pre}.node.w1"] = (2 * din, dout)
        shapes[f"{pre}.node.b1"] = (1, dout)
        shapes[f"{pre}.node.w2"] = (dout, dout)
        shapes[f"{pre}.node.b2"] = (1, dout)
    if config.classifier:
        shapes["cls.w"] = (config.output_dim, 1)
        shapes["cls.b"] = (1, 1)
    return shapes


def init_params(config, seed=0):
    """Glorot-uniform weights, zero biases, raw alpha 0 (effective alpha 0.5)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        kind = name.rsplit(".", 1)[-1]
        if kind.startswith("w"):
            params[name] = _glorot(rng, *shape)
        elif name.endswith("link.b2"):
            params[name] = np.full(shape, float(config.link_bias_init))
        else:
            params[name] = np.zeros(shape)
    return params


def as_nodes(params, trainable=True):
    make = param if trainable else const
    return {k: (v if isinstance(v, Node) else make(v)) for k, v in params.items()}


@dataclass
class EdgeDecision:
    src: np.ndarray
    dst: np.ndarray
    likelihood: Node
    keep: np.ndarray
    relaxed: Node
    weights: Node


@dataclass
class LayerState:
    H: Node
    A: Node
    q: Node
    m: Node
    attention: Node = None
    edges: EdgeDecision = None


@dataclass
class ForwardResult:
    layers: list
    H: Node
    q: Node
    q0: Node
    likelihoods: list = field(default_factory=list)
    masks: list = field(default_factory=list)


def init_context(g):
    """Column mean of the raw features, as a 1 x d node."""
    x = np.asarray(getattr(g, "features", g), dtype=np.float64)
    return const(x.mean(axis=0, keepdims=True))


# ----------------------------------------------------------------------------
# edge update


def _mlp_link(z, p, layer):
    pre = f"l{layer}.link"
    hidden = ops.relu(ops.add(ops.matmul(z, p[f"{pre}.w1"]), p[f"{pre}.b1"]))
    return ops.sigmoid(ops.add(ops.matmul(hidden, p[f"{pre}.w2"]), p[f"{pre}.b2"]))


def edge_likelihoods(H, q, src, dst, params, layer, use_context=True):
    """Symmetrised link likelihood for each (src, dst) pair, as an E x 1 node."""
    hi = ops.gather_rows(H, src)
    hj = ops.gather_rows(H, dst)
    if use_context:
        fwd = ops.concat_cols([ops.sub(hi, hj), ops.sub(hi, q), ops.sub(hj, q)])
        bwd = ops.concat_cols([ops.sub(hj, hi), ops.sub(hj, q), ops.sub(hi, q)])
    else:
        fwd = ops.sub(hi, hj)
        bwd = ops.sub(hj, hi)
    e = len(src)
    both = _mlp_link(ops.concat_rows([fwd, bwd]), params, layer)
    return ops.scale(ops.add(ops.gather_rows(both, np.arange(e)), ops.gather_rows(both, np.arange(e, 2 * e))), 0.5)


def link_likelihood(h_i, h_j, q, params, layer=1, use_context=True):
    """Likelihood for a single pair of 1 x D embeddings."""
    h_i, h_j, q = (x if isinstance(x, Node) else const(np.atleast_2d(x)) for x in (h_i, h_j, q))
    if not (h_i.shape == h_j.shape == q.shape and h_i.shape[0] == 1):
        raise ValueError(f"link_likelihood: dimension mismatch {h_i.shape}, {h_j.shape}, {q.shape}")
    H = ops.concat_rows([h_i, h_j])
    return edge_likelihoods(H, q, np.array([0]), np.array([1]), params, layer, use_context)


def gumbel_keep(p, temperature, rng=None, noise=None):
    """Gumbel keep-gate for likelihoods ``p``.

    Returns ``(keep, relaxed)`` where ``relaxed = sigmoid((log p + eps) / temperature)``
    with standard Gumbel ``eps`` and ``keep = relaxed >= 0.5``. ``relaxed`` is a
    node so gradients can reach ``p``; pass ``noise`` to fix ``eps``.
    """
    p = p if isinstance(p, Node) else const(np.reshape(np.asarray(p, dtype=np.float64), (-1, 1)))
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.gumbel(size=p.shape)
    noise = np.broadcast_to(np.asarray(noise, dtype=np.float64), p.shape)
    logp = ops.log(ops.clip(p, LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP))
    relaxed = ops.sigmoid(ops.scale(ops.add(logp, const(noise)), 1.0 / temperature))
    keep = relaxed.value >= 0.5
    return keep, relaxed


def edge_update(H, q, src, dst, weights, params, config, layer, training, rng=None, mask=None, counter=None):
    """Score, gate and reweight the surviving edges ``(src, dst)``.

    ``weights`` holds the previous layer's weights as an E x 1 node. Returns an
    ``EdgeDecision`` whose ``weights`` are zero wherever ``keep`` is false.
    """
    if counter is not None:
        counter["edge_scored"] += len(src)
    p = edge_likelihoods(H, q, src, dst, params, layer, config.edge_update == "full")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).reshape(-1, 1)
        gate, relaxed = const(keep.astype(np.float64)), None
    elif training:
        keep, relaxed = gumbel_keep(p, config.gumbel_temperature, rng)
        gate = ops.straight_through(keep.astype(np.float64), relaxed)
    else:
        keep = p.value >= 0.5
        gate, relaxed = const(keep.astype(np.float64)), None
    alpha = ops.sigmoid(params[f"l{layer}.alpha"])
    mixed = ops.add(ops.mul(weights, alpha), ops.mul(p, ops.sub(1.0, alpha)))
    new_w = ops.mul(mixed, gate)
    return EdgeDecision(src, dst, p, keep.reshape(-1), relaxed, new_w)


# ----------------------------------------------------------------------------
# node update


def aggregate(H, A, aggregator):
    """Weighted neighbour aggregation; isolated nodes get a zero vector."""
    agg = ops.matmul(A, H)
    if aggregator == "mean":
        count = np.count_nonzero(A.value, axis=1).astype(np.float64)
        inv = np.where(count > 0, 1.0 / np.maximum(count, 1.0), 0.0)[:, None]
        agg = ops.mul(agg, const(inv))
    return agg


def node_update(H, A, params, config, layer):
    pre = f"l{layer}.node"
    agg = aggregate(H, A, config.aggregator)
    z = ops.concat_cols([H, agg])
    hidden = ops.relu(ops.add(ops.matmul(z, params[f"{pre}.w1"]), params[f"{pre}.b1"]))
    out = ops.add(ops.matmul(hidden, params[f"{pre}.w2"]), params[f"{pre}.b2"])
    return ops.relu(ops.standardize(out))


# ----------------------------------------------------------------------------
# graph update


def graph_update(H, m, readout="memory", include=None, counter=None):
    """Update the global context from embeddings ``H``.

    For the memory readout, attention ``softmax_i(cosine(h_i, m))`` weights the
    rows of ``H``; the new context becomes the next memory. ``include`` limits
    the readout to a subset of rows. Returns ``(q, m, attention)``.
    """
    if counter is not None:
        counter["readout_nodes"] += H.shape[0]
    rows = H if include is None else ops.gather_rows(H, include)
    if readout == "memory":
        if m is None or m.shape[1] != rows.shape[1]:
            m = ops.mean(rows, axis=0)
        s = ops.row_cosine(rows, m)
        att = ops.softmax(s, axis=0)
        q = ops.matmul(ops.transpose(att), rows)
        return q, q, att
    if readout == "mean":
        q = ops.mean(rows, axis=0)
    elif readout == "sum":
        q = ops.sum(rows, axis=0)
    elif readout == "max":
        q = ops.max(rows, axis=0)
    else:
        raise ValueError(f"unknown readout {readout!r}")
    return q, q, None


# ----------------------------------------------------------------------------
# full pass


def forward(g, params, config, rng=None, training=False, masks=None, counter=None):
    """Run all layers on graph ``g``.

    ``params`` maps names to nodes (or arrays, wrapped as constants). With
    ``training`` the keep-gate samples Gumbel noise from ``rng``; otherwise it
    thresholds at 0.5. ``masks`` (one boolean array per layer) freezes the
    keep decisions, e.g. for finite-difference checks.
    """
    params = {k: (v if isinstance(v, Node) else const(v)) for k, v in params.items()}
    if g.feature_dim != config.input_dim:
        raise ValueError(f"graph feature dim {g.feature_dim} != model input dim {config.input_dim}")
    if training and rng is None and masks is None:
        raise ValueError("training forward needs an rng")
    n = g.num_nodes
    H = const(g.features)
    q0 = init_context(g)
    q, m = q0, q0
    src, dst, w0 = g.edges()
    weights = const(w0.reshape(-1, 1))
    A = const(g.adjacency)
    result = ForwardResult([], None, None, q0)

    for layer in range(1, config.num_layers + 1):
        decision = None
        if config.edge_update != "none":
            mask = None if masks is None else masks[layer - 1]
            decision = edge_update(H, q, src, dst, weights, params, config, layer, training, rng, mask, counter)
            A = ops.scatter_symmetric(decision.weights, src, dst, n)
            result.likelihoods.append((src, dst, decision.likelihood))
            result.masks.append(decision.keep.copy())
            kept = np.nonzero(decision.keep)[0]
            src, dst = src[kept], dst[kept]
            weights = ops.gather_rows(decision.weights, kept)
        H = node_update(H, A, params, config, layer)
        include = None
        if not config.keep_self_loops_in_readout:
            connected = np.nonzero(np.count_nonzero(A.value, axis=1))[0]
            if connected.size:
                include = connected
        q, m_next, att = graph_update(H, m, config.readout, include, counter)
        result.layers.append(LayerState(H, A, q, m, att, decision))
        m = m_next

    result.H, result.q = H, q
    return result


def new_counter():
    return Counter()
