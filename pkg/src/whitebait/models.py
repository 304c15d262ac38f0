"""Per-source submodels, the fusion network, training, and model bundles.

Six information sources feed six independently trainable submodels: five
text fields go through embedding + LSTM stacks, the publication hour goes
through an entity-embedding stack. The fusion network concatenates the
submodels' penultimate dense activations and adds its own head; submodels
are pretrained first, then either fine-tuned (default, at a reduced rate)
or frozen.

A trained model travels as a bundle directory: the parameter binary, the
vocabulary files and preprocessing manifest needed to reproduce the input
encoding, a plain-text config echo, and the training history.
"""

import json

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import layers as ly
from . import nncore as nc
from . import textprep as tp
from .layers import INFER, TRAIN
from .nncore import Parameter, Tensor

TIME_SOURCE = "post_time"
SOURCE_KINDS = ("post_text", TIME_SOURCE, "target_title",
                "target_description", "target_keywords", "target_paragraphs")
TEXT_SOURCES = tuple(k for k in SOURCE_KINDS if k != TIME_SOURCE)

DEFAULT_MAX_LEN = {
    "post_text": 32,
    "target_title": 32,
    "target_keywords": 32,
    "target_description": 64,
    "target_paragraphs": 256,
}

DEFAULT_EMBED_DIM = 100
DEFAULT_HIDDEN_DIM = 100
DEFAULT_DENSE_DIM = 64
DEFAULT_DROPOUT = 0.3
DEFAULT_BATCH_SIZE = 32
DEFAULT_MAX_EPOCHS = 100
DEFAULT_VALIDATION_FRACTION = 0.1
DEFAULT_SEED = 42

# fusion fine-tuning runs at a fraction of the pretraining rate
FINE_TUNE_LR_FACTOR = 0.1


@dataclass
class SubmodelSpec:
    """Architecture of one per-source network."""

    kind: str
    vocab_size: int = 0            # text sources only
    max_len: int = 0               # 0 = per-source default
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    dense_dim: int = DEFAULT_DENSE_DIM
    dropout_rate: float = DEFAULT_DROPOUT
    time_bins: int = tp.N_TIME_BINS

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError("unknown source kind %r (expected one of %s)"
                             % (self.kind, ", ".join(SOURCE_KINDS)))
        if self.max_len == 0 and self.kind != TIME_SOURCE:
            self.max_len = DEFAULT_MAX_LEN[self.kind]


@dataclass
class FusionSpec:
    """Fusion head settings; submodel widths fix the concat input width."""

    fusion_dense_dim: int = DEFAULT_DENSE_DIM
    dropout_rate: float = DEFAULT_DROPOUT
    fine_tune: bool = True


@dataclass
class TrainConfig:
    """Training settings; `max_epochs` here overrides the schedule's cap."""

    batch_size: int = DEFAULT_BATCH_SIZE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    validation_fraction: float = DEFAULT_VALIDATION_FRACTION
    seed: int = DEFAULT_SEED
    schedule: nc.TrainSchedule = field(default_factory=nc.TrainSchedule)


# ---------------------------------------------------------------------------
# Networks


class TextSubmodel:
    """embed -> dropout -> LSTM -> batchnorm -> dense(relu) -> dropout ->
    dense(1, sigmoid) over one text field."""

    def __init__(self, spec, seed):
        if spec.kind not in TEXT_SOURCES:
            raise ValueError("text submodel over non-text source %r" % spec.kind)
        if spec.vocab_size < 2:
            raise ValueError("text submodel needs a built vocabulary")
        self.spec = spec
        self.sources = (spec.kind,)
        kind = spec.kind
        rng = nc.seed_stream(seed, "init/" + kind)
        self.embedding = ly.EmbeddingTable(kind + "/embedding",
                                           spec.vocab_size, spec.embed_dim, rng)
        self.cell = ly.LstmCell(kind + "/lstm", spec.embed_dim,
                                spec.hidden_dim, rng)
        self.norm = ly.BatchNormLayer(kind + "/batchnorm", spec.hidden_dim)
        self.w_dense = Parameter(kind + "/dense/w",
                                 ly.fan_uniform(rng, spec.hidden_dim, spec.dense_dim))
        self.b_dense = Parameter(kind + "/dense/b", np.zeros(spec.dense_dim))
        self.w_head = Parameter(kind + "/head/w",
                                ly.fan_uniform(rng, spec.dense_dim, 1))
        self.b_head = Parameter(kind + "/head/b", np.zeros(1))
        drop_rng = nc.seed_stream(seed, "dropout/" + kind)
        self.drop_embed = ly.DropoutLayer(spec.dropout_rate, drop_rng)
        self.drop_head = ly.DropoutLayer(spec.dropout_rate, drop_rng)

    def parameters(self):
        return (self.embedding.parameters() + self.cell.parameters()
                + self.norm.parameters()
                + [self.w_dense, self.b_dense, self.w_head, self.b_head])

    def trainable_parameters(self):
        return self.parameters()

    def trunk(self, batch, mode):
        """Penultimate dense(relu) activation, [batch, dense_dim]."""
        ids, lengths = batch[self.spec.kind]
        steps = []
        for t in range(int(lengths.max()) if lengths.size else 0):
            x_t = ly.embed(ids[:, t], self.embedding)
            x_t = ly.dropout(x_t, self.drop_embed, mode)
            steps.append(x_t)
        h = ly.lstm_masked_batch(steps, lengths, self.cell)
        h = ly.batchnorm(h, self.norm, mode)
        return ly.dense(h, self.w_dense, self.b_dense, activation="relu")

    def forward(self, batch, mode):
        a = ly.dropout(self.trunk(batch, mode), self.drop_head, mode)
        return ly.dense(a, self.w_head, self.b_head, activation="sigmoid")

    def state_dict(self):
        state = {p.name: p.data.copy() for p in self.parameters()}
        kind = self.spec.kind
        state[kind + "/batchnorm/running_mean"] = self.norm.running_mean.copy()
        state[kind + "/batchnorm/running_var"] = self.norm.running_var.copy()
        return state

    def load_state(self, state):
        _load_state(self, state)


class TimeSubmodel:
    """one-hot hour bin -> entity embedding -> batchnorm -> dense(relu) ->
    dropout -> dense(1, sigmoid)."""

    def __init__(self, spec, seed):
        if spec.kind != TIME_SOURCE:
            raise ValueError("time submodel over non-time source %r" % spec.kind)
        self.spec = spec
        self.sources = (TIME_SOURCE,)
        rng = nc.seed_stream(seed, "init/" + TIME_SOURCE)
        self.embedding = ly.EmbeddingTable(TIME_SOURCE + "/embedding",
                                           spec.time_bins, spec.embed_dim, rng)
        self.norm = ly.BatchNormLayer(TIME_SOURCE + "/batchnorm", spec.embed_dim)
        self.w_dense = Parameter(TIME_SOURCE + "/dense/w",
                                 ly.fan_uniform(rng, spec.embed_dim, spec.dense_dim))
        self.b_dense = Parameter(TIME_SOURCE + "/dense/b", np.zeros(spec.dense_dim))
        self.w_head = Parameter(TIME_SOURCE + "/head/w",
                                ly.fan_uniform(rng, spec.dense_dim, 1))
        self.b_head = Parameter(TIME_SOURCE + "/head/b", np.zeros(1))
        self.drop_head = ly.DropoutLayer(
            spec.dropout_rate, nc.seed_stream(seed, "dropout/" + TIME_SOURCE))

    def parameters(self):
        return (self.embedding.parameters() + self.norm.parameters()
                + [self.w_dense, self.b_dense, self.w_head, self.b_head])

    def trainable_parameters(self):
        return self.parameters()

    def trunk(self, batch, mode):
        bins = batch[TIME_SOURCE]
        x = ly.embed(bins, self.embedding)  # one-hot times table = row lookup
        x = ly.batchnorm(x, self.norm, mode)
        return ly.dense(x, self.w_dense, self.b_dense, activation="relu")

    def forward(self, batch, mode):
        a = ly.dropout(self.trunk(batch, mode), self.drop_head, mode)
        return ly.dense(a, self.w_head, self.b_head, activation="sigmoid")

    def state_dict(self):
        state = {p.name: p.data.copy() for p in self.parameters()}
        state[TIME_SOURCE + "/batchnorm/running_mean"] = self.norm.running_mean.copy()
        state[TIME_SOURCE + "/batchnorm/running_var"] = self.norm.running_var.copy()
        return state

    def load_state(self, state):
        _load_state(self, state)


class FusionModel:
    """Concatenates every submodel's penultimate activation and adds a
    dense(relu) -> dropout -> dense(1, sigmoid) head.

    With fine_tune=False the submodels run detached in inference mode, so
    fusion training cannot touch (or even grade) their parameters.
    """

    def __init__(self, submodels, fspec, seed):
        missing = [k for k in SOURCE_KINDS if k not in submodels]
        if missing:
            raise ValueError("fusion needs all six submodels; missing: %s"
                             % ", ".join(missing))
        self.submodels = {k: submodels[k] for k in SOURCE_KINDS}
        self.fspec = fspec
        self.sources = SOURCE_KINDS
        concat_width = sum(sub.spec.dense_dim for sub in self.submodels.values())
        self.concat_width = concat_width
        rng = nc.seed_stream(seed, "init/fusion")
        self.w_fuse = Parameter("fusion/dense/w",
                                ly.fan_uniform(rng, concat_width,
                                               fspec.fusion_dense_dim))
        self.b_fuse = Parameter("fusion/dense/b", np.zeros(fspec.fusion_dense_dim))
        self.w_head = Parameter("fusion/head/w",
                                ly.fan_uniform(rng, fspec.fusion_dense_dim, 1))
        self.b_head = Parameter("fusion/head/b", np.zeros(1))
        self.drop = ly.DropoutLayer(fspec.dropout_rate,
                                    nc.seed_stream(seed, "dropout/fusion"))

    def head_parameters(self):
        return [self.w_fuse, self.b_fuse, self.w_head, self.b_head]

    def parameters(self):
        out = []
        for kind in SOURCE_KINDS:
            out.extend(self.submodels[kind].parameters())
        return out + self.head_parameters()

    def trainable_parameters(self):
        if not self.fspec.fine_tune:
            return self.head_parameters()
        return self.parameters()

    def forward(self, batch, mode):
        feats = []
        for kind in SOURCE_KINDS:
            sub = self.submodels[kind]
            if self.fspec.fine_tune:
                feats.append(sub.trunk(batch, mode))
            else:
                with nc.no_tape():
                    feats.append(Tensor(sub.trunk(batch, INFER).data))
        joined = nc.concat(feats, axis=1)
        a = ly.dense(joined, self.w_fuse, self.b_fuse, activation="relu")
        a = ly.dropout(a, self.drop, mode)
        return ly.dense(a, self.w_head, self.b_head, activation="sigmoid")

    def state_dict(self):
        state = {}
        for kind in SOURCE_KINDS:
            state.update(self.submodels[kind].state_dict())
        for p in self.head_parameters():
            state[p.name] = p.data.copy()
        return state

    def load_state(self, state):
        consumed = set()
        for kind in SOURCE_KINDS:
            sub = self.submodels[kind]
            sub_state = {k: v for k, v in state.items()
                         if k.startswith(kind + "/")}
            sub.load_state(sub_state)
            consumed.update(sub_state)
        head = {k: v for k, v in state.items() if k.startswith("fusion/")}
        _assign_parameters(self.head_parameters(), head)
        consumed.update(head)
        stray = set(state) - consumed
        if stray:
            raise ValueError("unknown state entries: %s" % ", ".join(sorted(stray)))


def _assign_parameters(params, state):
    byname = {p.name: p for p in params}
    missing = set(byname) - set(state)
    if missing:
        raise ValueError("state missing parameters: %s" % ", ".join(sorted(missing)))
    for name, p in byname.items():
        arr = np.asarray(state[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ValueError("parameter %s: stored shape %r, expected %r"
                             % (name, arr.shape, p.data.shape))
        p.data[...] = arr


def _load_state(net, state):
    kind = net.spec.kind
    mean_key = kind + "/batchnorm/running_mean"
    var_key = kind + "/batchnorm/running_var"
    params = {k: v for k, v in state.items() if k not in (mean_key, var_key)}
    _assign_parameters(net.parameters(), params)
    if mean_key not in state or var_key not in state:
        raise ValueError("state missing %s running statistics" % kind)
    net.norm.running_mean[...] = state[mean_key]
    net.norm.running_var[...] = state[var_key]


def parameter_count(net):
    return sum(p.data.size for p in net.parameters())


# ---------------------------------------------------------------------------
# Preprocessing


@dataclass
class Preprocessor:
    """Turns Instances into the arrays the networks consume."""

    sources: tuple
    vocabs: dict    # text kind -> Vocabulary
    max_len: dict   # text kind -> int

    def encode_source(self, instances, kind):
        if kind == TIME_SOURCE:
            return np.array(
                [tp.bin_time(inst.post_timestamp).bin for inst in instances],
                dtype=np.int64)
        vocab = self.vocabs[kind]
        length = self.max_len[kind]
        ids = np.zeros((len(instances), length), dtype=np.int64)
        lengths = np.zeros(len(instances), dtype=np.int64)
        for row, inst in enumerate(instances):
            enc = tp.encode(tp.tokenize(getattr(inst, kind)), vocab, length)
            ids[row] = enc.ids
            lengths[row] = enc.true_length
        return ids, lengths

    def encode(self, instances):
        return {kind: self.encode_source(instances, kind)
                for kind in self.sources}


def build_vocabularies(instances, kinds, min_freq=tp.DEFAULT_MIN_FREQ):
    """One vocabulary per text source, built from that source's field only."""
    vocabs = {}
    for kind in kinds:
        if kind == TIME_SOURCE:
            continue
        corpus_tokens = (tp.tokenize(getattr(inst, kind)) for inst in instances)
        vocabs[kind] = tp.build_vocab(corpus_tokens, min_freq=min_freq)
    return vocabs


# ---------------------------------------------------------------------------
# Bundles


@dataclass
class ModelBundle:
    net: object
    preproc: Preprocessor

    def predict_scores(self, instances):
        """Deterministic scores in [0, 1], one per instance, input order."""
        if not instances:
            return np.zeros(0)
        batch = self.preproc.encode(instances)
        out = self.net.forward(batch, INFER)
        return out.data.reshape(-1).copy()


def predict(bundle, instance):
    """Score a single instance."""
    return float(bundle.predict_scores([instance])[0])


def build_text_submodel(spec, seed=DEFAULT_SEED):
    return TextSubmodel(spec, seed)


def build_time_submodel(spec, seed=DEFAULT_SEED):
    return TimeSubmodel(spec, seed)


def build_fusion_model(submodels, fspec, seed=DEFAULT_SEED):
    return FusionModel(submodels, fspec, seed)


def make_submodel_bundle(kind, instances, seed=DEFAULT_SEED,
                         min_freq=tp.DEFAULT_MIN_FREQ, **spec_overrides):
    """Build an untrained bundle for one source from training instances."""
    if kind == TIME_SOURCE:
        spec = SubmodelSpec(kind=kind, **spec_overrides)
        net = TimeSubmodel(spec, seed)
        preproc = Preprocessor(sources=(kind,), vocabs={}, max_len={})
    else:
        vocab = build_vocabularies(instances, (kind,), min_freq)[kind]
        spec = SubmodelSpec(kind=kind, vocab_size=vocab.size, **spec_overrides)
        net = TextSubmodel(spec, seed)
        preproc = Preprocessor(sources=(kind,), vocabs={kind: vocab},
                               max_len={kind: spec.max_len})
    return ModelBundle(net=net, preproc=preproc)


def make_fusion_bundle(submodel_bundles, fspec, seed=DEFAULT_SEED):
    """Combine six trained submodel bundles into an untrained fusion bundle."""
    nets = {}
    vocabs = {}
    max_len = {}
    for kind, sub in submodel_bundles.items():
        nets[kind] = sub.net
        vocabs.update(sub.preproc.vocabs)
        max_len.update(sub.preproc.max_len)
    net = FusionModel(nets, fspec, seed)
    preproc = Preprocessor(sources=SOURCE_KINDS, vocabs=vocabs, max_len=max_len)
    return ModelBundle(net=net, preproc=preproc)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val: float


def _batch_slices(order, batch_size):
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        # a singleton batch cannot be batch-normalized; fold it in
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _subset(inputs, idx):
    out = {}
    for kind, value in inputs.items():
        if kind == TIME_SOURCE:
            out[kind] = value[idx]
        else:
            ids, lengths = value
            out[kind] = (ids[idx], lengths[idx])
    return out


def train(bundle, dataset, config=None):
    """Fit a bundle to a labeled dataset by MSE on the stored mean score.

    A seeded shuffle reserves the last `validation_fraction` of the data for
    early stopping (with validation_fraction 0 the training set itself is
    used). Returns the per-epoch history; the bundle is left holding the
    best-validation epoch's state.
    """
    if config is None:
        config = TrainConfig()
    net = bundle.net
    n = len(dataset)
    if n == 0:
        raise ValueError("train: empty dataset")
    inputs = bundle.preproc.encode(dataset.instances)
    targets = np.array([t.mean for t in dataset.truths],
                       dtype=np.float64).reshape(-1, 1)

    order = nc.seed_stream(config.seed, "train/split").permutation(n)
    n_val = int(round(config.validation_fraction * n))
    if n_val > 0:
        train_idx = order[:n - n_val]
        val_idx = order[n - n_val:]
    else:
        train_idx = order
        val_idx = order
    if len(train_idx) < 2:
        raise ValueError(
            "train: need at least 2 training examples after the validation "
            "split, got %d" % len(train_idx))
    batch_size = min(config.batch_size, len(train_idx))
    schedule = replace(config.schedule, max_epochs=config.max_epochs)
    epoch_rng = nc.seed_stream(config.seed, "train/batches")
    val_inputs = _subset(inputs, val_idx)
    val_targets = targets[val_idx].reshape(-1)

    def train_step(lr):
        shuffled = train_idx[epoch_rng.permutation(len(train_idx))]
        total = 0.0
        for chunk in _batch_slices(shuffled, batch_size):
            for p in net.trainable_parameters():
                p.zero_grad()
            with nc.Tape() as tape:
                preds = net.forward(_subset(inputs, chunk), TRAIN)
                loss = nc.mse(preds, Tensor(targets[chunk]))
            nc.backward(tape, loss)
            for p in net.trainable_parameters():
                nc.rmsprop_step(p, schedule, lr=lr)
            total += float(loss.data) * len(chunk)
        return total / len(train_idx)

    def val_loss():
        preds = net.forward(val_inputs, INFER).data.reshape(-1)
        return float(np.mean((preds - val_targets) ** 2))

    result = nc.run_schedule(train_step, val_loss, schedule,
                             snapshot=net.state_dict,
                             restore=net.load_state)
    return TrainResult(history=result.history, best_epoch=result.best_epoch,
                       best_val=result.best_val)


# ---------------------------------------------------------------------------
# Bundle directory IO

PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.txt"
HISTORY_FILE = "history.csv"
HISTORY_FIGURE = "history.png"
MANIFEST_VERSION = 1


def _vocab_file(kind):
    return "vocab_%s.txt" % kind


def _submodel_manifest(net):
    spec = net.spec
    entry = {
        "kind": spec.kind,
        "embed_dim": spec.embed_dim,
        "dense_dim": spec.dense_dim,
        "dropout_rate": spec.dropout_rate,
    }
    if spec.kind == TIME_SOURCE:
        entry["time_bins"] = spec.time_bins
    else:
        entry["hidden_dim"] = spec.hidden_dim
        entry["max_len"] = spec.max_len
        entry["vocab_size"] = spec.vocab_size
        entry["vocab_file"] = _vocab_file(spec.kind)
    return entry


def save_bundle(out_dir, bundle, config_echo=None, history=None):
    """Write a bundle directory: params, manifest, vocab files, config echo,
    and (when given) the training history CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = bundle.net
    nc.save_parameters(out_dir / PARAMS_FILE, net.state_dict())
    for kind, vocab in bundle.preproc.vocabs.items():
        tp.save_vocab(out_dir / _vocab_file(kind), vocab)
    if isinstance(net, FusionModel):
        manifest = {
            "format_version": MANIFEST_VERSION,
            "model": "fusion",
            "fusion_dense_dim": net.fspec.fusion_dense_dim,
            "dropout_rate": net.fspec.dropout_rate,
            "fine_tune": net.fspec.fine_tune,
            "submodels": {kind: _submodel_manifest(net.submodels[kind])
                          for kind in SOURCE_KINDS},
        }
    else:
        manifest = {
            "format_version": MANIFEST_VERSION,
            "model": "time" if isinstance(net, TimeSubmodel) else "text",
        }
        manifest.update(_submodel_manifest(net))
    with open(out_dir / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    if config_echo:
        with open(out_dir / CONFIG_FILE, "w", encoding="utf-8") as f:
            for key, value in config_echo.items():
                f.write("%s = %s\n" % (key, value))
    if history is not None:
        write_history(out_dir / HISTORY_FILE, history)


def write_history(path, history):
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,train_mse,val_mse,lr\n")
        for rec in history:
            train_part = "" if np.isnan(rec.train_loss) else "%.10g" % rec.train_loss
            f.write("%d,%s,%.10g,%.10g\n"
                    % (rec.epoch, train_part, rec.val_loss, rec.lr))


def _spec_from_manifest(entry):
    kwargs = dict(
        kind=entry["kind"],
        embed_dim=entry["embed_dim"],
        dense_dim=entry["dense_dim"],
        dropout_rate=entry["dropout_rate"],
    )
    if entry["kind"] == TIME_SOURCE:
        kwargs["time_bins"] = entry["time_bins"]
    else:
        kwargs["hidden_dim"] = entry["hidden_dim"]
        kwargs["max_len"] = entry["max_len"]
        kwargs["vocab_size"] = entry["vocab_size"]
    return SubmodelSpec(**kwargs)


def _build_net_from_spec(spec, seed):
    if spec.kind == TIME_SOURCE:
        return TimeSubmodel(spec, seed)
    return TextSubmodel(spec, seed)


def load_bundle(bundle_dir, seed=DEFAULT_SEED):
    """Load a bundle directory; `seed` feeds any later dropout draws (it does
    not affect the stored weights, which are restored verbatim)."""
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError("%s: not a model bundle (no %s)"
                                % (bundle_dir, MANIFEST_FILE))
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValueError("%s: unsupported bundle format %r"
                         % (bundle_dir, manifest.get("format_version")))
    state = nc.load_parameters(bundle_dir / PARAMS_FILE)
    vocabs = {}
    max_len = {}

    def load_submodel(entry):
        spec = _spec_from_manifest(entry)
        if spec.kind != TIME_SOURCE:
            vocabs[spec.kind] = tp.load_vocab(bundle_dir / entry["vocab_file"])
            max_len[spec.kind] = spec.max_len
        return _build_net_from_spec(spec, seed)

    if manifest["model"] == "fusion":
        nets = {kind: load_submodel(entry)
                for kind, entry in manifest["submodels"].items()}
        fspec = FusionSpec(fusion_dense_dim=manifest["fusion_dense_dim"],
                           dropout_rate=manifest["dropout_rate"],
                           fine_tune=manifest["fine_tune"])
        net = FusionModel(nets, fspec, seed)
        sources = SOURCE_KINDS
    else:
        net = load_submodel(manifest)
        sources = net.sources
    net.load_state(state)
    preproc = Preprocessor(sources=sources, vocabs=vocabs, max_len=max_len)
    return ModelBundle(net=net, preproc=preproc)
