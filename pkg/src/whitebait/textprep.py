"""Text and timestamp preprocessing.

Tokenization is a plain whitespace split with lower casing and nothing else:
no unicode normalization, no lexical normalization, no stemming. Publication
times are reduced to the UTC hour of day, with a dedicated "unknown" bin for
posts whose timestamp is missing or unparsable, so no instance is ever
dropped.
"""

from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

N_TIME_BINS = 25          # 24 hours + 1 unknown
UNKNOWN_TIME_BIN = 24

DEFAULT_MIN_FREQ = 2


def tokenize(text):
    """Lowercase and split on whitespace runs, dropping empty tokens."""
    return text.lower().split()


@dataclass
class Vocabulary:
    """Token ids for one text source; ids 0 and 1 are reserved for PAD/UNK.

    Stored tokens all met the frequency cutoff; ids 2.. are assigned by
    descending corpus frequency with lexicographic tie-break.
    """

    token_to_id: dict
    id_to_token: list
    min_freq: int
    pad_id: int = PAD_ID
    unk_id: int = UNK_ID

    @property
    def size(self):
        return len(self.id_to_token)

    def lookup(self, token):
        return self.token_to_id.get(token, self.unk_id)


def build_vocab(corpus, min_freq=DEFAULT_MIN_FREQ):
    """Build a Vocabulary from an iterable of token sequences.

    Tokens with corpus frequency below `min_freq` are excluded; an empty
    corpus yields the two reserved entries only.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    id_to_token = [PAD_TOKEN, UNK_TOKEN] + kept
    token_to_id = {tok: i + 2 for i, tok in enumerate(kept)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token,
                      min_freq=min_freq)


@dataclass
class EncodedSequence:
    """Fixed-length id vector plus the unpadded length."""

    ids: np.ndarray
    true_length: int


def encode(tokens, vocab, max_len):
    """Map tokens to a fixed-length id vector.

    Out-of-vocabulary tokens become UNK; sequences longer than `max_len`
    keep their first `max_len` tokens; shorter ones are right-padded.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    kept = tokens[:max_len]
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    for i, tok in enumerate(kept):
        ids[i] = vocab.lookup(tok)
    return EncodedSequence(ids=ids, true_length=len(kept))


def decode(encoded, vocab):
    """Tokens for the unpadded prefix; UNK positions come back as <unk>."""
    return [vocab.id_to_token[i] for i in encoded.ids[:encoded.true_length]]


# ---------------------------------------------------------------------------
# Vocabulary files: 2-line header, then one token per line (line k = id k+2)


def save_vocab(path, vocab):
    with open(path, "w", encoding="utf-8") as f:
        f.write("# min_freq %d\n" % vocab.min_freq)
        f.write("# size %d\n" % vocab.size)
        for tok in vocab.id_to_token[2:]:
            f.write(tok + "\n")


def load_vocab(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# min_freq ") \
            or not lines[1].startswith("# size "):
        raise ValueError("%s: malformed vocabulary header" % path)
    min_freq = int(lines[0].split()[-1])
    size = int(lines[1].split()[-1])
    tokens = lines[2:]
    if len(tokens) != size - 2:
        raise ValueError("%s: header says %d tokens, found %d"
                         % (path, size - 2, len(tokens)))
    token_to_id = {tok: i + 2 for i, tok in enumerate(tokens)}
    if len(token_to_id) != len(tokens):
        raise ValueError("%s: duplicate tokens" % path)
    return Vocabulary(token_to_id=token_to_id,
                      id_to_token=[PAD_TOKEN, UNK_TOKEN] + tokens,
                      min_freq=min_freq)


# ---------------------------------------------------------------------------
# Publication-time binning


@dataclass
class TimeBin:
    """Hour-of-day bin in [0, 23], or 24 for unknown, with its one-hot form."""

    bin: int
    one_hot: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0 <= self.bin < N_TIME_BINS:
            raise ValueError("time bin %d out of range" % self.bin)
        if self.one_hot is None:
            vec = np.zeros(N_TIME_BINS)
            vec[self.bin] = 1.0
            self.one_hot = vec


_TWITTER_FORMAT = "%a %b %d %H:%M:%S %z %Y"


def _parse_timestamp(raw):
    try:
        return datetime.strptime(raw, _TWITTER_FORMAT)
    except ValueError:
        pass
    iso = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
    try:
        return datetime.fromisoformat(iso)
    except ValueError:
        return None


def bin_time(raw):
    """Bin a raw timestamp string into its UTC hour of day.

    Accepts Twitter-style ("Sat Feb 27 23:14:41 +0000 2016") and ISO-8601
    strings; anything missing or unparsable lands in the unknown bin. Naive
    timestamps are taken as UTC.
    """
    if raw is None or not str(raw).strip():
        return TimeBin(UNKNOWN_TIME_BIN)
    dt = _parse_timestamp(str(raw).strip())
    if dt is None:
        return TimeBin(UNKNOWN_TIME_BIN)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc)
    return TimeBin(dt.hour)
