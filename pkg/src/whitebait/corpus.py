"""Challenge-format dataset loading.

Instances and truth records live in separate JSONL files joined on ``id``.
See docs/data_format.md for the normative field-by-field description used by
the fixtures. List-valued text fields (post text, paragraphs, captions) are
joined with single spaces at parse time; captions and media paths are parsed
but never consumed downstream.
"""

import json
import logging
import math

from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

CLICKBAIT = "clickbait"
NO_CLICKBAIT = "no-clickbait"
CLASS_LABELS = (CLICKBAIT, NO_CLICKBAIT)

# Annotator scale: four levels, stored either rounded to two decimals or as
# unrounded thirds depending on the file's vintage.
JUDGMENT_LEVELS = (0.0, 0.33, 0.66, 1.0)
_ACCEPTED_JUDGMENTS = (0.0, 0.33, 1.0 / 3.0, 0.66, 2.0 / 3.0, 1.0)
JUDGMENT_TOL = 1e-6
MEAN_TOL = 1e-2
N_JUDGMENTS = 5


class DataFormatError(ValueError):
    """An input file violates the challenge JSONL format."""


@dataclass
class Instance:
    """One social-media post with its target-article fields.

    All text fields are always defined (possibly empty). `media_paths` and
    `target_captions` are carried through but never used by the models.
    """

    id: str
    post_text: str = ""
    post_timestamp: str = None
    target_title: str = ""
    target_description: str = ""
    target_keywords: str = ""
    target_paragraphs: str = ""
    target_captions: str = ""
    media_paths: list = field(default_factory=list)


@dataclass
class Truth:
    """Five annotator judgments plus the stored aggregate labels."""

    id: str
    judgments: list
    mean: float
    median: float
    mode: float
    class_label: str


@dataclass
class LabeledDataset:
    """Instances paired one-to-one with their truth records."""

    examples: list
    name: str = "dataset"

    def __len__(self):
        return len(self.examples)

    @property
    def instances(self):
        return [inst for inst, _ in self.examples]

    @property
    def truths(self):
        return [truth for _, truth in self.examples]


@dataclass
class DatasetStats:
    n_total: int
    n_clickbait: int
    n_no_clickbait: int
    mean_score: float
    score_histogram: dict  # judgment level -> count of posts whose mean is nearest


def _join_text_list(value, where):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, list):
        for item in value:
            if not isinstance(item, str):
                raise DataFormatError("%s: expected strings, got %r"
                                      % (where, type(item).__name__))
        return " ".join(value)
    raise DataFormatError("%s: expected string or list of strings" % where)


def _text_field(obj, key, where):
    value = obj.get(key)
    if value is None:
        return ""
    if not isinstance(value, str):
        raise DataFormatError("%s: field %s must be a string" % (where, key))
    return value


def _require_id(obj, where):
    raw = obj.get("id")
    if raw is None or str(raw).strip() == "":
        raise DataFormatError("%s: missing id" % where)
    return str(raw)


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError("%s:%d: malformed JSON: %s"
                                      % (path, lineno, e.msg)) from e
            if not isinstance(obj, dict):
                raise DataFormatError("%s:%d: expected a JSON object"
                                      % (path, lineno))
            yield lineno, obj


def load_instances(path):
    """Parse an instances JSONL file, one Instance per line, order preserved.

    Raises DataFormatError (with the offending line number) for malformed
    JSON or a missing id.
    """
    instances = []
    for lineno, obj in _iter_jsonl(path):
        where = "%s:%d" % (path, lineno)
        media = obj.get("postMedia") or []
        if not isinstance(media, list):
            raise DataFormatError("%s: postMedia must be a list" % where)
        instances.append(Instance(
            id=_require_id(obj, where),
            post_text=_join_text_list(obj.get("postText"), where + ": postText"),
            post_timestamp=obj.get("postTimestamp"),
            target_title=_text_field(obj, "targetTitle", where),
            target_description=_text_field(obj, "targetDescription", where),
            target_keywords=_text_field(obj, "targetKeywords", where),
            target_paragraphs=_join_text_list(obj.get("targetParagraphs"),
                                              where + ": targetParagraphs"),
            target_captions=_join_text_list(obj.get("targetCaptions"),
                                            where + ": targetCaptions"),
            media_paths=[str(m) for m in media],
        ))
    return instances


def dump_instances(path, instances):
    """Serialize Instances back to challenge-format JSONL.

    Joined text fields are written as single-element lists where the format
    uses lists, so a parse -> dump -> parse round trip is field-identical.
    """
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            obj = {
                "id": inst.id,
                "postText": [inst.post_text],
                "postTimestamp": inst.post_timestamp,
                "postMedia": inst.media_paths,
                "targetTitle": inst.target_title,
                "targetDescription": inst.target_description,
                "targetKeywords": inst.target_keywords,
                "targetParagraphs": [inst.target_paragraphs],
                "targetCaptions": [inst.target_captions],
            }
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _validate_judgments(raw, where):
    if not isinstance(raw, list) or len(raw) != N_JUDGMENTS:
        raise DataFormatError("%s: expected exactly %d judgments"
                              % (where, N_JUDGMENTS))
    judgments = []
    for value in raw:
        try:
            x = float(value)
        except (TypeError, ValueError):
            raise DataFormatError("%s: judgment %r is not a number"
                                  % (where, value)) from None
        if not any(abs(x - level) <= JUDGMENT_TOL for level in _ACCEPTED_JUDGMENTS):
            raise DataFormatError(
                "%s: judgment %r outside the 4-level scale %s"
                % (where, value, list(JUDGMENT_LEVELS)))
        judgments.append(x)
    return judgments


def load_truth(path):
    """Parse a truth JSONL file into an id -> Truth map.

    Validates the five-judgment structure, the judgment scale, and that the
    stored mean agrees with the arithmetic mean of the judgments (source
    files store rounded aggregates, so agreement is within 1e-2).
    """
    truth_map = {}
    for lineno, obj in _iter_jsonl(path):
        where = "%s:%d" % (path, lineno)
        tid = _require_id(obj, where)
        if tid in truth_map:
            raise DataFormatError("%s: duplicate truth id %r" % (where, tid))
        judgments = _validate_judgments(obj.get("truthJudgments"), where)
        try:
            mean = float(obj["truthMean"])
            median = float(obj["truthMedian"])
            mode = float(obj["truthMode"])
        except (KeyError, TypeError, ValueError):
            raise DataFormatError("%s: missing or non-numeric truth aggregates"
                                  % where) from None
        if abs(mean - sum(judgments) / N_JUDGMENTS) > MEAN_TOL:
            raise DataFormatError(
                "%s: stored mean %.4f disagrees with judgments %r"
                % (where, mean, judgments))
        if not 0.0 <= median <= 1.0 or not 0.0 <= mean <= 1.0:
            raise DataFormatError("%s: aggregates outside [0, 1]" % where)
        label = obj.get("truthClass")
        if label not in CLASS_LABELS:
            raise DataFormatError("%s: truthClass %r not in %s"
                                  % (where, label, list(CLASS_LABELS)))
        truth_map[tid] = Truth(id=tid, judgments=judgments, mean=mean,
                               median=median, mode=mode, class_label=label)
    return truth_map


def join_dataset(instances, truth_map, name="dataset"):
    """Pair every instance with its truth record.

    Raises DataFormatError naming every instance id that lacks truth and any
    duplicated instance id; truth ids with no instance are only warned about.
    """
    seen = set()
    duplicates = set()
    for inst in instances:
        if inst.id in seen:
            duplicates.add(inst.id)
        seen.add(inst.id)
    if duplicates:
        raise DataFormatError("duplicate instance ids: %s"
                              % ", ".join(sorted(duplicates)))
    missing = [i.id for i in instances if i.id not in truth_map]
    if missing:
        raise DataFormatError("no truth record for instance ids: %s"
                              % ", ".join(missing))
    orphans = set(truth_map) - seen
    if orphans:
        logger.warning("%d truth records have no instance (e.g. %s)",
                       len(orphans), sorted(orphans)[0])
    return LabeledDataset(
        examples=[(inst, truth_map[inst.id]) for inst in instances],
        name=name,
    )


def combine_datasets(first, second, name="combined"):
    """Union of two labeled datasets; ids must not collide across them."""
    overlap = {i.id for i in first.instances} & {i.id for i in second.instances}
    if overlap:
        raise DataFormatError("datasets share %d instance ids (e.g. %s)"
                              % (len(overlap), sorted(overlap)[0]))
    return LabeledDataset(examples=first.examples + second.examples, name=name)


def nearest_level(score):
    """The judgment level closest to a mean score (lower level wins ties)."""
    return min(JUDGMENT_LEVELS, key=lambda level: (abs(score - level), level))


def dataset_stats(dataset):
    """Counts by class label, mean of truth means, and the level histogram."""
    truths = dataset.truths
    n_clickbait = sum(1 for t in truths if t.class_label == CLICKBAIT)
    histogram = {level: 0 for level in JUDGMENT_LEVELS}
    for t in truths:
        histogram[nearest_level(t.mean)] += 1
    n = len(truths)
    mean_score = math.fsum(t.mean for t in truths) / n if n else 0.0
    return DatasetStats(
        n_total=n,
        n_clickbait=n_clickbait,
        n_no_clickbait=n - n_clickbait,
        mean_score=mean_score,
        score_histogram=histogram,
    )
