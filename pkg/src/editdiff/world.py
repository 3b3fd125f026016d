"""Deterministic synthetic conditioning world: scenes, captions, corpora.

A scene is 1-3 facts, each an (entity, attribute, relation) triple over
fixed inventories.  Rendering a caption from facts is a pure function, so a
scene's condition tokens fully determine its canonical caption; this stands
in for image-caption data at desk scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import lev_ratio
from .vocab import Vocabulary, build_vocab, sample_random_word

ENTITIES = (
    "cat", "dog", "bird", "fox", "wolf", "bear", "deer", "owl", "duck",
    "swan", "frog", "toad", "mouse", "horse", "sheep", "goat", "cow", "pig",
    "hen", "crow", "hawk", "mole", "hare", "otter", "seal", "crab", "fish",
    "whale", "shark", "snail", "wasp", "bee", "ant", "moth", "spider",
    "lizard", "snake", "turtle", "camel", "llama", "panda", "koala",
    "zebra", "bison", "moose",
)
ATTRIBUTES = (
    "red", "blue", "green", "yellow", "black", "white", "brown", "grey",
    "orange", "purple", "pink", "golden", "silver", "tiny", "small",
    "large", "huge", "young", "old", "quiet", "loud", "swift", "slow",
    "bright", "dark", "fluffy", "sleek", "spotted", "striped", "shy",
    "bold", "calm", "wild", "tame", "proud",
)
RELATIONS = (
    "bench", "river", "lake", "pond", "tree", "bush", "rock", "cliff",
    "cave", "hill", "field", "barn", "fence", "gate", "bridge", "road",
    "path", "trail", "shore", "dune", "marsh", "meadow", "garden", "porch",
    "shed", "wall", "tower", "well", "dock", "harbor",
)
GLUE = ("the", "sits", "near", "and")


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class WorldSpec:
    entities: tuple[str, ...] = ENTITIES
    attributes: tuple[str, ...] = ATTRIBUTES
    relations: tuple[str, ...] = RELATIONS
    length_bounds: tuple[int, int] = (6, 12)
    seed: int = 0

    @property
    def cond_vocab_size(self) -> int:
        return len(self.entities) + len(self.attributes) + len(self.relations)


@dataclass(frozen=True)
class Scene:
    scene_id: int
    facts: tuple[tuple[int, int, int], ...]  # (entity, attribute, relation) indices

    def __post_init__(self):
        if not 1 <= len(self.facts) <= 3:
            raise WorldError("a scene holds 1..3 facts")


def build_world_vocab(spec: WorldSpec) -> Vocabulary:
    return build_vocab(spec.entities + spec.attributes + spec.relations + GLUE)


def generate_scene(spec: WorldSpec, rng: np.random.Generator, scene_id: int = 0) -> Scene:
    n_facts = int(rng.integers(1, 4))
    facts = tuple(
        (int(rng.integers(len(spec.entities))),
         int(rng.integers(len(spec.attributes))),
         int(rng.integers(len(spec.relations))))
        for _ in range(n_facts)
    )
    return Scene(scene_id, facts)


def render_caption_words(spec: WorldSpec, scene: Scene) -> list[str]:
    """Render the canonical caption; pure in the scene's facts."""
    phrases = [
        (spec.attributes[a], spec.entities[e], spec.relations[r])
        for e, a, r in scene.facts
    ]
    if len(phrases) == 1:
        a, e, r = phrases[0]
        return ["the", a, e, "sits", "near", "the", r]
    if len(phrases) == 2:
        (a1, e1, r1), (a2, e2, r2) = phrases
        return [a1, e1, "near", r1, "and", a2, e2, "near", r2]
    words: list[str] = []
    for a, e, r in phrases:
        words.extend([a, e, "near", r])
    return words


def render_caption(spec: WorldSpec, scene: Scene, vocab: Vocabulary) -> list[int]:
    words = render_caption_words(spec, scene)
    lo, hi = spec.length_bounds
    if not lo <= len(words) <= hi:
        raise WorldError(f"rendered caption length {len(words)} outside bounds {spec.length_bounds}")
    return vocab.encode_all(words)


def condition_tokens(spec: WorldSpec, scene: Scene) -> list[int]:
    """Flat fact encoding over a separate condition-token space."""
    ne, na = len(spec.entities), len(spec.attributes)
    out: list[int] = []
    for e, a, r in scene.facts:
        out.extend([e, ne + a, ne + na + r])
    return out


@dataclass(frozen=True)
class Example:
    scene_id: int
    facts: tuple[tuple[int, int, int], ...]
    condition: tuple[int, ...]
    caption: tuple[int, ...]


@dataclass
class Corpus:
    spec: WorldSpec
    vocab: Vocabulary
    seed: int
    train: list[Example] = field(default_factory=list)
    val: list[Example] = field(default_factory=list)
    test: list[Example] = field(default_factory=list)

    def split(self, name: str) -> list[Example]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise WorldError(f"unknown split: {name}") from None

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for split in ("train", "val", "test"):
            for ex in self.split(split):
                h.update(_example_line(ex).encode("utf-8"))
                h.update(b"\n")
        return h.hexdigest()


def make_corpus(spec: WorldSpec, n: int, seed: int) -> Corpus:
    """Generate n unique scenes and split them 80/10/10."""
    if n < 3:
        raise WorldError("corpus needs at least 3 scenes")
    rng = np.random.default_rng(seed)
    vocab = build_world_vocab(spec)
    seen: set[tuple] = set()
    examples: list[Example] = []
    attempts = 0
    while len(examples) < n:
        attempts += 1
        if attempts > 100 * n:
            raise WorldError(f"could not generate {n} unique scenes")
        scene = generate_scene(spec, rng, scene_id=len(examples))
        if scene.facts in seen:
            continue
        seen.add(scene.facts)
        examples.append(Example(
            scene.scene_id, scene.facts,
            tuple(condition_tokens(spec, scene)),
            tuple(render_caption(spec, scene, vocab)),
        ))
    n_train = int(0.8 * n)
    n_val = int(0.9 * n) - n_train
    corpus = Corpus(spec, vocab, seed,
                    train=examples[:n_train],
                    val=examples[n_train:n_train + n_val],
                    test=examples[n_train + n_val:])
    return corpus


def _example_line(ex: Example) -> str:
    return json.dumps({
        "scene_id": ex.scene_id,
        "facts": [list(f) for f in ex.facts],
        "condition": list(ex.condition),
        "caption": list(ex.caption),
    }, separators=(",", ":"))


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        with open(out_dir / f"{split}.jsonl", "w", encoding="utf-8") as f:
            for ex in corpus.split(split):
                f.write(_example_line(ex) + "\n")
    corpus.vocab.save(out_dir / "vocab.txt")
    meta = {
        "seed": corpus.seed,
        "hash": corpus.content_hash(),
        "cond_vocab_size": corpus.spec.cond_vocab_size,
        "entities": list(corpus.spec.entities),
        "attributes": list(corpus.spec.attributes),
        "relations": list(corpus.spec.relations),
        "length_bounds": list(corpus.spec.length_bounds),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_corpus(in_dir: str | Path) -> Corpus:
    in_dir = Path(in_dir)
    meta = json.loads((in_dir / "meta.json").read_text(encoding="utf-8"))
    spec = WorldSpec(
        entities=tuple(meta["entities"]),
        attributes=tuple(meta["attributes"]),
        relations=tuple(meta["relations"]),
        length_bounds=tuple(meta["length_bounds"]),
        seed=meta["seed"],
    )
    vocab = Vocabulary.load(in_dir / "vocab.txt")
    corpus = Corpus(spec, vocab, meta["seed"])
    for split in ("train", "val", "test"):
        rows = (in_dir / f"{split}.jsonl").read_text(encoding="utf-8").splitlines()
        for row in rows:
            obj = json.loads(row)
            corpus.split(split).append(Example(
                obj["scene_id"],
                tuple(tuple(f) for f in obj["facts"]),
                tuple(obj["condition"]),
                tuple(obj["caption"]),
            ))
    if corpus.content_hash() != meta["hash"]:
        raise WorldError("corpus files do not match recorded hash")
    return corpus


def corrupt_to_ratio(x0, target_ratio: float, vocab: Vocabulary,
                     rng: np.random.Generator, max_attempts: int = 25) -> list[int]:
    """Replace words so the similarity ratio to x0 lands as close to target as possible.

    Replacing j of n words yields ratio 1 - j/n, so j is chosen in closed
    form; draws whose replacements accidentally shorten the edit distance
    are resampled.
    """
    x0 = list(x0)
    if not 0 <= target_ratio <= 1:
        raise WorldError("target ratio must be in [0, 1]")
    if not x0:
        raise WorldError("cannot corrupt an empty caption")
    n = len(x0)
    j = int(round(n * (1 - target_ratio)))
    if j == 0:
        return list(x0)
    expected = 1 - j / n
    best: list[int] | None = None
    best_err = float("inf")
    for _ in range(max_attempts):
        out = list(x0)
        positions = rng.choice(n, size=j, replace=False)
        for pos in positions:
            word = sample_random_word(vocab, rng)
            while word == x0[pos]:
                word = sample_random_word(vocab, rng)
            out[pos] = word
        err = abs(lev_ratio(out, x0) - expected)
        if err < best_err:
            best, best_err = out, err
        if err == 0:
            break
    return best
