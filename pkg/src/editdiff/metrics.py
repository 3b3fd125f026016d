"""Evaluation metrics and the mode-driven evaluation harness.

Quality is measured against the scene's single canonical caption: exact
match, token F1, BLEU-N, and the weighted-Levenshtein similarity ratio.
Input quality is always reported next to edited quality so improvement
deltas are auditable.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from math import exp, log
from pathlib import Path

import numpy as np

from .align import lev_ratio
from .diffusion import denoise_loop, make_random_sequence
from .edit_ops import CaptionState, Origin, Token
from .world import Corpus, corrupt_to_ratio

BLEU_EPS = 1e-9


class MetricError(ValueError):
    pass


def exact_match(hyp, ref) -> int:
    if not list(ref):
        raise MetricError("reference must be non-empty")
    return int(list(hyp) == list(ref))


def token_f1(hyp, ref) -> float:
    """F1 over token multisets."""
    hyp, ref = list(hyp), list(ref)
    if not ref:
        raise MetricError("reference must be non-empty")
    if not hyp:
        return 0.0
    overlap = sum((Counter(hyp) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(hyp)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def mean_ratio(pairs) -> float:
    pairs = list(pairs)
    if not pairs:
        raise MetricError("mean_ratio needs at least one pair")
    return float(np.mean([lev_ratio(a, b) for a, b in pairs]))


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(hyp, refs, max_n: int = 4) -> float:
    """BLEU with brevity penalty; zero-count precisions get epsilon smoothing.

    The n-gram order is capped at len(hyp) so an exact match of a short
    caption still scores 1.0.
    """
    if max_n < 1:
        raise MetricError("max_n must be >= 1")
    hyp = list(hyp)
    refs = [list(r) for r in refs]
    if not hyp:
        return 0.0
    max_n = min(max_n, len(hyp))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        total = sum(hyp_counts.values())
        clipped = 0
        for gram, count in hyp_counts.items():
            clipped += min(count, max(_ngrams(r, n).get(gram, 0) for r in refs))
        p = clipped / total if clipped > 0 else BLEU_EPS
        log_sum += log(p) / max_n
    c = len(hyp)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else exp(1 - r / c)
    return bp * exp(log_sum)


def contains_in_order(output, pin_words) -> bool:
    it = iter(output)
    return all(any(tok == w for tok in it) for w in pin_words)


def retention_rate(outputs, pins) -> float:
    """Fraction of outputs containing all their pinned words as an ordered
    subsequence (pin order = pin position order)."""
    outputs = list(outputs)
    pins = list(pins)
    if not outputs:
        return 0.0
    hits = 0
    for out, pin_map in zip(outputs, pins):
        words = [w for _, w in sorted(pin_map.items())]
        hits += int(contains_in_order(list(out), words))
    return hits / len(outputs)


def parse_mode(mode: str) -> tuple[str, float | int | None]:
    if mode == "indomain":
        return "ood", 0.5
    if mode == "control":
        return "control", None
    if ":" in mode:
        kind, arg = mode.split(":", 1)
        if kind == "ood_ratio" or kind == "ood":
            return "ood", float(arg)
        if kind == "random_ref" or kind == "random":
            return "random", int(arg)
    raise MetricError(f"unknown evaluation mode: {mode}")


def _quality(hyp, ref) -> dict:
    out = {
        "em": exact_match(hyp, ref),
        "f1": token_f1(hyp, ref),
        "ratio": lev_ratio(hyp, ref),
    }
    for n in range(1, 5):
        out[f"bleu{n}"] = bleu(hyp, [ref], n)
    return out


def default_pins(x0, ref_len: int) -> dict[int, int]:
    """Two control words from the clean caption at fixed reference positions."""
    positions = (2, min(6, ref_len - 1))
    words = (x0[1], x0[-1])
    return {positions[0]: words[0], positions[1]: words[1]}


def evaluate(model, corpus: Corpus, mode: str, steps: int, seed: int,
             split: str = "test", limit: int | None = None) -> dict:
    """Run the denoiser over a split in the given mode and aggregate metrics."""
    kind, arg = parse_mode(mode)
    vocab = corpus.vocab
    rng = np.random.default_rng(seed)
    examples = corpus.split(split)
    if limit is not None:
        examples = examples[:limit]
    if not examples:
        raise MetricError(f"split {split!r} is empty")

    rows = []
    hard_outputs, soft_outputs, pin_maps = [], [], []
    for ex in examples:
        x0 = list(ex.caption)
        if kind == "ood":
            ref = corrupt_to_ratio(x0, arg, vocab, rng)
            state = CaptionState.from_ids(ref, step=steps)
        elif kind == "random":
            state = make_random_sequence(arg, vocab, rng, step=steps)
            ref = state.ids()
        else:  # control
            state = make_random_sequence(10, vocab, rng, step=steps)
            ref = state.ids()
            pins = default_pins(x0, len(ref))
            pinned_ids = list(state.tokens)
            for pos, word in pins.items():
                pinned_ids[pos] = Token(word, Origin.RANDOM_WORD)
            state = CaptionState(tuple(pinned_ids), step=steps)
            ref = state.ids()
        row = {"scene_id": ex.scene_id, "input": list(ref),
               "input_ratio": lev_ratio(ref, x0)}
        if kind == "control":
            hard, _ = denoise_loop(model, ex.condition, state, steps,
                                   pinned=pins, mode="hard")
            soft, _ = denoise_loop(model, ex.condition, state, steps,
                                   pinned=pins, mode="soft")
            hard_outputs.append(hard.ids())
            soft_outputs.append(soft.ids())
            pin_maps.append(pins)
            row.update({"output_hard": hard.ids(), "output_soft": soft.ids()})
            row.update({f"hard_{k}": v for k, v in _quality(hard.ids(), x0).items()})
        else:
            final, _ = denoise_loop(model, ex.condition, state, steps)
            row["output"] = final.ids()
            row.update(_quality(final.ids(), x0))
        rows.append(row)

    aggregates: dict[str, float] = {
        "input_mean_ratio": float(np.mean([r["input_ratio"] for r in rows])),
        "n_examples": len(rows),
    }
    if kind == "control":
        aggregates["retention_hard"] = retention_rate(hard_outputs, pin_maps)
        aggregates["retention_soft"] = retention_rate(soft_outputs, pin_maps)
        for key in ("em", "f1", "ratio"):
            aggregates[f"hard_{key}"] = float(np.mean([r[f"hard_{key}"] for r in rows]))
    else:
        for key in ("em", "f1", "ratio", "bleu1", "bleu2", "bleu3", "bleu4"):
            aggregates[key] = float(np.mean([r[key] for r in rows]))
    return {
        "mode": mode,
        "steps": steps,
        "seed": seed,
        "split": split,
        "aggregates": aggregates,
        "rows": rows,
    }


def write_report(report: dict, json_path: str | Path) -> None:
    """Report JSON plus a sidecar CSV holding the flat aggregates."""
    json_path = Path(json_path)
    json_path.write_text(json.dumps(report, indent=2), encoding="utf-8")
    csv_path = json_path.with_suffix(".csv")
    agg = report["aggregates"]
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "steps", "split", *agg.keys()])
        writer.writerow([report["mode"], report["steps"], report["split"], *agg.values()])
