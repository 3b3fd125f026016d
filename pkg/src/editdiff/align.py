"""Weighted Levenshtein distance and ground-truth edit-script construction.

One cost model is shared by the evaluation ratio and the training
supervision: INSERT and DELETE cost 1, REPLACE costs 2, KEEP is free.
"""

from __future__ import annotations

from .edit_ops import CaptionState, EditOp, EditScript, Origin

REPLACE_COST = 2
INDEL_COST = 1


def weighted_ldist(a, b) -> int:
    """Minimum weighted edit cost (#INSERT + #DELETE + 2 * #REPLACE)."""
    a = list(a)
    b = list(b)
    m, n = len(a), len(b)
    prev = list(range(0, n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        ai = a[i - 1]
        for j in range(1, n + 1):
            diag = prev[j - 1] + (0 if ai == b[j - 1] else REPLACE_COST)
            cur[j] = min(diag, prev[j] + INDEL_COST, cur[j - 1] + INDEL_COST)
        prev = cur
    return prev[n]


def lev_ratio(a, b) -> float:
    """Similarity in [0, 1]: (m + n - ldist) / (m + n); 1.0 for two empties."""
    a = list(a)
    b = list(b)
    if not a and not b:
        return 1.0
    total = len(a) + len(b)
    return (total - weighted_ldist(a, b)) / total


def brute_force_min_distance(a, b) -> int:
    """Test oracle: exhaustive recursion over all edit sequences.

    No DP table and no pruning beyond the recursion itself, so it stays an
    independent check on :func:`weighted_ldist`.  Inputs are length-capped.
    """
    a = tuple(a)
    b = tuple(b)
    if len(a) > 6 or len(b) > 6:
        raise ValueError("brute-force oracle is limited to lengths <= 6")

    def go(i: int, j: int) -> int:
        if i == len(a):
            return (len(b) - j) * INDEL_COST
        if j == len(b):
            return (len(a) - i) * INDEL_COST
        sub = go(i + 1, j + 1) + (0 if a[i] == b[j] else REPLACE_COST)
        dele = go(i + 1, j) + INDEL_COST
        ins = go(i, j + 1) + INDEL_COST
        return min(sub, dele, ins)

    return go(0, 0)


def _backtrace(a, b, eligible=None):
    """DP + one optimal backtrace; returns per-position ops and insertion gaps.

    Tie-breaking prefers KEEP, then REPLACE, then INSERT, then DELETE, which
    fixes a single deterministic alignment.  ``eligible[i]`` marks source
    positions allowed to KEEP; positions the noising process filled with
    random words are excluded so an accidental collision with a caption word
    is still supervised as a replacement rather than a spurious survivor.
    """
    m, n = len(a), len(b)
    if eligible is None:
        eligible = [True] * m

    def match(i: int, j: int) -> bool:
        return eligible[i - 1] and a[i - 1] == b[j - 1]

    # Suffix costs: cost[i][j] is the cheapest way to finish the alignment
    # from source position i and target position j.  Walking the path from
    # the front against these costs keeps equal-cost choices anchored at the
    # start of the sequence, so the chosen path does not drift with length
    # differences between a and b.
    cost = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        cost[i][n] = (m - i) * INDEL_COST
    for j in range(n + 1):
        cost[m][j] = (n - j) * INDEL_COST
    for i in range(m - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            diag = cost[i + 1][j + 1] + (0 if match(i + 1, j + 1) else REPLACE_COST)
            cost[i][j] = min(diag, cost[i + 1][j] + INDEL_COST,
                             cost[i][j + 1] + INDEL_COST)

    ops: dict[int, tuple[EditOp, int | None]] = {}
    gaps: dict[int, list[int]] = {i: [] for i in range(m + 1)}
    i = j = 0
    path: list[tuple[EditOp, int, int]] = []
    while i < m or j < n:
        here = cost[i][j]
        if i < m and j < n and match(i + 1, j + 1) and here == cost[i + 1][j + 1]:
            path.append((EditOp.KEEP, i + 1, j + 1))
            i, j = i + 1, j + 1
        elif i < m and j < n and here == cost[i + 1][j + 1] + REPLACE_COST:
            path.append((EditOp.REPLACE, i + 1, j + 1))
            i, j = i + 1, j + 1
        elif j < n and here == cost[i][j + 1] + INDEL_COST:
            path.append((EditOp.INSERT, i, j + 1))
            j += 1
        else:
            path.append((EditOp.DELETE, i + 1, j))
            i += 1
    for op, pi, pj in path:
        if op is EditOp.INSERT:
            gaps[pi].append(b[pj - 1])
        elif op is EditOp.REPLACE:
            ops[pi] = (EditOp.REPLACE, b[pj - 1])
        else:
            ops[pi] = (op, None)
    return ops, gaps


def align(x_t: CaptionState, x_0) -> EditScript:
    """Build the single-step supervision script transforming x_t toward x_0.

    The optimal alignment may insert several words into one gap; a script
    slot can carry only one, so a gap after a KEEP position becomes an
    INSERT with the gap's first word, and gaps next to REPLACE/DELETE keep
    the stronger op.  Deferred words are recovered on later iterations.

    Tokens flagged RANDOM_WORD never count as matches: they are noise even
    when they collide with a caption word, and crediting them with KEEP
    would teach the denoiser to preserve lookalike words.
    """
    a = x_t.ids()
    b = list(x_0)
    eligible = [tok.origin is Origin.ORIGINAL for tok in x_t.tokens]
    ops, gaps = _backtrace(a, b, eligible)
    slots: list[tuple[EditOp, int | None]] = []
    if gaps[0]:
        slots.append((EditOp.INSERT, gaps[0][0]))
    else:
        slots.append((EditOp.KEEP, None))
    for pos in range(1, len(a) + 1):
        op, content = ops[pos]
        if op is EditOp.REPLACE and content == a[pos - 1]:
            # a random word that landed on its aligned target is already the
            # right word in the right slot; supervise it as KEEP so the
            # script never carries a no-op replacement
            op, content = EditOp.KEEP, None
        if op is EditOp.KEEP and gaps[pos]:
            slots.append((EditOp.INSERT, gaps[pos][0]))
        else:
            slots.append((op, content))
    return EditScript(tuple(slots))
