"""CTC decoding of per-frame distributions over A, C, G, T and blank.

Channel order is ``A C G T -``; the blank is index 4. Per-base qualities
(mean probability over the frames that emit a base) are a practical extra
for FASTQ output and have no role in choosing the sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ALPHABET = "ACGT"
LABELS = "ACGT-"
BLANK = 4
LOG_FLOOR = 1e-30


@dataclass(frozen=True)
class CallResult:
    sequence: str
    qualities: list | None = field(default=None, compare=False)


def check_probs(p, atol: float = 1e-5) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != len(LABELS):
        raise ValueError(f"frame probabilities must have shape (T, 5), got {p.shape}")
    if p.size and (np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > atol)):
        raise ValueError("every frame must be a probability vector over A, C, G, T, blank")
    return p


def _label_index(v) -> int:
    if isinstance(v, str):
        return LABELS.index(v)
    return int(v)


def collapse(path) -> str:
    """Merge runs of equal labels, then drop blanks."""
    out, prev = [], None
    for v in path:
        i = _label_index(v)
        if i != prev and i != BLANK:
            out.append(ALPHABET[i])
        prev = i
    return "".join(out)


def greedy_decode(p) -> CallResult:
    """Best-path decoding; argmax ties resolve to the lowest channel index."""
    p = check_probs(p)
    if not len(p):
        return CallResult("", [])
    path = np.argmax(p, axis=1)  # first maximum wins
    seq, quals = [], []
    t = 0
    while t < len(path):
        u = t
        while u < len(path) and path[u] == path[t]:
            u += 1
        if path[t] != BLANK:
            seq.append(ALPHABET[path[t]])
            quals.append(float(p[t:u, path[t]].mean()))
        t = u
    return CallResult("".join(seq), quals)


def _log(p):
    return np.log(np.maximum(p, LOG_FLOOR))


def _lse(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log1p(math.exp(-abs(a - b)))


def beam_decode(p, width: int = 8) -> CallResult:
    """CTC prefix beam search in log space.

    Each prefix carries the probability of paths ending in blank and ending
    in its last base; paths that collapse to the same prefix are merged.
    Without pruning (width at least the number of live prefixes) the result
    is the maximum-posterior sequence. The surviving prefixes and the greedy
    call are rescored with the exact forward posterior, so the result is never
    less probable than the greedy call.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    p = check_probs(p)
    lp = _log(p).tolist()
    NEG = -math.inf
    beams = {(): (0.0, NEG)}  # prefix -> (log p ending in blank, log p ending in base)
    rank = lambda kv: (-_lse(*kv[1]), kv[0])
    for row in lp:
        nxt = {}

        def acc(prefix, b=NEG, nb=NEG):
            ob, onb = nxt.get(prefix, (NEG, NEG))
            nxt[prefix] = (_lse(ob, b), _lse(onb, nb))

        for prefix, (pb, pnb) in beams.items():
            total = _lse(pb, pnb)
            acc(prefix, b=total + row[BLANK])
            if prefix:
                acc(prefix, nb=pnb + row[prefix[-1]])
            for c in range(4):
                ext = prefix + (c,)
                if prefix and prefix[-1] == c:
                    acc(ext, nb=pb + row[c])
                else:
                    acc(ext, nb=total + row[c])
        beams = dict(sorted(nxt.items(), key=rank)[:width])
    cands = ["".join(ALPHABET[c] for c in pre) for pre, _ in sorted(beams.items(), key=rank)]
    greedy = greedy_decode(p).sequence
    if greedy not in cands:
        cands.append(greedy)
    seq = max(cands, key=lambda s: log_posterior(p, s))  # first best on ties
    return CallResult(seq, alignment_qualities(p, seq))


def _extended(seq: str) -> np.ndarray:
    ext = [BLANK]
    for ch in seq:
        ext += [ALPHABET.index(ch), BLANK]
    return np.array(ext)


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """States reachable by jumping over the preceding blank (a base differing from the previous base)."""
    ok = np.zeros(len(ext), dtype=bool)
    ok[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return ok


def log_posterior(p, seq: str) -> float:
    """log P(seq | frames) summed over every path that collapses to ``seq`` (forward algorithm)."""
    p = check_probs(p)
    lp = _log(p)
    ext = _extended(seq)
    S, T = len(ext), len(lp)
    if T == 0:
        return 0.0 if not seq else -np.inf
    skip = _skip_allowed(ext)
    alpha = np.full(S, -np.inf)
    alpha[:2] = lp[0, ext[:2]]
    for t in range(1, T):
        a = alpha.copy()
        a[1:] = np.logaddexp(a[1:], alpha[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], alpha[:-2]), a[2:])
        alpha = a + lp[t, ext]
    return float(np.logaddexp(alpha[-1], alpha[-2]) if S > 1 else alpha[-1])


def alignment_qualities(p, seq: str) -> list:
    """Mean emitting-frame probability per base along the most probable alignment."""
    p = check_probs(p)
    if not seq:
        return []
    lp = _log(p)
    ext = _extended(seq)
    S, T = len(ext), len(lp)
    if T < len(seq):
        raise ValueError(f"{T} frames cannot emit {len(seq)} bases")
    skip = _skip_allowed(ext)
    score = np.full(S, -np.inf)
    score[:2] = lp[0, ext[:2]]
    back = np.zeros((T, S), dtype=np.int8)  # 0 stay, 1 from s-1, 2 from s-2
    for t in range(1, T):
        stay = score
        step = np.concatenate(([-np.inf], score[:-1]))
        jump = np.where(skip, np.concatenate(([-np.inf, -np.inf], score[:-2])), -np.inf)
        cand = np.stack([stay, step, jump])
        back[t] = np.argmax(cand, axis=0)
        score = cand.max(axis=0) + lp[t, ext]
    s = S - 1 if score[S - 1] >= score[S - 2] else S - 2
    states = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        states[t] = s
        s -= int(back[t, s])
    frames = [[] for _ in seq]
    for t, s in enumerate(states):
        if s % 2 == 1:
            frames[s // 2].append(p[t, ext[s]])
    return [float(np.mean(f)) if f else 0.0 for f in frames]


def phred(qualities, cap: int = 40) -> str:
    """FASTQ quality string from per-base probabilities of being correct."""
    out = []
    for q in qualities:
        err = max(1.0 - q, 10 ** (-cap / 10))
        out.append(chr(33 + int(min(cap, round(-10 * np.log10(err))))))
    return "".join(out)
