"""Synthetic stand-in for the annotated corpus, calibrated to its published marginals.

The real annotated release is not bundled. This generator deterministically builds a
corpus with the published dialogue/utterance counts, problem and emotion counts, and
level counts; turn counts and token lengths are drawn so their means and population
standard deviations land near the published values. It exercises the statistics and
distribution code at full scale; it is not evidence about the real data.
"""

from __future__ import annotations

import random
import statistics

from dmrs_workbench.corpus import Dialogue, Role, Utterance

N_DIALOGUES = 200
N_SUPPORTER = 2373
N_SEEKER = 2336
LEVEL_COUNTS = {0: 371, 1: 136, 2: 77, 3: 124, 4: 105, 5: 61, 6: 216, 7: 1211, 8: 35}
PROBLEM_COUNTS = {
    "ongoing depression": 58,
    "job crisis": 49,
    "breakup with partner": 42,
    "problems with friends": 26,
    "academic pressure": 25,
}
EMOTION_COUNTS = {"anxiety": 57, "depression": 55, "sadness": 50, "fear": 18, "anger": 15, "shame": 5}
TURNS = {"total": (23.5, 6.6), "supporter": (11.9, 3.4), "seeker": (11.7, 3.3)}
LENGTHS = {"total": (19.8, 16.5), "supporter": (20.9, 17.0), "seeker": (18.8, 15.8)}

_WORDS = (
    "i feel like it has been hard lately and my work friends family never really seem to "
    "understand what happened when we talked about the future so maybe that is why"
).split()


def _counts_with_sum(rng: random.Random, n: int, total: int, sd: float, floor: int) -> list[int]:
    mean = total / n
    values = [max(floor, round(rng.gauss(mean, sd))) for _ in range(n)]
    while sum(values) != total:
        i = rng.randrange(n)
        step = 1 if sum(values) < total else -1
        if values[i] + step >= floor:
            values[i] += step
    return values


def _lengths(rng: random.Random, n: int, mean: float, sd: float) -> list[int]:
    shape = (mean / sd) ** 2
    scale = sd * sd / mean
    out = [max(1, round(rng.gammavariate(shape, scale))) for _ in range(n)]
    target = round(mean * n)
    while (diff := target - sum(out)) != 0:
        step = 1 if diff > 0 else -1
        for i in rng.sample(range(n), min(abs(diff), n)):
            if out[i] + step >= 1:
                out[i] += step
    return out


def _within(values: list[int], mean: float, sd: float, tol: float) -> bool:
    return abs(statistics.fmean(values) - mean) < tol and abs(statistics.pstdev(values) - sd) < tol


def _turn_counts(seed: int) -> tuple[list[int], list[int]]:
    for attempt in range(10_000):
        rng = random.Random(f"turns|{seed}|{attempt}")
        seeker = _counts_with_sum(rng, N_DIALOGUES, N_SEEKER, 3.3, 2)
        gap = _counts_with_sum(rng, N_DIALOGUES, N_SUPPORTER - N_SEEKER, 0.8, -2)
        supporter = [max(1, s + g) for s, g in zip(seeker, gap)]
        if sum(supporter) != N_SUPPORTER:
            continue
        total = [a + b for a, b in zip(seeker, supporter)]
        if (
            _within(seeker, *TURNS["seeker"], 0.06)
            and _within(supporter, *TURNS["supporter"], 0.06)
            and _within(total, *TURNS["total"], 0.06)
        ):
            return seeker, supporter
    raise RuntimeError("could not calibrate turn counts")


def _token_lengths(seed: int) -> tuple[list[int], list[int]]:
    for attempt in range(10_000):
        rng = random.Random(f"lengths|{seed}|{attempt}")
        seeker = _lengths(rng, N_SEEKER, *LENGTHS["seeker"])
        supporter = _lengths(rng, N_SUPPORTER, *LENGTHS["supporter"])
        if (
            _within(seeker, *LENGTHS["seeker"], 0.06)
            and _within(supporter, *LENGTHS["supporter"], 0.06)
            and _within(seeker + supporter, *LENGTHS["total"], 0.1)
        ):
            return seeker, supporter
    raise RuntimeError("could not calibrate token lengths")


def _expand(counts: dict, rng: random.Random) -> list:
    out = [k for k, c in counts.items() for _ in range(c)]
    rng.shuffle(out)
    return out


def surrogate_gold(seed: int = 0) -> list[Dialogue]:
    rng = random.Random(f"surrogate|{seed}")
    seeker_turns, supporter_turns = _turn_counts(seed)
    seeker_len, supporter_len = _token_lengths(seed)
    levels = _expand(LEVEL_COUNTS, rng)
    problems = _expand(PROBLEM_COUNTS, rng)
    emotions = _expand(EMOTION_COUNTS, rng)

    dialogues = []
    for d in range(N_DIALOGUES):
        roles = [Role.SUPPORTER] * supporter_turns[d] + [Role.SEEKER] * seeker_turns[d]
        # Alternate where possible, supporter first; surplus turns of either role trail.
        order = []
        sup, seek = supporter_turns[d], seeker_turns[d]
        while sup or seek:
            if sup:
                order.append(Role.SUPPORTER)
                sup -= 1
            if seek:
                order.append(Role.SEEKER)
                seek -= 1
        assert sorted(order) == sorted(roles)
        turns = []
        for i, role in enumerate(order):
            if role is Role.SEEKER:
                n, level = seeker_len.pop(), levels.pop()
            else:
                n, level = supporter_len.pop(), None
            text = " ".join(rng.choice(_WORDS) for _ in range(n))
            turns.append(Utterance(i, role, text, level))
        dialogues.append(
            Dialogue(f"gold-{d:03d}", problems[d], emotions[d], f"situation {d}", tuple(turns))
        )
    assert not levels and not seeker_len and not supporter_len
    return dialogues
