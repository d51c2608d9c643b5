"""Shared oracles and generators.

The oracles here are deliberately naive: they rasterize time at 1 ms,
enumerate partitions or fill a full edit-distance table, so that the
interval-algebra implementations under test are checked against something
with no code in common.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from langdiar.timeline import LabeledAnnotation, Segment

MS = 1000  # oracle raster rate (frames per second)
NONE = -1


def raster_intervals(pairs, total: float, rate: int = MS) -> np.ndarray:
    """Boolean mask over 1 ms cells whose centers fall inside any interval."""
    n = int(round(total * rate))
    centers = (np.arange(n) + 0.5) / rate
    mask = np.zeros(n, dtype=bool)
    for s, e in pairs:
        mask |= (centers >= s) & (centers < e)
    return mask


def raster_labels(triples, labels, total: float, rate: int = MS) -> np.ndarray:
    """Label code per 1 ms cell; first matching triple wins; NONE elsewhere."""
    n = int(round(total * rate))
    centers = (np.arange(n) + 0.5) / rate
    out = np.full(n, NONE)
    for s, e, lab in reversed(list(triples)):
        out[(centers >= s) & (centers < e)] = labels.index(lab)
    return out


def oracle_lder(ref, hyp, labels, total):
    r = raster_labels(ref, labels, total)
    h = raster_labels(hyp, labels, total)
    rs, hs = r != NONE, h != NONE
    lc = np.count_nonzero(rs & hs & (r != h)) / MS
    ms = np.count_nonzero(rs & ~hs) / MS
    fa = np.count_nonzero(~rs & hs) / MS
    return lc / total, ms / total, fa / total


def oracle_ler(ref, hyp, labels, total):
    r = raster_labels(ref, labels, total)
    h = raster_labels(hyp, labels, total)
    hs = h != NONE
    return np.count_nonzero(hs & (r != NONE) & (r != h)) / np.count_nonzero(hs)


def random_flat_triples(rng: np.random.Generator, n_max: int, labels, total: float):
    """Non-overlapping labeled segments from sorted random cut points."""
    n = int(rng.integers(1, n_max + 1))
    pts = np.sort(rng.uniform(0, total, size=2 * n))
    out = []
    for k in range(n):
        s, e = float(pts[2 * k]), float(pts[2 * k + 1])
        if e > s:
            out.append((s, e, labels[int(rng.integers(len(labels)))]))
    return out


def random_pairs(rng: np.random.Generator, n_max: int, total: float):
    """Possibly overlapping raw intervals."""
    n = int(rng.integers(0, n_max + 1))
    out = []
    for _ in range(n):
        s = float(rng.uniform(0, total - 0.01))
        out.append((s, float(min(total, s + rng.uniform(0.01, total / 4)))))
    return out


def ann(triples, space=None, file_id="f", kind="language") -> LabeledAnnotation:
    return LabeledAnnotation.from_tuples(triples, label_space=space or (), file_id=file_id, kind=kind)


def dp_edit_distance(ref, hyp) -> int:
    """Full Levenshtein table with unit costs."""
    n, m = len(ref), len(hyp)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
            )
    return table[n][m]


def set_partitions(items):
    """Every partition of ``items`` (Bell-number many)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]
        yield [[first]] + part


def best_constrained_partition(ids, dist, cannot, tau):
    """Exhaustive minimizer of sum over same-cluster pairs of (d - tau)."""
    forbidden = {frozenset(p) for p in cannot}
    best, best_cost = None, None
    for part in set_partitions(ids):
        if any(frozenset(p) in forbidden for block in part for p in itertools.combinations(block, 2)):
            continue
        cost = sum(dist[a][b] - tau for block in part for a, b in itertools.combinations(block, 2))
        if best_cost is None or cost < best_cost - 1e-12:
            best, best_cost = part, cost
    return best


def canonical(assign: dict) -> frozenset:
    groups: dict = {}
    for k, v in assign.items():
        groups.setdefault(v, set()).add(k)
    return frozenset(frozenset(g) for g in groups.values())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


def seg(s: float, e: float) -> Segment:
    return Segment(s, e)


def naive_constrained_ahc(ids, vectors, cannot, tau, metric="cosine"):
    """Greedy AHC recomputing every average linkage from raw pair distances."""
    x = np.asarray(vectors, dtype=float)
    if metric == "cosine":
        u = x / np.linalg.norm(x, axis=1, keepdims=True)
        d = 1.0 - np.clip(u @ u.T, -1, 1)
    else:
        d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    forbidden = {frozenset(p) for p in cannot}
    order = sorted(range(len(ids)), key=lambda k: ids[k])
    clusters = [[k] for k in order]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                A, B = clusters[a], clusters[b]
                if any(frozenset((ids[i], ids[j])) in forbidden for i in A for j in B):
                    continue
                link = sum(d[i][j] for i in A for j in B) / (len(A) * len(B))
                key = (link, min(ids[i] for i in A), min(ids[j] for j in B))
                if best is None or key < best[0]:
                    best = (key, a, b)
        if best is None or best[0][0] > tau:
            break
        _, a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return {ids[i]: c for c, block in enumerate(clusters) for i in block}


def synth_files(spec):
    """Render every playlist of ``spec`` into pipeline inputs with truth attached."""
    from langdiar.pipeline.systems import FileInput
    from langdiar.synthgen import (
        Voicebank,
        make_mix_spec_playlists,
        render_synthetic_audio,
    )

    bank = Voicebank(spec.languages)
    out = []
    for p in make_mix_spec_playlists(spec):
        audio, lang, spk = render_synthetic_audio(p, bank)
        out.append(FileInput(p.file_id, audio, lang, spk))
    return out


CRITERIA: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    """Log one acceptance verdict line (shown again in the terminal summary) and fail if not ``ok``."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    CRITERIA[n] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
