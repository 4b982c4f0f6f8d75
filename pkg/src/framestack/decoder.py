"""Static token-passing Viterbi decoder with frame retaining.

The search graph (HMM chains per word, bigram word transitions) is built
once and never changes with the stacking or retaining settings. During
decoding, each super frame's posterior is reused for `fr` consecutive
Viterbi steps, so only ceil(T / fs) forward passes run per utterance.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .am import ModelParams, forward_sequence
from .stacking import StackConfig, stack

GRAPH_MAGIC = b"SDGR"
GRAPH_VERSION = 1
EPSILON = -1
POSTERIOR_FLOOR = 1e-12


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    state_id: int  # emitting HMM state, or EPSILON
    word_id: int   # output word label, or EPSILON
    cost: float    # -log(transition * LM)


@dataclass
class DecodingGraph:
    num_nodes: int
    arcs: list[Arc]
    start: int
    final: int
    num_states: int

    # per-kind arc arrays, filled lazily for the vectorized search
    _compiled: dict = field(default_factory=dict, repr=False)

    def compiled(self):
        if not self._compiled:
            emit = [a for a in self.arcs if a.state_id != EPSILON]
            eps = [a for a in self.arcs if a.state_id == EPSILON]
            depth = _eps_depths(self.num_nodes, eps)
            acyclic = max(depth, default=0) < self.num_nodes
            # between emissions only eps arcs that can still feed another
            # arc matter; arcs into dead-end nodes (e.g. the final node)
            # are deferred to the end-of-utterance closure
            has_out = [False] * self.num_nodes
            for a in self.arcs:
                has_out[a.src] = True
            mid = [a for a in eps if has_out[a.dst]]
            composed = _compose_emit_eps(emit, mid) if acyclic else None
            self._compiled = {
                "emit": _arc_arrays(emit),
                "eps_all": _arc_arrays(eps),
                # level-grouped for single-sweep DAG relaxation
                "eps_mid_levels": _level_groups(mid, depth),
                "acyclic": acyclic,
                # emit arcs with the mid-utterance eps closure folded in,
                # so the search needs one relaxation pass per step; None
                # when the closure cannot be expressed as single arcs
                "emit_closed": (_arc_arrays(emit + composed)
                                if composed is not None else None),
            }
        return self._compiled

    def serialize(self) -> bytes:
        parts = [GRAPH_MAGIC,
                 struct.pack("<6I", GRAPH_VERSION, self.num_nodes,
                             self.start, self.final, self.num_states,
                             len(self.arcs))]
        for a in self.arcs:
            parts.append(struct.pack("<4i d", a.src, a.dst, a.state_id,
                                     a.word_id, a.cost))
        return b"".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()


def _eps_depths(num_nodes: int, eps_arcs: list[Arc]) -> list[int]:
    """Longest-path depth of each node in the epsilon subgraph (0 for
    nodes without incoming eps arcs); cycles are cut arbitrarily."""
    depth = [0] * num_nodes
    for _ in range(num_nodes):
        changed = False
        for a in eps_arcs:
            if depth[a.dst] < depth[a.src] + 1 and depth[a.src] < num_nodes:
                depth[a.dst] = depth[a.src] + 1
                changed = True
        if not changed:
            break
    return depth


def _compose_emit_eps(emit: list[Arc], mid: list[Arc]) -> list[Arc] | None:
    """Emitting arcs extended by every mid-utterance eps path from their
    destination, so one relaxation per step replaces emit + eps sweeps.

    Returns None when a path would have to carry more than one word label
    (not representable as a single arc); callers then fall back to
    per-level eps relaxation.
    """
    by_src: dict[int, list[Arc]] = {}
    for a in mid:
        by_src.setdefault(a.src, []).append(a)
    memo: dict[int, list[tuple[int, float, int]]] = {}

    def eps_paths(node: int) -> list[tuple[int, float, int]]:
        """(dst, cost, word) for every eps path of length >= 1."""
        if node in memo:
            return memo[node]
        out = []
        for a in by_src.get(node, []):
            out.append((a.dst, a.cost, a.word_id))
            for dst, cost, word in eps_paths(a.dst):
                if a.word_id != EPSILON and word != EPSILON:
                    raise _MultiWordPath
                out.append((dst, a.cost + cost,
                            a.word_id if a.word_id != EPSILON else word))
        memo[node] = out
        return out

    composed = []
    try:
        for e in emit:
            for dst, cost, word in eps_paths(e.dst):
                if e.word_id != EPSILON and word != EPSILON:
                    raise _MultiWordPath
                composed.append(Arc(
                    e.src, dst, e.state_id,
                    e.word_id if e.word_id != EPSILON else word,
                    e.cost + cost))
    except _MultiWordPath:
        return None
    return composed


class _MultiWordPath(Exception):
    pass


def _level_groups(arcs: list[Arc], depth: list[int]) -> list[dict]:
    levels: dict[int, list[Arc]] = {}
    for a in arcs:
        levels.setdefault(depth[a.src], []).append(a)
    return [_arc_arrays(levels[d]) for d in sorted(levels)]


def _arc_arrays(arcs: list[Arc]) -> dict:
    return {
        "arcs": arcs,
        "src": np.array([a.src for a in arcs], dtype=np.int64),
        "dst": np.array([a.dst for a in arcs], dtype=np.int64),
        "sid": np.array([a.state_id for a in arcs], dtype=np.int64),
        "cost": np.array([a.cost for a in arcs], dtype=np.float64),
        # lexsort tie-break key: among equal scores the lowest arc index
        # must win, i.e. be assigned last in the ascending-score pass
        "neg_id": -np.arange(len(arcs), dtype=np.int64),
    }


def save_graph(graph: DecodingGraph, path):
    with open(path, "wb") as f:
        f.write(graph.serialize())


def load_graph(path) -> DecodingGraph:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != GRAPH_MAGIC:
        raise DecodeError(f"{path}: not a graph file")
    version, num_nodes, start, final, num_states, num_arcs = struct.unpack(
        "<6I", data[4:28])
    if version != GRAPH_VERSION:
        raise DecodeError(f"unsupported graph version {version}")
    arcs = []
    pos = 28
    for _ in range(num_arcs):
        src, dst, sid, wid, cost = struct.unpack("<4i d", data[pos:pos + 24])
        arcs.append(Arc(src, dst, sid, wid, cost))
        pos += 24
    return DecodingGraph(num_nodes, arcs, start, final, num_states)


@dataclass(frozen=True)
class DecodeConfig:
    fs: int = 1
    fr: int = 1
    acoustic_scale: float = 1.0
    beam: float = np.inf

    def __post_init__(self):
        if self.fs < 1 or self.fr < 1:
            raise DecodeError("fs and fr must be >= 1")
        if self.acoustic_scale <= 0:
            raise DecodeError("acoustic_scale must be > 0")


@dataclass
class DecodeResult:
    words: list[int]
    log_score: float
    num_forward_passes: int
    decode_wall_seconds: float
    audio_seconds: float
    failed: bool = False


def estimate_bigram(transcripts, num_words: int) -> np.ndarray:
    """Add-one-smoothed bigram LM from transcripts.

    Returns (num_words + 1, num_words + 1): row u in [0, V) is history
    word u, row V is sentence start; column v in [0, V) is next word,
    column V is sentence end.
    """
    v = num_words
    counts = np.zeros((v + 1, v + 1))
    for words in transcripts:
        prev = v  # <s>
        for w in words:
            counts[prev, w] += 1
            prev = w
        counts[prev, v] += 1  # </s>
    return (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + v + 1)


def build_graph(lexicon: dict[int, list[int]], bigram: np.ndarray,
                self_loop_probs: np.ndarray, num_states: int
                ) -> DecodingGraph:
    """Compose word HMM chains with a bigram word graph.

    Nodes: one hub per history (sentence start + each word), one chain
    node per HMM state occurrence, one final node. The graph depends only
    on the lexicon, LM, and HMM transitions, never on fs/fr.
    """
    if not lexicon:
        raise DecodeError("empty lexicon")
    words = sorted(lexicon)
    v = len(words)
    start = 0                       # <s> hub
    hub = {w: 1 + i for i, w in enumerate(words)}
    next_node = 1 + v
    chain_nodes = {}
    for w in words:
        states = lexicon[w]
        if not states:
            raise DecodeError(f"word {w} has an empty pronunciation")
        chain_nodes[w] = list(range(next_node, next_node + len(states)))
        next_node += len(states)
    final = next_node
    num_nodes = next_node + 1

    arcs = []
    histories = [(start, v)] + [(hub[w], w) for w in words]
    for hub_node, hist in histories:
        for w in words:
            # entering a word consumes one frame in its first state
            arcs.append(Arc(hub_node, chain_nodes[w][0], lexicon[w][0],
                            EPSILON, -np.log(bigram[hist, w])))
        arcs.append(Arc(hub_node, final, EPSILON, EPSILON,
                        -np.log(bigram[hist, v])))
    for w in words:
        states = lexicon[w]
        nodes = chain_nodes[w]
        for j, s in enumerate(states):
            p_self = float(self_loop_probs[s])
            arcs.append(Arc(nodes[j], nodes[j], s, EPSILON,
                            -np.log(p_self)))
            if j + 1 < len(states):
                arcs.append(Arc(nodes[j], nodes[j + 1], states[j + 1],
                                EPSILON, -np.log(1.0 - p_self)))
        arcs.append(Arc(nodes[-1], hub[w], EPSILON, w,
                        -np.log(1.0 - self_loop_probs[states[-1]])))
    return DecodingGraph(num_nodes, arcs, start, final, num_states)


def retained_posteriors(super_posteriors: np.ndarray, fr: int,
                        t_effective: int) -> np.ndarray:
    """Multiplex super-frame posteriors over decoder steps.

    Step t receives super_posteriors[t // fr]; the stream is truncated to
    t_effective steps (at most M * fr).
    """
    m = len(super_posteriors)
    length = min(m * fr, t_effective)
    idx = np.arange(length) // fr
    return np.asarray(super_posteriors)[idx]


def emission_scores(posteriors: np.ndarray, priors: np.ndarray,
                    acoustic_scale: float) -> np.ndarray:
    """Hybrid emission log-scores: scale * (log p(l|x) - log p(l)).

    The constant p(x) term is dropped; posteriors are floored at 1e-12.
    """
    lp = np.log(np.maximum(posteriors, POSTERIOR_FLOOR))
    return acoustic_scale * (lp - np.log(priors))


def emission_score(posterior: np.ndarray, priors: np.ndarray, state_id: int,
                   acoustic_scale: float = 1.0) -> float:
    return float(emission_scores(posterior[None, :], priors,
                                 acoustic_scale)[0, state_id])


def _assign_max(scores_in, cand, arrs):
    """Max-per-destination via a stable ascending-score assignment pass.

    Returns (scores_out, winner arc index per node or -1) considering only
    the candidate arcs; carry-over from scores_in is applied by the
    caller."""
    order = np.lexsort((arrs["neg_id"], cand))
    out = np.full_like(scores_in, -np.inf)
    bp = np.full(len(scores_in), -1, dtype=np.int64)
    dst = arrs["dst"][order]
    out[dst] = cand[order]
    bp[dst] = (-arrs["neg_id"])[order]
    return out, bp


def _viterbi(graph: DecodingGraph, emissions: np.ndarray, beam: float
             ) -> tuple[float, list[int]]:
    """Exact (or beam-pruned) best path; returns (log score, word ids).

    emissions: (steps, num_states) log emission scores. Raises
    DecodeError via a -inf final score when no path reaches the final
    node; callers convert that into a failed DecodeResult.
    """
    comp = graph.compiled()
    mid_closed = comp["emit_closed"] is not None
    emit = comp["emit_closed"] if mid_closed else comp["emit"]
    n = graph.num_nodes
    scores = np.full(n, -np.inf)
    scores[graph.start] = 0.0
    stages = []  # ("emit"|"eps", arc arrays, bp per node)

    def relax(arrs):
        """One eps relaxation pass; returns True if anything improved."""
        nonlocal scores
        cand = scores[arrs["src"]] - arrs["cost"]
        best, bp = _assign_max(scores, cand, arrs)
        improved = best > scores
        if improved.any():
            stages.append(("eps", arrs, np.where(improved, bp, -1)))
            scores = np.where(improved, best, scores)
            return True
        return False

    def closure_mid():
        if comp["acyclic"]:
            for arrs in comp["eps_mid_levels"]:
                relax(arrs)
        else:
            closure_full()

    def closure_full():
        if len(comp["eps_all"]["arcs"]) == 0:
            return
        while relax(comp["eps_all"]):
            pass

    closure_full()
    for t in range(len(emissions)):
        emis = emissions[t]
        cand = scores[emit["src"]] - emit["cost"] + emis[emit["sid"]]
        new_scores, bp = _assign_max(scores, cand, emit)
        stages.append(("emit", emit, bp))
        scores = new_scores
        if t + 1 < len(emissions):
            if not mid_closed:
                closure_mid()
        else:
            closure_full()
        if np.isfinite(beam):
            cutoff = scores.max() - beam
            scores = np.where(scores >= cutoff, scores, -np.inf)

    final_score = scores[graph.final]
    if not np.isfinite(final_score):
        return -np.inf, []

    # backtrace
    words = []
    node = graph.final
    for kind, arrs, bp in reversed(stages):
        arc_idx = bp[node]
        if kind == "eps" and arc_idx < 0:
            continue
        if arc_idx < 0:
            raise DecodeError("broken backtrace")
        arc = arrs["arcs"][arc_idx]
        if arc.word_id != EPSILON:
            words.append(arc.word_id)
        node = arc.src
    if node != graph.start:
        raise DecodeError("backtrace did not reach the start node")
    words.reverse()
    return float(final_score), words


def decode_stream(emissions: np.ndarray, graph: DecodingGraph,
                  beam: float = np.inf) -> tuple[float, list[int], bool]:
    score, words = _viterbi(graph, emissions, beam)
    return score, words, not np.isfinite(score)


def decode(features: np.ndarray, model: ModelParams, priors: np.ndarray,
           graph: DecodingGraph, cfg: DecodeConfig,
           frame_seconds: float = 0.01) -> DecodeResult:
    """Decode one utterance with frame stacking (fs) and retaining (fr)."""
    t0 = time.perf_counter()
    t_len = len(features)
    if t_len == 0:
        return DecodeResult([], -np.inf, 0, 0.0, 0.0, failed=True)
    stacked = stack(features, StackConfig(fs=cfg.fs))
    if stacked.super_frames.shape[1] != model.config.input_dim:
        raise DecodeError("model input_dim does not match fs * feature dim")
    super_posts = forward_sequence(model, stacked.super_frames)
    stream = retained_posteriors(super_posts, cfg.fr, t_len)
    emissions = emission_scores(stream, priors, cfg.acoustic_scale)
    score, words, failed = decode_stream(emissions, graph, cfg.beam)
    wall = time.perf_counter() - t0
    return DecodeResult(words, score, len(super_posts), wall,
                        t_len * frame_seconds, failed=failed)


def decode_baseline(features: np.ndarray, model: ModelParams,
                    priors: np.ndarray, graph: DecodingGraph,
                    acoustic_scale: float = 1.0, beam: float = np.inf,
                    frame_seconds: float = 0.01) -> DecodeResult:
    """Stacking-free reference path: one forward pass per original frame.

    decode() with fs=fr=1 must match this bit for bit.
    """
    t0 = time.perf_counter()
    t_len = len(features)
    if t_len == 0:
        return DecodeResult([], -np.inf, 0, 0.0, 0.0, failed=True)
    posts = forward_sequence(model, features)
    emissions = emission_scores(posts, priors, acoustic_scale)
    score, words, failed = decode_stream(emissions, graph, beam)
    wall = time.perf_counter() - t0
    return DecodeResult(words, score, t_len, wall, t_len * frame_seconds,
                        failed=failed)


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance over token sequences."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def error_rate(refs, hyps) -> float:
    """Token error rate: total edit distance / total reference length."""
    dist = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    ref_len = sum(len(r) for r in refs)
    return dist / max(1, ref_len)


def rtf(decode_wall_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise DecodeError("audio_seconds must be > 0")
    return decode_wall_seconds / audio_seconds
