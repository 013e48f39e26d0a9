"""Deterministic synthetic second-language learner corpus.

Each utterance draws a latent proficiency, samples words from a generated
lexicon, scores every phone/word/utterance with distributions whose means
rise with proficiency, and renders a CTC posterior grid whose mass on each
canonical phone tracks that phone's score. A transcription with injected
recognition errors at a target word error rate provides the second view;
its scores are transferred through the alignment rules (insertions score
zero, deletions vanish, substitutions inherit). Acoustic summary vectors
are random projections of the utterance scores, so utterance-level signal
is linearly recoverable from them.

Everything derives from (seed, utterance index), so corpora are bytewise
reproducible and generation parallelizes per utterance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .alignment import align, assign_scores, build_phone_word_map, word_error_rate

SCHEMA_VERSION = 1

# ssl projection input: 5 utterance scores, 2 length features, bias
_SSL_FEATURE_DIM = 8
_SSL_NOISE = 0.05

UTT_KEYS = ("acc", "flu", "comp", "pros", "total")
WORD_KEYS = ("acc", "stress", "total")

_LEXICON_STREAM = 101
_UTT_STREAM = 202
_SSL_STREAM = 303


@dataclass(frozen=True)
class CorpusConfig:
    inventory_size: int = 8
    lexicon_size: int = 40
    n_utterances: int = 500
    words_range: tuple[int, int] = (3, 7)
    phones_per_word: tuple[int, int] = (2, 4)
    frames_per_phone: tuple[int, int] = (2, 4)
    target_wers: tuple[float, ...] = (0.2,)
    seed: int = 0

    def __post_init__(self):
        if self.inventory_size < 2 or self.lexicon_size < 2:
            raise ValueError("need at least two phones and two words")
        for lo, hi in (self.words_range, self.phones_per_word, self.frames_per_phone):
            if not (1 <= lo <= hi):
                raise ValueError("ranges must be nonempty with lo >= 1")
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be positive")
        for w in self.target_wers:
            if not (0.0 <= w <= 1.0):
                raise ValueError("target WER must lie in [0, 1]")


@dataclass
class UtteranceRecord:
    utt_id: str
    ref_words: list[int]
    ref_phones: list[int]
    phone_to_word: list[int]
    scores: dict
    hyp_words: list[int]
    hyp_phones: list[int]
    hyp_phone_to_word: list[int]
    hyp_scores: dict
    posteriors: np.ndarray        # (frames, P+1) probabilities
    ssl: np.ndarray               # (3, 1024)
    proficiency: float
    seed: int

    def to_json(self) -> str:
        doc = {
            "schema": SCHEMA_VERSION,
            "utt_id": self.utt_id,
            "ref_words": [f"w{w:03d}" for w in self.ref_words],
            "ref_phones": [f"p{p}" for p in self.ref_phones],
            "phone_to_word": self.phone_to_word,
            "scores": self.scores,
            "hyp_words": [f"w{w:03d}" for w in self.hyp_words],
            "hyp_phones": [f"p{p}" for p in self.hyp_phones],
            "hyp_phone_to_word": self.hyp_phone_to_word,
            "hyp_scores": self.hyp_scores,
            "posteriors": self.posteriors.tolist(),
            "ssl": self.ssl.tolist(),
            "proficiency": self.proficiency,
            "seed": self.seed,
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(line: str) -> "UtteranceRecord":
        doc = json.loads(line)
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported corpus schema {doc.get('schema')}")
        return UtteranceRecord(
            utt_id=doc["utt_id"],
            ref_words=[int(w[1:]) for w in doc["ref_words"]],
            ref_phones=[int(p[1:]) for p in doc["ref_phones"]],
            phone_to_word=list(doc["phone_to_word"]),
            scores=doc["scores"],
            hyp_words=[int(w[1:]) for w in doc["hyp_words"]],
            hyp_phones=[int(p[1:]) for p in doc["hyp_phones"]],
            hyp_phone_to_word=list(doc["hyp_phone_to_word"]),
            hyp_scores=doc["hyp_scores"],
            posteriors=np.array(doc["posteriors"], dtype=np.float64),
            ssl=np.array(doc["ssl"], dtype=np.float64),
            proficiency=float(doc["proficiency"]),
            seed=int(doc["seed"]),
        )

    def validate(self, inventory_size: int | None = None) -> None:
        n, m = len(self.ref_phones), len(self.ref_words)
        assert self.phone_to_word == build_phone_word_map(
            [self.phone_to_word.count(w) for w in range(m)])
        assert len(self.scores["phone"]) == n
        assert all(s in (0, 1, 2) for s in self.scores["phone"])
        for k in WORD_KEYS:
            assert len(self.scores["word"][k]) == m
            assert all(0 <= s <= 10 for s in self.scores["word"][k])
        for k in UTT_KEYS:
            assert 0 <= self.scores["utt"][k] <= 10
        hn, hm = len(self.hyp_phones), len(self.hyp_words)
        assert len(self.hyp_scores["phone"]) == hn
        for k in WORD_KEYS:
            assert len(self.hyp_scores["word"][k]) == hm
        assert len(self.hyp_phone_to_word) == hn
        row_mass = self.posteriors.sum(axis=1)
        assert np.allclose(row_mass, 1.0, atol=1e-12)
        if inventory_size is not None:
            assert self.posteriors.shape[1] == inventory_size + 1
        assert self.ssl.shape == (3, 1024)
        assert 0.0 <= self.proficiency <= 1.0


def build_lexicon(config: CorpusConfig) -> list[list[int]]:
    """Phone sequence per word; no adjacent repeats inside a word."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _LEXICON_STREAM]))
    lo, hi = config.phones_per_word
    lexicon = []
    for _ in range(config.lexicon_size):
        length = int(rng.integers(lo, hi + 1))
        phones = [int(rng.integers(0, config.inventory_size))]
        while len(phones) < length:
            cand = int(rng.integers(0, config.inventory_size))
            if cand != phones[-1]:
                phones.append(cand)
        lexicon.append(phones)
    return lexicon


def _word_similarity(lexicon: list[list[int]]) -> np.ndarray:
    """Jaccard overlap of word phone sets; substitution candidate weights."""
    v = len(lexicon)
    sets = [set(w) for w in lexicon]
    sim = np.zeros((v, v))
    for i in range(v):
        for j in range(v):
            inter = len(sets[i] & sets[j])
            union = len(sets[i] | sets[j])
            sim[i, j] = inter / union
    return sim


def inject_asr_errors(words, target_wer: float, rng: np.random.Generator,
                      lexicon: list[list[int]], similarity: np.ndarray | None = None):
    """Apply deletions / substitutions / insertions at rates summing to the
    target WER (half substitutions, a quarter each of the others)."""
    if not (0.0 <= target_wer <= 1.0):
        raise ValueError("target WER must lie in [0, 1]")
    if target_wer == 0.0:
        return list(words)
    if similarity is None:
        similarity = _word_similarity(lexicon)
    p_del = p_ins = 0.25 * target_wer
    p_sub = 0.5 * target_wer
    v = len(lexicon)
    out: list[int] = []
    for w in words:
        r = rng.random()
        if r < p_del:
            pass
        elif r < p_del + p_sub:
            weights = similarity[w].copy()
            weights[w] = 0.0
            if weights.sum() <= 0:
                weights = np.ones(v)
                weights[w] = 0.0
            out.append(int(rng.choice(v, p=weights / weights.sum())))
        else:
            out.append(int(w))
        if rng.random() < p_ins:
            out.append(int(rng.integers(0, v)))
    if not out:
        out = [int(words[0])]
    return out


def simulate_posteriors(phones, phone_scores, config: CorpusConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """Posterior probability grid (frames, P+1) whose canonical-phone mass
    grows with the phone's score; blank is the last column."""
    if len(phones) == 0:
        raise ValueError("phones must be non-empty")
    P = config.inventory_size
    lo, hi = config.frames_per_phone
    mass_range = {2: (0.78, 0.90), 1: (0.45, 0.62), 0: (0.08, 0.20)}
    rows = []
    for phone, score in zip(phones, phone_scores):
        n_frames = int(rng.integers(lo, hi + 1))
        a, b = mass_range[int(score)]
        for _ in range(n_frames):
            canonical = rng.uniform(a, b)
            rest = 1.0 - canonical
            blank = rest * rng.uniform(0.25, 0.40)
            confusion = rest - blank
            weights = rng.random(P)
            weights[phone] = 0.0
            weights = weights / weights.sum() * confusion
            row = np.empty(P + 1)
            row[:P] = weights
            row[phone] = canonical
            row[P] = blank
            rows.append(row / row.sum())
    return np.array(rows)


def _ssl_projections(seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SSL_STREAM]))
    return rng.normal(0.0, 1.0 / np.sqrt(_SSL_FEATURE_DIM), (3, 1024, _SSL_FEATURE_DIM))


def simulate_ssl_vectors(utt_scores: dict, n_words: int, n_phones: int,
                         projections: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Three 1024-length vectors: fixed projections of the utterance score
    vector and length features, plus small noise."""
    feats = np.array([utt_scores[k] / 10.0 for k in UTT_KEYS]
                     + [n_words / 20.0, n_phones / 60.0, 1.0])
    out = projections @ feats + _SSL_NOISE * rng.normal(size=(3, 1024))
    return out


def _scores_for(rng, rho: float, phone_counts: list[int]):
    phone_scores: list[int] = []
    word_acc, word_stress, word_total = [], [], []
    for count in phone_counts:
        ws: list[int] = []
        for _ in range(count):
            q = float(np.clip(rho + rng.uniform(-0.2, 0.2), 0.02, 0.98))
            ws.append(int(rng.binomial(2, q)))
        phone_scores.extend(ws)
        base = 10.0 * (sum(ws) / (2.0 * count))
        acc = int(np.clip(round(base + rng.normal(0, 0.8)), 0, 10))
        stress = int(np.clip(round(base + rng.normal(0, 1.0)), 0, 10))
        total = int(np.clip(round(0.5 * (acc + stress) + rng.normal(0, 0.5)), 0, 10))
        word_acc.append(acc)
        word_stress.append(stress)
        word_total.append(total)

    utt = {}
    for key in UTT_KEYS:
        drift = rng.normal(0, 0.06)
        value = 10.0 * float(np.clip(rho + drift, 0.0, 1.0)) + rng.normal(0, 0.4)
        utt[key] = int(np.clip(round(value), 0, 10))
    return (phone_scores,
            {"acc": word_acc, "stress": word_stress, "total": word_total},
            utt)


def _transfer_scores(ref_tokens, hyp_tokens, ref_values):
    ops = align(hyp_tokens, ref_tokens)
    return list(assign_scores(ops, ref_values, hyp_tokens).scores)


def generate_utterance(config: CorpusConfig, lexicon, similarity, projections,
                       index: int, target_wer: float) -> UtteranceRecord:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _UTT_STREAM, index]))
    rho = float(rng.uniform(0.05, 0.95))

    lo, hi = config.words_range
    n_words = int(rng.integers(lo, hi + 1))
    ref_words = [int(w) for w in rng.integers(0, config.lexicon_size, n_words)]
    phone_counts = [len(lexicon[w]) for w in ref_words]
    ref_phones = [p for w in ref_words for p in lexicon[w]]
    phone_to_word = build_phone_word_map(phone_counts)

    phone_scores, word_scores, utt_scores = _scores_for(rng, rho, phone_counts)
    posteriors = simulate_posteriors(ref_phones, phone_scores, config, rng)

    hyp_words = inject_asr_errors(ref_words, target_wer, rng, lexicon, similarity)
    hyp_phones = [p for w in hyp_words for p in lexicon[w]]
    hyp_phone_to_word = build_phone_word_map([len(lexicon[w]) for w in hyp_words])

    hyp_word_scores = {k: _transfer_scores(ref_words, hyp_words, word_scores[k])
                       for k in WORD_KEYS}
    hyp_phone_scores = _transfer_scores(ref_phones, hyp_phones, phone_scores)

    ssl = simulate_ssl_vectors(utt_scores, n_words, len(ref_phones), projections, rng)

    return UtteranceRecord(
        utt_id=f"utt{index:05d}",
        ref_words=ref_words,
        ref_phones=ref_phones,
        phone_to_word=phone_to_word,
        scores={"phone": phone_scores, "word": word_scores, "utt": utt_scores},
        hyp_words=hyp_words,
        hyp_phones=hyp_phones,
        hyp_phone_to_word=hyp_phone_to_word,
        hyp_scores={"phone": hyp_phone_scores, "word": hyp_word_scores,
                    "utt": dict(utt_scores)},
        posteriors=posteriors,
        ssl=ssl,
        proficiency=rho,
        seed=config.seed,
    )


def generate_corpus(config: CorpusConfig, target_wer: float | None = None) -> list[UtteranceRecord]:
    if target_wer is None:
        target_wer = config.target_wers[0]
    lexicon = build_lexicon(config)
    similarity = _word_similarity(lexicon)
    projections = _ssl_projections(config.seed)
    return [generate_utterance(config, lexicon, similarity, projections, i, target_wer)
            for i in range(config.n_utterances)]


def write_corpus(records, path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def load_corpus(path) -> list[UtteranceRecord]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(UtteranceRecord.from_json(line))
    return records


def corpus_wer(records) -> float:
    """Corpus-level WER of the stored transcriptions against references."""
    errors = 0
    ref_len = 0
    for r in records:
        ops_cost = word_error_rate(r.hyp_words, r.ref_words) * len(r.ref_words)
        errors += ops_cost
        ref_len += len(r.ref_words)
    return errors / ref_len if ref_len else 0.0
