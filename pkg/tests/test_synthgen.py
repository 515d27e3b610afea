import numpy as np
import pytest

from lattice_ftm.lattice import Label, best_path, build_line_graph, parse_corpus, serialize_corpus
from lattice_ftm.synthgen import TRIGGER_PHRASE, SynthSpec, gen_corpus, gen_lattice


def reachable_to_final(lat):
    """Every arc lies on some path from state 0 to a final state."""
    out = {}
    for a in lat.arcs:
        out.setdefault(a.start, []).append(a.end)
    finals = {a.end for a in lat.arcs} - set(out)
    seen, stack = {0}, [0]
    while stack:
        for nxt in out.get(stack.pop(), []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen, finals


class TestGenLattice:
    def test_true_no_branching_is_chain(self):
        spec = SynthSpec(true_branch_prob=0.0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            lat = gen_lattice(spec, Label.TRUE_TRIGGER, rng)
            assert [(a.start, a.end) for a in lat.arcs] == [(k, k + 1) for k in range(lat.num_arcs)]
            assert spec.path_length_min <= lat.num_arcs <= spec.path_length_max
            assert tuple(a.word for a in lat.arcs[:2]) == TRIGGER_PHRASE
            assert (lat.arcs[0].features.trigger_flag_1, lat.arcs[1].features.trigger_flag_2) == (1, 1)

    def test_false_branching_rate(self):
        spec = SynthSpec()
        rng = np.random.default_rng(20240501)
        branched, bounds = [], []
        for _ in range(1000):
            lat = gen_lattice(spec, Label.FALSE_TRIGGER, rng)
            _, finals = reachable_to_final(lat)
            length = finals.pop()  # backbone states are 0..L with L the only final state
            branched.append(lat.num_arcs > length)
            bounds.append(1 - (1 - spec.false_branch_prob) ** (length - 1))
        assert np.mean(branched) >= np.mean(bounds)

    def test_structure(self):
        spec = SynthSpec()
        rng = np.random.default_rng(3)
        for label in (Label.TRUE_TRIGGER, Label.FALSE_TRIGGER):
            for _ in range(200):
                lat = gen_lattice(spec, label, rng)
                assert all(a.start < lat.num_states and a.end < lat.num_states for a in lat.arcs)
                seen, finals = reachable_to_final(lat)
                assert all(a.start in seen for a in lat.arcs)
                assert len(finals) == 1
                assert best_path(lat)
                g = build_line_graph(lat)
                assert np.abs(g.adjacency.sum(axis=1) - 1).max() < 1e-12
                assert all(f.log_posterior <= 0 for f in (a.features for a in lat.arcs))

    def test_flag_noise_extremes(self):
        rng = np.random.default_rng(1)
        never = SynthSpec(trigger_flag_noise=0.0)
        always = SynthSpec(trigger_flag_noise=1.0)
        for _ in range(30):
            assert gen_lattice(never, Label.FALSE_TRIGGER, rng).arcs[0].features.trigger_flag_1 == 0
            assert gen_lattice(always, Label.FALSE_TRIGGER, rng).arcs[0].features.trigger_flag_1 == 1


class TestSpec:
    @pytest.mark.parametrize("kwargs", [
        {"false_branch_prob": 1.5}, {"trigger_flag_noise": -0.1}, {"num_true": 0},
        {"path_length_min": 5, "path_length_max": 4}, {"false_extra_paths_min": 0},
        {"vocab_size": 0}, {"score_noise_sigma_false": -1.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SynthSpec(**kwargs)


class TestCorpus:
    def test_counts_and_round_trip(self):
        corpus = gen_corpus(SynthSpec(num_true=100, num_false=100, seed=7))
        assert len(corpus) == 200
        labels = [x.label for x in corpus]
        assert labels.count(Label.TRUE_TRIGGER) == 100
        assert parse_corpus(serialize_corpus(corpus)) == corpus
        assert len({x.utterance_id for x in corpus}) == 200
        # shuffled, not grouped by label
        assert labels[:100] != [Label.TRUE_TRIGGER] * 100

    def test_byte_identical(self):
        spec = SynthSpec(num_true=30, num_false=30, seed=11)
        assert serialize_corpus(gen_corpus(spec)) == serialize_corpus(gen_corpus(spec))
        other = SynthSpec(num_true=30, num_false=30, seed=12)
        assert serialize_corpus(gen_corpus(spec)) != serialize_corpus(gen_corpus(other))

    def test_false_bushier(self):
        corpus = gen_corpus(SynthSpec(num_true=300, num_false=300, seed=2))
        true = [x.num_arcs for x in corpus if x.label is Label.TRUE_TRIGGER]
        false = [x.num_arcs for x in corpus if x.label is Label.FALSE_TRIGGER]
        assert np.mean(false) > np.mean(true)


def structure_features(lat):
    out_deg = {}
    for a in lat.arcs:
        out_deg[a.start] = out_deg.get(a.start, 0) + 1
    return [lat.num_arcs, np.mean(list(out_deg.values()))]


def fit_logistic(x, y, steps=3000, lr=0.1):
    w = np.zeros(x.shape[1] + 1)
    xb = np.hstack([x, np.ones((len(x), 1))])
    for _ in range(steps):
        p = 1 / (1 + np.exp(-xb @ w))
        w -= lr * xb.T @ (p - y) / len(y)
    return w


def test_structure_probe_separates_classes():
    train = gen_corpus(SynthSpec(num_true=500, num_false=500, seed=100))
    test = gen_corpus(SynthSpec(num_true=500, num_false=500, seed=101))
    xtr = np.array([structure_features(x) for x in train])
    mu, sd = xtr.mean(axis=0), xtr.std(axis=0)
    ytr = np.array([x.label.target for x in train])
    w = fit_logistic((xtr - mu) / sd, ytr)
    xte = (np.array([structure_features(x) for x in test]) - mu) / sd
    scores = np.hstack([xte, np.ones((len(xte), 1))]) @ w
    yte = np.array([x.label.target for x in test])
    pos, neg = scores[yte == 1], scores[yte == 0]
    diff = pos[:, None] - neg[None, :]
    auc = ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size
    assert auc > 0.8
