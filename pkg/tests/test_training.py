import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from podep.conllu import Sentence, Token
from podep.engine import Tensor
from podep.gradcheck import finite_diff_check
from podep.model import ModelConfig, Parser
from podep.training import (
    AdaDelta,
    AdaptiveClipper,
    EarlyStopping,
    LossWeights,
    TrainConfig,
    global_norm,
    total_loss,
    train,
    train_step,
    usable_sentences,
)

from .conftest import micro_config, randomize


@pytest.mark.parametrize("l, s, t, expected", [
    (1.0, 1.0, 0.0, 1.0),
    (0.0, 0.0, 0.0, 0.0),
    (1.0, 1.0, 2.0, 3.0),
    (2.0, 0.5, None, 1.1),
])
def test_total_loss_weights(l, s, t, expected):
    assert total_loss(l, s, t) == pytest.approx(expected)


def test_total_loss_on_tensors():
    out = total_loss(Tensor(np.array(1.0)), Tensor(np.array(1.0)), Tensor(np.array(2.0)))
    assert out.item() == pytest.approx(3.0)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(alpha_l=-0.1)


def test_adadelta_first_step_matches_scalar_oracle():
    p = Tensor(np.array([1.0]))
    opt = AdaDelta([p], rho=0.95, epsilon=1e-8)
    opt.step([np.array([1.0])])
    assert opt.sq_grad[0][0] == pytest.approx(0.05)
    delta = -np.sqrt(0.0 + 1e-8) / np.sqrt(0.05 + 1e-8)
    assert p.data[0] - 1.0 == pytest.approx(delta, rel=1e-12)
    assert delta == pytest.approx(-4.4721e-4, rel=1e-4)
    assert opt.sq_step[0][0] == pytest.approx(0.05 * delta ** 2)


def test_adadelta_zero_gradient_is_a_no_op():
    p = Tensor(np.array([0.3, -2.0]))
    opt = AdaDelta([p])
    for _ in range(5):
        opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [0.3, -2.0])


def test_adadelta_moves_towards_minimum():
    p = Tensor(np.array([3.0]))
    opt = AdaDelta([p], epsilon=1e-6)
    for _ in range(2000):
        opt.step([2.0 * p.data])
    assert abs(p.data[0]) < 3.0 * 0.5


def test_adadelta_refuses_nan():
    p = Tensor(np.zeros(2), name="w")
    with pytest.raises(FloatingPointError, match="w"):
        AdaDelta([p]).step([np.array([np.nan, 0.0])])


def test_clipper_leaves_small_gradients():
    clip = AdaptiveClipper(factor=2.0)
    clip([np.array([3.0, 4.0])])  # average 5 -> threshold 10
    g = [np.array([0.6, 0.8])]
    out, norm = clip(g)
    assert norm == pytest.approx(1.0)
    np.testing.assert_array_equal(out[0], g[0])
    assert clip.clipped == 0


def test_clipper_rescales_to_threshold():
    clip = AdaptiveClipper(factor=2.0)
    clip([np.array([3.0, 4.0])])
    threshold = clip.threshold
    big = [np.array([30.0, 40.0]) * 2.0, np.array([0.0])]  # norm 100 = 10x threshold
    out, norm = clip(big)
    assert norm == pytest.approx(100.0)
    assert global_norm(out) == pytest.approx(threshold, abs=1e-9)
    assert clip.clipped == 1


def test_clipper_average_converges_on_constant_norms():
    clip = AdaptiveClipper(factor=2.0, decay=0.9)
    clip([np.array([10.0])])
    for _ in range(50):
        clip([np.array([3.0])])
    assert clip.average == pytest.approx(3.0, rel=0.05)


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30))
@settings(max_examples=50, deadline=None)
def test_clipped_norm_never_exceeds_threshold(norms):
    clip = AdaptiveClipper()
    for n in norms:
        threshold = clip.threshold
        out, _ = clip([np.array([n])])
        if threshold is not None:
            assert global_norm(out) <= threshold * (1 + 1e-12)


def test_early_stopping_patience():
    stop = EarlyStopping(patience=2)
    assert stop.update(50.0) == (True, False)
    assert stop.update(49.0) == (False, False)
    assert stop.update(50.0) == (False, False)
    assert stop.update(48.0) == (False, True)


def test_early_stopping_zero_patience():
    stop = EarlyStopping(patience=0)
    assert stop.update(1.0) == (True, False)
    assert stop.update(2.0) == (True, False)
    assert stop.update(2.0) == (False, True)


# -- full model ----------------------------------------------------------

def _model(lexicon, **kw):
    return randomize(Parser(micro_config(**kw), lexicon, seed=3), seed=4)


def _loss_fn(model, sentence, weights=None):
    def fn(*_):
        ls = model.losses(sentence)
        return total_loss(ls.labeler, ls.scorer, ls.tagger, weights)
    return fn


@pytest.mark.parametrize("kw", [
    {"attention": "soft"},
    {"attention": "hard"},
    {"attention": "soft", "pos": True, "layers": 2},
])
def test_full_model_gradient(toy_corpus, toy_lexicon, kw):
    model = _model(toy_lexicon, **kw)
    sentence = min(toy_corpus, key=len)
    assert finite_diff_check(_loss_fn(model, sentence), model.parameters()) < 1e-4


def _step_changes(model, sentence, weights):
    before = model.params.state()
    params = model.parameters()
    train_step(model, sentence, AdaDelta(params), AdaptiveClipper(), weights, np.random.default_rng(0))
    after = model.params.state()
    return {k for k in before if not np.array_equal(before[k], after[k])}


def test_hard_labeler_loss_leaves_scorer_untouched(toy_corpus, toy_lexicon):
    model = _model(toy_lexicon, attention="hard")
    changed = _step_changes(model, toy_corpus[0], LossWeights(1.0, 0.0, 0.0))
    assert not {k for k in changed if k.startswith("parser.scorer")}
    assert {k for k in changed if k.startswith("parser.labeler")}
    assert {k for k in changed if k.startswith("tagger.")}


def test_soft_labeler_loss_reaches_scorer(toy_corpus, toy_lexicon):
    model = _model(toy_lexicon, attention="soft")
    changed = _step_changes(model, toy_corpus[0], LossWeights(1.0, 0.0, 0.0))
    assert {k for k in changed if k.startswith("parser.scorer")}


def test_pos_loss_stops_at_branch_layer(toy_corpus, toy_lexicon):
    model = _model(toy_lexicon, pos=True, layers=2)
    changed = _step_changes(model, toy_corpus[0], LossWeights(0.0, 0.0, 1.0))
    assert not {k for k in changed if k.startswith(("parser.", "tagger.layer2."))}
    assert {k for k in changed if k.startswith("tagger.layer1.")}
    assert {k for k in changed if k.startswith("reader.")}


def test_pos_loss_is_mean_over_supervised_pairs(toy_corpus, toy_lexicon):
    model = _model(toy_lexicon, pos=True, layers=2)
    s = toy_corpus[0]
    ls = model.losses(s)
    expected_pairs = sum(len(t.feats) + 1 for t in s.tokens)
    assert ls.pos_pairs == expected_pairs
    assert np.isfinite(ls.tagger.item())


# -- training loop --------------------------------------------------------

def _fast_config(**kw):
    return ModelConfig.tiny(**kw)


def test_training_is_deterministic(toy_corpus):
    cfg = TrainConfig(epochs=1, seed=5)
    a = train(_fast_config(), toy_corpus[:6], toy_corpus[:3], cfg)
    b = train(_fast_config(), toy_corpus[:6], toy_corpus[:3], cfg)
    assert a.log == b.log
    c = train(_fast_config(), toy_corpus[:6], toy_corpus[:3], TrainConfig(epochs=1, seed=6))
    assert c.log[0]["loss"] != a.log[0]["loss"]


def test_log_records(toy_corpus, tmp_path):
    path = tmp_path / "log.jsonl"
    result = train(_fast_config(), toy_corpus[:4], toy_corpus[:2], TrainConfig(epochs=2), log_path=path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2 == len(result.log)
    rec = result.log[-1]
    for key in ("epoch", "loss", "loss_scorer", "loss_labeler", "dev_la", "dev_uas", "dev_las",
                "grad_norm_mean", "grad_norm_max", "clipped_steps", "cycle_rate", "multi_root_rate"):
        assert key in rec
    assert "loss_tagger" not in rec


def test_pos_head_adds_tagger_loss(toy_corpus):
    from podep.tagger import TaggerConfig
    cfg = _fast_config(tagger=TaggerConfig(layers=1, hidden=64, pos_head_enabled=True))
    result = train(cfg, toy_corpus[:4], toy_corpus[:2], TrainConfig(epochs=1))
    assert result.log[0]["loss_tagger"] > 0


def test_early_stopping_ends_training(toy_corpus):
    result = train(_fast_config(), toy_corpus[:3], toy_corpus[:2], TrainConfig(epochs=30, patience=0))
    assert len(result.log) < 30
    assert result.best_epoch >= 1


def test_invalid_trees_are_dropped(toy_corpus):
    cyclic = copy.deepcopy(toy_corpus[0])
    cyclic.tokens[0].head, cyclic.tokens[1].head = 2, 1
    for t in cyclic.tokens[2:]:
        t.head = 1
    kept, dropped = usable_sentences([toy_corpus[1], cyclic, Sentence([])])
    assert dropped == 2 and kept == [toy_corpus[1]]
    result = train(_fast_config(), [toy_corpus[1], cyclic], toy_corpus[:1], TrainConfig(epochs=1))
    assert result.dropped_sentences == 1


def test_empty_corpus_rejected(toy_corpus):
    with pytest.raises(ValueError, match="no usable"):
        train(_fast_config(), [], toy_corpus[:1], TrainConfig(epochs=1))
    bad = Sentence([Token(1, "x", head=1, deprel="root")])
    with pytest.raises(ValueError, match="no usable"):
        train(_fast_config(), [bad], toy_corpus[:1], TrainConfig(epochs=1))
