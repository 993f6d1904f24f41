import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from newsfusion.textenc import (
    BackboneConfig,
    ClassifierHead,
    EncoderOutput,
    HashTokenizer,
    HeadConfig,
    TextClassifier,
    build_backbone,
    check_selection,
    concat_cls,
    encode,
    ensemble_block_variants,
    head_forward,
    parse_blocks,
    predict_proba,
)


def _toy(n_blocks=12, hidden=32, seed=0):
    return build_backbone(BackboneConfig(kind="toy", n_blocks=n_blocks, hidden=hidden, seed=seed))


@pytest.mark.parametrize(
    "spec, expected",
    [("1-6", tuple(range(1, 7))), ("6-12", tuple(range(6, 13))), ("9,10,11,12", (9, 10, 11, 12)), ("1-3,12", (1, 2, 3, 12))],
)
def test_parse_blocks(spec, expected):
    assert parse_blocks(spec) == expected


@pytest.mark.parametrize("spec", ["", "5-2", "a-b"])
def test_parse_blocks_rejects(spec):
    with pytest.raises(ValueError):
        parse_blocks(spec)


def test_selection_bounds():
    with pytest.raises(IndexError):
        check_selection([0, 3], 12)
    with pytest.raises(IndexError):
        check_selection([13], 12)
    with pytest.raises(ValueError):
        check_selection([], 12)


def test_toy_encode_shapes():
    out = encode(_toy(), ["a", "b c", "d", "", "e f g"])
    assert len(out) == 5 and all(o.cls_states.shape == (12, 32) for o in out)


def test_empty_text_is_cls_only():
    tokens, mask = HashTokenizer()([""], 10)
    assert tokens.tolist() == [[1]] and mask.tolist() == [[True]]
    assert np.all(np.isfinite(encode(_toy(), [""])[0].cls_states))


def test_identical_texts_identical_rows():
    out = encode(_toy(), ["tin giả lan truyền", "khác", "tin giả lan truyền"])
    assert np.array_equal(out[0].cls_states, out[2].cls_states)


def test_backbone_seeded():
    a, b, c = _toy(seed=1), _toy(seed=1), _toy(seed=2)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


def test_concat_selects_rows_in_order():
    states = np.arange(12 * 4, dtype=float).reshape(12, 4)
    assert np.array_equal(concat_cls(states, [3]), states[2])
    assert np.array_equal(concat_cls(EncoderOutput(states), [12, 1]), np.concatenate([states[0], states[11]]))


@given(st.sets(st.integers(1, 12), min_size=1))
def test_concat_dims_pretrained_width(sel):
    states = np.zeros((12, 768))
    assert concat_cls(states, sel).shape == (len(sel) * 768,)


def test_concat_reference_dims():
    states = np.zeros((12, 768))
    assert concat_cls(states, parse_blocks("1-12")).shape == (9216,)
    assert concat_cls(states, parse_blocks("6-12")).shape == (5376,)
    batched = torch.zeros(3, 12, 32)
    assert concat_cls(batched, parse_blocks("1-6")).shape == (3, 192)


def test_head_zero_case_and_shapes():
    head = ClassifierHead(64, HeadConfig(hidden=16))
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    feats, logits = head_forward(head, torch.zeros(5, 64))
    assert feats.shape == (5, 16) and logits.shape == (5, 2) and torch.all(logits == 0)
    with pytest.raises(ValueError):
        head_forward(head, torch.zeros(5, 63))


def test_classifier_head_input_dim():
    model = TextClassifier(_toy(), parse_blocks("1-6"))
    assert model.head_input_dim == 6 * 32
    logits = model.logits(model.make_inputs(["x", "y z"]))
    assert logits.shape == (2, 2)


def test_layer_groups_cover_all_params():
    model = TextClassifier(_toy(n_blocks=3), (1, 2, 3))
    grouped = [n for _, names in model.layer_groups() for n in names]
    assert sorted(grouped) == sorted(n for n, _ in model.named_parameters())
    assert [g for g, _ in model.layer_groups()] == ["head", "block_3", "block_2", "block_1", "embeddings"]


def test_ensemble_of_duplicates_and_average():
    torch.manual_seed(0)
    model = TextClassifier(_toy(n_blocks=2), (1, 2))
    texts = ["a b", "c", "d e f"]
    single = predict_proba(model, model.make_inputs(texts))
    assert np.allclose(ensemble_block_variants([model, model], texts), single)

    class Fixed(torch.nn.Module):
        def __init__(self, p):
            super().__init__()
            self.p = p

        def logits(self, batch):
            n = batch["x"].shape[0]
            return torch.log(torch.tensor([[1 - self.p, self.p]] * n))

    inputs = {"x": torch.zeros(1)}
    assert ensemble_block_variants([Fixed(0.2), Fixed(0.8)], inputs) == pytest.approx([0.5])
    with pytest.raises(ValueError):
        ensemble_block_variants([], inputs)


def test_pretrained_missing_checkpoint():
    with pytest.raises(FileNotFoundError):
        build_backbone(BackboneConfig.pretrained("/nonexistent/encoder"))


def test_pretrained_adapter_local_checkpoint(tmp_path):
    transformers = pytest.importorskip("transformers")
    cfg = transformers.BertConfig(
        vocab_size=200, hidden_size=24, num_hidden_layers=3, num_attention_heads=2, intermediate_size=32
    )
    torch.manual_seed(0)
    transformers.BertModel(cfg).save_pretrained(tmp_path / "tiny")
    bb = build_backbone(BackboneConfig.pretrained(str(tmp_path / "tiny"), max_sequence_length=16))
    assert (bb.n_blocks, bb.hidden) == (3, 24)
    out = encode(bb, ["xin chào", "tin"])
    assert out[0].cls_states.shape == (3, 24)
    model = TextClassifier(bb, (2, 3))
    assert model.head_input_dim == 48
    grouped = [n for _, names in model.layer_groups() for n in names]
    assert sorted(grouped) == sorted(n for n, _ in model.named_parameters())
