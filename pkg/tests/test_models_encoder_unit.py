import numpy as np
import pytest
from pydantic import ValidationError

from transamba.core.checkpoint import load_checkpoint, save_checkpoint
from transamba.core.config import LayerDesign, ModelConfig, Variant
from transamba.core.gradcheck import gradcheck
from transamba.core.protocol import ClassScores
from transamba.core.tensor import Tensor
from transamba.models.encoder import (
    ClassificationHead,
    Encoder,
    PatchEmbed,
    compute_pos_weight,
    gwrp,
    training_loss,
)


def roughen(params, rng, scale=0.3):
    # move weights away from the small-init regime so every path carries signal
    for p in params:
        p.data = p.data + rng.normal(scale=scale, size=p.shape).astype(p.dtype)


def volumes_for(config, rng, groups=2):
    return rng.uniform(size=(groups, config.planes, config.image_height, config.image_width))


def test_patch_embed_shapes(rng):
    config = ModelConfig(model_dim=16, heads=4, patch_size=8, image_height=32, image_width=32)
    tokens = PatchEmbed(config, rng)(Tensor(rng.uniform(size=(3, 32, 32))))
    assert config.num_patches == 16
    assert tokens.shape == (3, 17, 16)


def test_zero_image_gives_positional_embeddings(tiny_config, rng):
    embed = PatchEmbed(tiny_config, rng)
    tokens = embed(Tensor(np.zeros((1, 8, 8)))).data
    pos = embed.pos_embed.data[0]
    assert np.allclose(tokens[0, 1:], pos[1:])
    assert np.allclose(tokens[0, 0], embed.cls_token.data[0, 0] + pos[0])


def test_patch_embed_is_local(tiny_config, rng):
    embed = PatchEmbed(tiny_config, rng)
    image = rng.uniform(size=(1, 8, 8))
    other = image.copy()
    other[0, 4:8, 0:4] += 1.0  # patch (1, 0) -> token 1 + 2
    a, b = embed(Tensor(image)).data[0], embed(Tensor(other)).data[0]
    differs = [not np.array_equal(a[i], b[i]) for i in range(a.shape[0])]
    assert differs == [i == 3 for i in range(a.shape[0])]


def test_indivisible_extents_are_rejected(tiny_config, rng):
    with pytest.raises(ValidationError):
        ModelConfig(image_height=30, image_width=32, patch_size=8)
    with pytest.raises(ValueError, match="not divisible"):
        PatchEmbed(tiny_config, rng)(Tensor(np.zeros((1, 9, 8))))


def test_gwrp_worked_example(f64):
    assert gwrp(Tensor([[3.0, 1.0, 2.0]]), 0.5).item() == pytest.approx(4.25 / 1.75, abs=1e-4)


def test_gwrp_limits(rng, f64):
    x = rng.uniform(size=(4, 7))
    assert np.allclose(gwrp(Tensor(x), 1.0).data, x.mean(axis=-1), atol=1e-7)
    assert np.allclose(gwrp(Tensor(x), 1e-6).data, x.max(axis=-1), atol=1e-6)


def test_gwrp_rejects_bad_decay():
    with pytest.raises(ValueError):
        gwrp(Tensor([[1.0, 2.0]]), 0.0)


def test_gwrp_gradcheck(f64):
    x = Tensor([[0.9, -0.4, 0.1, 0.5], [0.0, 1.2, -1.0, 0.6]], requires_grad=True)
    assert gradcheck(lambda: (gwrp(x, 0.5) * Tensor([1.0, -2.0])).sum(), [x])["0"] < 1e-5


def test_class_branch_is_mean_of_class_token(tiny_config, rng):
    head = ClassificationHead(tiny_config, rng)
    tokens = rng.normal(size=(2, 5, tiny_config.model_dim))
    tokens[0, 0, :] = 0.75
    tokens[1, 0, :] = -2.0
    scores, conv_map = head(Tensor(tokens))
    assert np.allclose(scores.y_class.data, [0.75, -2.0])
    assert conv_map.shape == (2, 4)


def test_loss_examples(f64):
    zero = ClassScores(y_class=Tensor([0.0]), y_patch=Tensor([0.0]))
    assert training_loss(zero, np.array([1.0])).item() == pytest.approx(2 * np.log(2.0))

    perfect = ClassScores(y_class=Tensor([20.0, -20.0]), y_patch=Tensor([20.0, -20.0]))
    assert training_loss(perfect, np.array([1.0, 0.0])).item() < 1e-6


def test_pos_weight_from_label_counts():
    assert compute_pos_weight([1, 0, 0, 0] * 5) == pytest.approx(3.0)
    assert compute_pos_weight([1] * 10 + [0]) == pytest.approx(0.1)
    assert compute_pos_weight([0] * 200 + [1]) == pytest.approx(10.0)
    assert compute_pos_weight([0, 0, 0]) == pytest.approx(10.0)


def test_encoder_output_shapes(tiny_config, rng):
    model = Encoder(tiny_config)
    out = model(volumes_for(tiny_config, rng, groups=3))
    assert out.scores.y_class.shape == (6,)
    assert out.scores.y_patch.shape == (6,)
    assert out.patch_logits.shape == (3, 2, 4)
    assert out.tokens.shape == (3, 2, 5, 8)
    assert len(out.attention) == tiny_config.layers
    for att in out.attention:
        assert att.shape == (3, 2, 5, 5)
        assert np.allclose(att.sum(axis=-1), 1.0, atol=1e-6)
    assert model(volumes_for(tiny_config, rng), capture_attention=False).attention is None


def test_records_are_indexed_by_layer_then_plane(tiny_config, rng):
    out = Encoder(tiny_config)(volumes_for(tiny_config, rng))
    records = out.records(volume=1)
    assert [[(r.layer, r.plane) for r in layer] for layer in records] == [[(0, 0), (0, 1)], [(1, 0), (1, 1)]]
    for layer in records:
        for record in layer:
            record.check()


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("design", list(LayerDesign))
def test_every_variant_and_design_runs(variant, design, tiny_config, rng):
    config = tiny_config.model_copy(update={"variant": variant, "layer_design": design})
    out = Encoder(config)(volumes_for(config, rng))
    assert np.all(np.isfinite(out.scores.y_class.data))
    assert np.all(np.isfinite(out.scores.y_patch.data))
    assert (out.attention is None) == (not variant.has_attention)


@pytest.mark.parametrize("design", list(LayerDesign))
def test_zero_cpm_output_projection_reduces_to_v1(design, tiny_config, rng):
    v3 = Encoder(tiny_config.model_copy(update={"variant": Variant.V3, "layer_design": design}))
    v1 = Encoder(tiny_config.model_copy(update={"variant": Variant.V1, "layer_design": design}))
    for block in v3.cpm:
        block.mamba.out_proj.weight.data[...] = 0.0
    x = volumes_for(tiny_config, rng)
    a, b = v3(x), v1(x)
    assert np.array_equal(a.scores.y_class.data, b.scores.y_class.data)
    assert np.array_equal(a.scores.y_patch.data, b.scores.y_patch.data)
    for att_a, att_b in zip(a.attention, b.attention):
        assert np.array_equal(att_a, att_b)


def test_v2_equals_v3_with_one_plane(tiny_config, rng, f64):
    config = tiny_config.model_copy(update={"planes": 1})
    v2 = Encoder(config.model_copy(update={"variant": Variant.V2}))
    v3 = Encoder(config.model_copy(update={"variant": Variant.V3}))
    for a, b in zip(v2.parameters(), v3.parameters()):
        assert np.array_equal(a.data, b.data)
    x = volumes_for(config, rng, groups=3)
    assert np.allclose(v2(x).scores.y_class.data, v3(x).scores.y_class.data)
    assert np.allclose(v2(x).scores.y_patch.data, v3(x).scores.y_patch.data)


def test_parameter_count_ordering(tiny_config):
    counts = {v: Encoder(tiny_config.model_copy(update={"variant": v})).num_parameters() for v in Variant}
    assert counts[Variant.V2] == counts[Variant.V3]
    assert counts[Variant.V3] > counts[Variant.V1]
    assert counts[Variant.V5] > counts[Variant.V1]


def test_v1_is_plane_permutation_equivariant(tiny_config, rng):
    config = tiny_config.model_copy(update={"variant": Variant.V1, "planes": 4})
    model = Encoder(config)
    roughen(model.parameters(), rng)
    x = volumes_for(config, rng, groups=1)
    perm = np.array([2, 0, 3, 1])
    base = model(x).scores.y_class.data
    permuted = model(x[:, perm]).scores.y_class.data
    assert np.allclose(permuted, base[perm], atol=1e-6)


def test_v3_depends_on_plane_order(tiny_config, rng):
    config = tiny_config.model_copy(update={"variant": Variant.V3, "planes": 4})
    model = Encoder(config)
    roughen(model.parameters(), rng)
    x = volumes_for(config, rng, groups=1)
    perm = np.array([3, 2, 1, 0])
    base = model(x).scores.y_class.data
    permuted = model(x[:, perm]).scores.y_class.data
    assert not np.allclose(permuted, base[perm], atol=1e-6)


def test_designs_are_distinct_functions(tiny_config, rng):
    x = volumes_for(tiny_config, rng)
    scores = []
    for design in LayerDesign:
        model = Encoder(tiny_config.model_copy(update={"layer_design": design}))
        roughen(model.parameters(), np.random.default_rng(3))
        scores.append(model(x).scores.y_patch.data)
    assert not np.allclose(scores[0], scores[1])
    assert not np.allclose(scores[1], scores[2])


def test_cross_plane_attention_variant_fixes_plane_count(tiny_config, rng):
    model = Encoder(tiny_config.model_copy(update={"variant": Variant.V5}))
    with pytest.raises(ValueError, match="sequence length"):
        model(rng.uniform(size=(1, 3, 8, 8)))


def test_in_plane_blocks_fix_the_token_count(tiny_config, rng):
    model = Encoder(tiny_config.model_copy(update={"variant": Variant.V1}))
    block = model.xformer[0]
    assert block.seq_len == 1 + tiny_config.num_patches
    with pytest.raises(ValueError, match="sequence length"):
        block(Tensor(rng.normal(size=(2, tiny_config.num_patches + 3, tiny_config.model_dim))))


def test_mamba_prenorm_switch(tiny_config):
    normed = dict(Encoder(tiny_config).named_parameters())
    bare = dict(Encoder(tiny_config.model_copy(update={"mamba_prenorm": False})).named_parameters())
    assert "cpm.0.norm.weight" in normed
    assert set(normed) - set(bare) == {f"cpm.{i}.norm.{p}" for i in range(2) for p in ("weight", "bias")}


def test_checkpoint_names_and_round_trip(tiny_config, rng, tmp_path):
    model = Encoder(tiny_config)
    state = model.state_dict()
    names = list(state)
    assert names[:4] == ["embed.proj_weight", "embed.proj_bias", "embed.cls_token", "embed.pos_embed"]
    assert "cpm.1.mamba.A_log" in names and "xformer.0.qkv.weight" in names
    assert names[-2:] == ["head.conv_weight", "head.conv_bias"]

    path = save_checkpoint(tmp_path / "model.tsck", state)
    loaded = load_checkpoint(path)
    assert list(loaded) == names
    clone = Encoder(tiny_config.model_copy(update={"init_seed": 99}))
    clone.load_state_dict(loaded)
    x = volumes_for(tiny_config, rng)
    assert np.array_equal(clone(x).scores.y_class.data, model(x).scores.y_class.data)


def test_end_to_end_gradcheck(tiny_config, rng, f64):
    model = Encoder(tiny_config)
    assert tiny_config.gwrp_decay == 0.99
    roughen(model.parameters(), rng)
    x = Tensor(volumes_for(tiny_config, rng, groups=1))
    labels = np.array([1.0, 0.0])
    params = dict(model.named_parameters())
    assert all(p.dtype == np.float64 for p in params.values())
    errors = gradcheck(
        lambda: training_loss(model(x, capture_attention=False).scores, labels, pos_weight=1.5),
        params,
    )
    assert set(errors) == set(params)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-5, f"{worst}: {errors[worst]}"
