"""Network structure, memory-block arithmetic, and checkpoint format.

Frozen memory-block oracle, worked by hand: h = [1, 2, 3] (width 1),
one past and one future tap at stride 1, all tap weights 1, no skip:
out[0] = h0 + (h0 + h1) = 4, out[1] = (h1 + h0) + (h1 + h2) = 8,
out[2] = (h2 + h1) + h2 = 8.

Frozen desk parameter count, summed from the config by hand:
front end 200 + 1600 + 3200 + 2304 + 256(shortcut) + 4608 + 9216 = 21384,
blocks 4704 + 6752 + 7040 + 7040, heads 2 * (96*10 + 10) = 1940,
total 48860.
"""

import io
import math

import numpy as np
import pytest

from fsmnchain.errors import ConfigurationError, FormatError
from fsmnchain.gradcheck import grad_check
from fsmnchain.network import (
    BlockConfig,
    ConvLayerConfig,
    FrontEnd,
    FrontEndConfig,
    MemoryBlock,
    MemoryBlockSpec,
    Network,
    NetworkConfig,
    config_from_dict,
    config_to_dict,
    desk_config,
    desk_front_end,
    load_checkpoint,
    flagship_config,
    param_count,
    preset_config,
    receptive_field,
    save_checkpoint,
    skip_sources,
)
from fsmnchain.rng import Rng
from fsmnchain.tensor import Tensor


def memory_reference(h, a, c, s1, s2, skip=None, include_current=False):
    """Elementwise definition of the two-sided strided tap sum."""
    t_len, _ = h.shape
    out = np.zeros_like(h)
    if skip is not None:
        out += skip
    if include_current:
        out += h
    for t in range(t_len):
        for i in range(a.shape[0]):
            if t - s1 * i >= 0:
                out[t] += a[i] * h[t - s1 * i]
        for j in range(c.shape[0]):
            if t + s2 * j < t_len:
                out[t] += c[j] * h[t + s2 * j]
    return out


def random_matrix(rng, rows, cols, scale=1.0):
    return np.array([[scale * rng.gauss() for _ in range(cols)] for _ in range(rows)])


def tiny_config(rng, with_front_end=False, variant="pyramidal"):
    """Small random but valid config for property-style checks."""
    h = rng.randint(3, 5)
    num_blocks = rng.randint(1, 3)
    blocks = []
    prev = None
    for i in range(num_blocks):
        n1 = rng.randint(0, 2)
        n2 = rng.randint(0, 2)
        if prev is not None and (n1, n2) != prev:
            skip_depth = rng.randint(1, i) if i > 1 else 1
        else:
            skip_depth = 1
        blocks.append(
            BlockConfig(
                mem=MemoryBlockSpec(
                    n1=n1, n2=n2, s1=rng.randint(1, 2), s2=rng.randint(1, 2),
                    hidden_dim=h, skip_depth=skip_depth,
                ),
                proj_dim=3,
                relu_dim=3,
            )
        )
        prev = (n1, n2)
    front = None
    feature_dim = rng.randint(3, 6)
    if with_front_end:
        # Kernels stay >= 3: a 1x1 conv fed by a relu sees exact zeros, which
        # parks its pre-activations on the kink where central differences
        # are not a derivative.
        front = FrontEndConfig(
            layers=(
                ConvLayerConfig(kernel=3, channels=2),
                ConvLayerConfig(kernel=5, channels=3, subsample=True),
            )
        )
        feature_dim = rng.randint(2, 6)
    return NetworkConfig(
        feature_dim=feature_dim,
        output_dim=rng.randint(2, 4),
        blocks=tuple(blocks),
        front_end=front,
        variant=variant,
    )


# ---------------------------------------------------------------------------
# Memory block.


def test_memory_block_frozen_hand_case():
    spec = MemoryBlockSpec(n1=1, n2=1, s1=1, s2=1, hidden_dim=1)
    mb = MemoryBlock(spec)
    mb.a.values[:] = 1.0
    mb.c.values[:] = 1.0
    out = mb.forward(np.array([[1.0], [2.0], [3.0]]), None)
    assert np.array_equal(out, np.array([[4.0], [8.0], [8.0]]))


def test_memory_block_default_taps_average():
    spec = MemoryBlockSpec(n1=3, n2=1, s1=1, s2=1, hidden_dim=4)
    mb = MemoryBlock(spec)
    assert np.all(mb.a.values == 0.25)
    assert np.all(mb.c.values == 0.5)


def test_memory_block_matches_reference():
    for seed in range(8):
        rng = Rng(100 + seed)
        spec = MemoryBlockSpec(
            n1=rng.randint(0, 3), n2=rng.randint(0, 3),
            s1=rng.randint(1, 3), s2=rng.randint(1, 3),
            hidden_dim=rng.randint(1, 4),
        )
        include_current = seed % 2 == 1
        mb = MemoryBlock(spec, include_current=include_current)
        mb.a.values[:] = random_matrix(rng, spec.n1 + 1, spec.hidden_dim)
        mb.c.values[:] = random_matrix(rng, spec.n2 + 1, spec.hidden_dim)
        t_len = rng.randint(1, 6)
        h = random_matrix(rng, t_len, spec.hidden_dim)
        skip = random_matrix(rng, t_len, spec.hidden_dim) if seed % 3 == 0 else None
        out = mb.forward(h, skip)
        ref = memory_reference(
            h, mb.a.values, mb.c.values, spec.s1, spec.s2, skip, include_current
        )
        assert np.max(np.abs(out - ref)) < 1e-12


def test_memory_block_taps_beyond_length_drop_out():
    # T=2 with stride 3: only the order-0 taps can land inside the signal.
    spec = MemoryBlockSpec(n1=2, n2=2, s1=3, s2=3, hidden_dim=1)
    mb = MemoryBlock(spec)
    mb.a.values[:] = 1.0
    mb.c.values[:] = 1.0
    h = np.array([[1.0], [2.0]])
    assert np.array_equal(mb.forward(h, None), 2.0 * h)


def test_memory_block_gradients():
    rng = Rng(7)
    spec = MemoryBlockSpec(n1=2, n2=1, s1=1, s2=2, hidden_dim=3)
    mb = MemoryBlock(spec, include_current=True)
    h = Tensor(random_matrix(rng, 5, 3))
    skip = Tensor(random_matrix(rng, 5, 3))
    weights = random_matrix(rng, 5, 3)

    def run():
        out = mb.forward(h.values, skip.values)
        dh, dskip = mb.backward(weights)
        h.add_grad(dh)
        skip.add_grad(dskip)
        return float(np.sum(weights * out))

    report = grad_check(
        run, [h, skip, mb.a, mb.c], eps=(1e-4, 1e-5), tol=1e-6, atol=1e-10
    )
    assert report.passed, report.worst


def test_memory_block_shape_validation():
    mb = MemoryBlock(MemoryBlockSpec(n1=1, n2=1, s1=1, s2=1, hidden_dim=3))
    with pytest.raises(ConfigurationError):
        mb.forward(np.zeros((4, 2)), None)
    with pytest.raises(ConfigurationError):
        mb.forward(np.zeros((4, 3)), np.zeros((3, 3)))


def test_memory_spec_validation():
    with pytest.raises(ConfigurationError):
        MemoryBlockSpec(n1=-1, n2=0, s1=1, s2=1, hidden_dim=2)
    with pytest.raises(ConfigurationError):
        MemoryBlockSpec(n1=0, n2=0, s1=0, s2=1, hidden_dim=2)
    with pytest.raises(ConfigurationError):
        MemoryBlockSpec(n1=0, n2=0, s1=1, s2=1, hidden_dim=0)
    with pytest.raises(ConfigurationError):
        MemoryBlockSpec(n1=0, n2=0, s1=1, s2=1, hidden_dim=2, skip_depth=0)


# ---------------------------------------------------------------------------
# Wiring.


def test_desk_skip_sources_junction_at_order_change():
    assert skip_sources(desk_config()) == [-1, -1, 0, -1]


def test_dfsmn_chains_every_block():
    assert skip_sources(desk_config(variant="dfsmn")) == [-1, 0, 1, 2]


def test_equal_orders_have_no_junction():
    mem = MemoryBlockSpec(n1=1, n2=1, s1=1, s2=1, hidden_dim=4)
    blk = BlockConfig(mem=mem, proj_dim=2, relu_dim=2)
    cfg = NetworkConfig(feature_dim=3, output_dim=2, blocks=(blk, blk, blk))
    assert skip_sources(cfg) == [-1, -1, -1]


def test_skip_depth_below_first_block_rejected():
    mems = [
        MemoryBlockSpec(n1=1, n2=1, s1=1, s2=1, hidden_dim=4),
        MemoryBlockSpec(n1=2, n2=1, s1=1, s2=1, hidden_dim=4, skip_depth=2),
    ]
    with pytest.raises(ConfigurationError):
        NetworkConfig(
            feature_dim=3,
            output_dim=2,
            blocks=tuple(BlockConfig(mem=m, proj_dim=2, relu_dim=2) for m in mems),
        )


def test_network_config_validation():
    mem = MemoryBlockSpec(n1=1, n2=1, s1=1, s2=1, hidden_dim=4)
    blk = BlockConfig(mem=mem, proj_dim=2, relu_dim=2)
    with pytest.raises(ConfigurationError):
        NetworkConfig(feature_dim=3, output_dim=2, blocks=())
    with pytest.raises(ConfigurationError):
        NetworkConfig(feature_dim=3, output_dim=2, blocks=(blk,), variant="other")
    with pytest.raises(ConfigurationError):
        BlockConfig(mem=mem, proj_dim=2, relu_dim=3)
    other = BlockConfig(
        mem=MemoryBlockSpec(n1=1, n2=1, s1=1, s2=1, hidden_dim=5),
        proj_dim=2,
        relu_dim=2,
    )
    with pytest.raises(ConfigurationError):
        NetworkConfig(feature_dim=3, output_dim=2, blocks=(blk, other))


# ---------------------------------------------------------------------------
# Receptive field.


def test_desk_receptive_field_frozen():
    # Taps: past 2+2+4+4, future 1+1+2+2; conv halo 2+2+2+1+1+1 each side.
    assert receptive_field(desk_config()) == (21, 15)


def frames_outside_window_cannot_move_output(cfg, seed):
    past, future = receptive_field(cfg)
    rng = Rng(seed)
    t_len = past + future + 5
    t0 = past + 2
    base = random_matrix(rng, t_len, cfg.feature_dim)
    net = Network(cfg, Rng(seed + 1))
    ref = net.forward(base).chain[t0].copy()
    poked = base.copy()
    poked[: t0 - past] += 7.0
    poked[t0 + future + 1 :] -= 3.0
    again = net.forward(poked).chain[t0]
    assert np.array_equal(ref, again)
    # Sanity: a perturbation inside the window does reach the output.
    inside = base.copy()
    inside[t0] += 1.0
    assert not np.array_equal(ref, net.forward(inside).chain[t0])


def test_receptive_field_bounds_information_flow():
    rng = Rng(2024)
    for seed in range(4):
        cfg = tiny_config(rng, with_front_end=seed % 2 == 0, variant="pyramidal")
        frames_outside_window_cannot_move_output(cfg, 300 + seed)


def test_receptive_field_bounds_dfsmn_variant():
    rng = Rng(88)
    cfg = tiny_config(rng, with_front_end=False, variant="dfsmn")
    frames_outside_window_cannot_move_output(cfg, 91)


# ---------------------------------------------------------------------------
# Parameter count.


def test_desk_param_count_frozen():
    assert param_count(desk_config()) == 48860


def test_param_count_matches_instantiation():
    rng = Rng(55)
    cfgs = [
        desk_config(),
        desk_config(use_front_end=False),
        desk_config(variant="dfsmn"),
        tiny_config(rng, with_front_end=True),
        tiny_config(rng),
    ]
    for i, cfg in enumerate(cfgs):
        net = Network(cfg, Rng(i))
        assert param_count(cfg) == sum(t.values.size for _, t in net.params())


def test_growing_orders_cost_less_than_uniform_max_order():
    pyramid = flagship_config()
    top = max(b.mem.n1 for b in pyramid.blocks)
    uniform = NetworkConfig(
        feature_dim=pyramid.feature_dim,
        output_dim=pyramid.output_dim,
        blocks=tuple(
            BlockConfig(
                mem=MemoryBlockSpec(
                    n1=top, n2=top // 2, s1=b.mem.s1, s2=b.mem.s2,
                    hidden_dim=b.mem.hidden_dim, skip_depth=1,
                ),
                proj_dim=b.proj_dim,
                relu_dim=b.relu_dim,
            )
            for b in pyramid.blocks
        ),
        front_end=pyramid.front_end,
    )
    assert param_count(pyramid) < param_count(uniform)


# ---------------------------------------------------------------------------
# Front end.


def test_front_end_output_dims():
    fe = desk_front_end(32)
    assert fe.subsample_factor == 8
    assert fe.output_dim(8) == 32
    assert fe.shortcut_positions() == (3,)
    with pytest.raises(ConfigurationError):
        fe.output_dim(7)


def test_front_end_preserves_time_resolution():
    fe = FrontEnd(desk_front_end(32), 8, Rng(3))
    rng = Rng(4)
    for t_len in (1, 2, 9):
        out = fe.forward(random_matrix(rng, t_len, 8))
        assert out.shape == (t_len, 32)


def test_front_end_rejects_wrong_width():
    fe = FrontEnd(desk_front_end(32), 8, Rng(3))
    with pytest.raises(ConfigurationError):
        fe.forward(np.zeros((4, 9)))


def test_conv_layer_config_validation():
    with pytest.raises(ConfigurationError):
        ConvLayerConfig(kernel=4, channels=2)
    with pytest.raises(ConfigurationError):
        ConvLayerConfig(kernel=3, channels=0)
    with pytest.raises(ConfigurationError):
        FrontEndConfig(layers=())


# ---------------------------------------------------------------------------
# Whole network.


def test_network_forward_shapes_and_distinct_heads():
    cfg = desk_config()
    net = Network(cfg, Rng(0))
    rng = Rng(1)
    out = net.forward(random_matrix(rng, 7, 8))
    assert out.chain.shape == (7, 10)
    assert out.ce_logits.shape == (7, 10)
    assert not np.array_equal(out.chain, out.ce_logits)


def test_network_same_seed_same_output():
    cfg = desk_config(num_blocks=2, hidden_dim=12, bottleneck_dim=4)
    rng = Rng(17)
    feats = random_matrix(rng, 5, 8)
    a = Network(cfg, Rng(9)).forward(feats)
    b = Network(cfg, Rng(9)).forward(feats)
    assert np.array_equal(a.chain, b.chain)
    assert np.array_equal(a.ce_logits, b.ce_logits)


def test_network_variant_changes_output():
    feats = random_matrix(Rng(2), 5, 8)
    base = desk_config(num_blocks=2, hidden_dim=8, bottleneck_dim=4,
                       use_front_end=False)
    alt = desk_config(num_blocks=2, hidden_dim=8, bottleneck_dim=4,
                      use_front_end=False, variant="dfsmn")
    a = Network(base, Rng(3)).forward(feats)
    b = Network(alt, Rng(3)).forward(feats)
    assert not np.array_equal(a.chain, b.chain)


def test_network_input_validation():
    net = Network(desk_config(), Rng(0))
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros((4, 7)))
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros((0, 8)))
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros(8))


def draw_features_clear_of_kinks(net, rng, t_len, scale=0.8, need=2e-3):
    """Redraw until every relu pre-activation clears the largest probe step."""
    for _ in range(12):
        feats = random_matrix(rng, t_len, net.cfg.feature_dim, scale=scale)
        net.forward(feats, track_relu_margin=True)
        if net.last_relu_margin > need:
            return feats
    raise AssertionError("could not draw features clear of relu kinks")


def test_network_gradients_desk_shaped():
    cfg = desk_config(num_blocks=2, hidden_dim=10, bottleneck_dim=4)
    net = Network(cfg, Rng(21))
    rng = Rng(22)
    feats = draw_features_clear_of_kinks(net, rng, 5)
    w_chain = random_matrix(rng, 5, 10)
    w_ce = random_matrix(rng, 5, 10)

    def run():
        out = net.forward(feats)
        net.backward(w_chain, w_ce)
        return float(np.sum(w_chain * out.chain) + np.sum(w_ce * out.ce_logits))

    params = [t for _, t in net.params()]
    report = grad_check(
        run, params, eps=(1e-3, 1e-4, 1e-5), tol=1e-5, rng=Rng(23),
        max_coords=40, atol=1e-10,
    )
    assert report.passed, report.worst


def test_network_gradients_random_tiny_configs():
    outer = Rng(500)
    for case in range(6):
        variant = "dfsmn" if case % 3 == 2 else "pyramidal"
        cfg = tiny_config(outer, with_front_end=case % 2 == 1, variant=variant)
        net = Network(cfg, Rng(600 + case))
        rng = Rng(700 + case)
        t_len = rng.randint(3, 6)
        feats = draw_features_clear_of_kinks(net, rng, t_len)
        w_chain = random_matrix(rng, t_len, cfg.output_dim)

        def run():
            out = net.forward(feats)
            net.backward(w_chain, None)
            return float(np.sum(w_chain * out.chain))

        params = [t for _, t in net.params()]
        report = grad_check(
            run, params, eps=(1e-3, 1e-4, 1e-5), tol=1e-5, rng=Rng(800 + case),
            max_coords=24, atol=1e-10,
        )
        assert report.passed, f"case {case}: {report.worst}"


def test_zero_grad_clears_accumulators():
    cfg = desk_config(num_blocks=1, hidden_dim=6, bottleneck_dim=3,
                      use_front_end=False)
    net = Network(cfg, Rng(1))
    out = net.forward(random_matrix(Rng(2), 4, 8))
    net.backward(np.ones_like(out.chain), None)
    assert any(np.any(t.grad != 0.0) for _, t in net.params())
    net.zero_grad()
    assert all(np.all(t.grad == 0.0) for _, t in net.params())


def test_relu_margin_tracking():
    net = Network(desk_config(), Rng(5))
    net.forward(random_matrix(Rng(6), 4, 8), track_relu_margin=True)
    assert math.isfinite(net.last_relu_margin)
    assert net.last_relu_margin >= 0.0


# ---------------------------------------------------------------------------
# Presets, config dicts, checkpoints.


def test_preset_lookup():
    assert preset_config("desk") == desk_config()
    assert preset_config("desk", num_blocks=2) == desk_config(num_blocks=2)
    assert preset_config("flagship") == flagship_config()
    with pytest.raises(ConfigurationError):
        preset_config("giant")


def test_config_dict_roundtrip():
    for cfg in (desk_config(), desk_config(use_front_end=False, variant="dfsmn")):
        assert config_from_dict(config_to_dict(cfg)) == cfg
    with pytest.raises(FormatError):
        config_from_dict({"feature_dim": 8})


def test_checkpoint_roundtrip_bitwise():
    cfg = desk_config(num_blocks=2, hidden_dim=10, bottleneck_dim=4)
    net = Network(cfg, Rng(31))
    feats = random_matrix(Rng(32), 6, 8)
    want = net.forward(feats)
    buf = io.BytesIO()
    save_checkpoint(buf, net)
    buf.seek(0)
    loaded = load_checkpoint(buf, expected_config=cfg)
    for (name_a, ta), (name_b, tb) in zip(net.params(), loaded.params()):
        assert name_a == name_b
        assert np.array_equal(ta.values, tb.values)
    got = loaded.forward(feats)
    assert np.array_equal(want.chain, got.chain)
    assert np.array_equal(want.ce_logits, got.ce_logits)


def test_checkpoint_file_roundtrip(tmp_path):
    cfg = desk_config(num_blocks=1, hidden_dim=6, bottleneck_dim=3,
                      use_front_end=False)
    net = Network(cfg, Rng(41))
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, net)
    loaded = load_checkpoint(path)
    assert np.array_equal(net.params()[0][1].values, loaded.params()[0][1].values)


def test_checkpoint_rejects_wrong_expected_config():
    cfg = desk_config(num_blocks=1, hidden_dim=6, bottleneck_dim=3,
                      use_front_end=False)
    buf = io.BytesIO()
    save_checkpoint(buf, Network(cfg, Rng(1)))
    buf.seek(0)
    other = desk_config(num_blocks=2, hidden_dim=6, bottleneck_dim=3,
                        use_front_end=False)
    with pytest.raises(ConfigurationError):
        load_checkpoint(buf, expected_config=other)


def test_checkpoint_detects_header_tamper():
    cfg = desk_config(num_blocks=1, hidden_dim=6, bottleneck_dim=3,
                      use_front_end=False)
    buf = io.BytesIO()
    save_checkpoint(buf, Network(cfg, Rng(1)))
    raw = bytearray(buf.getvalue())
    # Flip one digit inside the stored output_dim; the hash no longer matches.
    idx = raw.find(b'"output_dim": 10')
    assert idx > 0
    raw[idx + len(b'"output_dim": 1')] = ord("2")
    with pytest.raises(ConfigurationError):
        load_checkpoint(io.BytesIO(bytes(raw)))


def test_checkpoint_bad_magic_and_truncation():
    cfg = desk_config(num_blocks=1, hidden_dim=6, bottleneck_dim=3,
                      use_front_end=False)
    buf = io.BytesIO()
    save_checkpoint(buf, Network(cfg, Rng(1)))
    data = buf.getvalue()
    with pytest.raises(FormatError):
        load_checkpoint(io.BytesIO(b"XXXX" + data[4:]))
    with pytest.raises(FormatError):
        load_checkpoint(io.BytesIO(data[:6]))
    with pytest.raises(FormatError):
        load_checkpoint(io.BytesIO(data[:40]))
