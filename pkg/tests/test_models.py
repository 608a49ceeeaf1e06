import numpy as np
import pytest

from liwn.audit import count_params
from liwn.gradcheck import check_network
from liwn.models import (GraphError, LayerSpec, ModelGraph, Network, apply_inv_swaps,
                         build_reference_vgg, build_scatnet, build_scatnet_mini,
                         build_scatter_linear, learned_layer_count)
from liwn.scattering import scatter


class TestReferenceVGG:
    def test_channel_sequence(self):
        g = build_reference_vgg("cifar10", C=64)
        convs = [s for s in g.layers if s.kind == "conv"]
        assert [s.name for s in convs] == [f"conv{t}" for t in "ABCDEF"]
        assert [s["c_out"] for s in convs] == [64, 64, 128, 128, 256, 256]
        assert g.layer("fc")["n_out"] == 10

    def test_table_shapes(self):
        g = build_reference_vgg("cifar100", C=64)
        shapes = dict(zip(g.names(), g.shapes()))
        outs = [shapes[f"conv{t}"][1] for t in "ABCDEF"]
        assert outs == [(64, 32, 32), (64, 32, 32), (128, 16, 16), (128, 16, 16),
                        (256, 8, 8), (256, 8, 8)]
        assert shapes["fc"][1] == (100,)

    def test_maxpool_variant_same_shapes(self):
        a = build_reference_vgg(C=8)
        b = build_reference_vgg(C=8, downsample="maxpool")
        assert a.shapes()[-1] == b.shapes()[-1]
        assert all(s.get("stride", 1) == 1 for s in b.layers if s.kind == "conv")
        assert sum(s.kind == "maxpool" for s in b.layers) == 2

    def test_param_count_hand_sum(self):
        widths = [3, 64, 64, 128, 128, 256, 256]
        conv = sum(9 * a * b for a, b in zip(widths, widths[1:]))
        bn = sum(2 * c for c in widths[1:])
        fc = 256 * 10 + 10
        assert count_params(build_reference_vgg()).total_params == conv + bn + fc == 1148874

    def test_forward_batch(self, rng):
        net = Network(build_reference_vgg(), seed=0)
        logits = net.forward(rng.standard_normal((128, 3, 32, 32)).astype(np.float32))
        assert logits.shape == (128, 10)
        assert logits.dtype == np.float32

    def test_bad_arguments(self):
        with pytest.raises(GraphError):
            build_reference_vgg("imagenet")
        with pytest.raises(GraphError):
            build_reference_vgg(downsample="avgpool")


class TestSwaps:
    def test_swap_b_and_d(self):
        ref = build_reference_vgg()
        g = apply_inv_swaps(ref, "BD")
        assert "convB" not in g.names() and "convD" not in g.names()
        assert g.layer("invB").kind == "inv" and g.layer("invD")["c_out"] == 128
        assert [s[1] for s in g.shapes()] == [s[1] for s in ref.shapes()]
        assert g.name.endswith("-invBD")

    def test_no_swaps(self):
        ref = build_reference_vgg()
        g = apply_inv_swaps(ref, "")
        assert g.to_text() == ref.to_text()

    def test_param_delta(self):
        ref = count_params(build_reference_vgg())
        swapped = count_params(apply_inv_swaps(build_reference_vgg(), "B"))
        assert ref.row("convB").params == 36864
        assert swapped.row("invB").params == 28672
        assert ref.total_params - swapped.total_params == 36864 - 28672

    def test_downsampling_slot(self):
        g = apply_inv_swaps(build_reference_vgg(), "C")
        assert g.layer("invC")["upsample"] == 0
        assert apply_inv_swaps(build_reference_vgg(), "A").layer("invA")["upsample"] == 1

    def test_unknown_slot(self):
        with pytest.raises(GraphError):
            apply_inv_swaps(build_reference_vgg(), "G")


class TestScatNet:
    def test_scattering_output(self):
        g = build_scatnet("A")
        shapes = dict(zip(g.names(), g.shapes()))
        assert shapes["scat2"][1] == (147, 8, 8)

    @pytest.mark.parametrize("variant,count", [("A", 4), ("B", 6), ("C", 5), ("D", 7)])
    def test_learned_counts(self, variant, count):
        assert learned_layer_count(build_scatnet(variant)) == count

    def test_front_conv_widths(self):
        g = build_scatnet("D")
        shapes = dict(zip(g.names(), g.shapes()))
        assert shapes["conv0"][1] == (16, 32, 32)
        assert shapes["scat1"][1][0] == 112
        assert shapes["scat2"][1][0] == 784

    def test_learned_mixing_is_square(self):
        g = build_scatnet("B")
        assert (g.layer("scat1")["c_in"] * 7, g.layer("scat1")["c_out"]) == (21, 21)
        assert (g.layer("scat2")["c_in"] * 7, g.layer("scat2")["c_out"]) == (147, 147)

    def test_conv_widths_and_dropout(self):
        g = build_scatnet("A", conv_width=96)
        assert [g.layer(f"conv{t}")["c_out"] for t in "CDEF"] == [192, 192, 384, 384]
        assert [g.layer(f"drop{t}")["p"] for t in "CDEF"] == [0.3] * 4

    def test_fixed_network_reproduces_scattering(self, rng):
        g = build_scatnet("A", conv_width=8)
        net = Network(g, dtype=np.float64)
        x = rng.standard_normal((2, 3, 32, 32))
        np.testing.assert_allclose(net.truncated_forward(x, "scat2"), scatter(x), atol=1e-10)

    def test_unknown_variant(self):
        with pytest.raises(GraphError):
            build_scatnet("E")

    def test_mini(self):
        g = build_scatnet_mini("B")
        assert g.layer("convC")["c_out"] == 32
        assert g.name == "scatnet-B-mini"


class TestGraphText:
    @pytest.mark.parametrize("builder", [
        lambda: build_reference_vgg(),
        lambda: apply_inv_swaps(build_reference_vgg(), "BE"),
        lambda: build_scatnet("D"),
        lambda: build_scatter_linear(),
    ])
    def test_round_trip(self, builder):
        g = builder()
        h = ModelGraph.from_text(g.to_text())
        assert h.to_text() == g.to_text()
        assert count_params(h).total_params == count_params(g).total_params

    def test_comments_and_blank_lines(self):
        text = "# a comment\n\n" + build_scatter_linear().to_text()
        assert ModelGraph.from_text(text).names() == build_scatter_linear().names()

    def test_rejects_bad_text(self):
        with pytest.raises(GraphError):
            ModelGraph.from_text("convA conv c_in=3\n")
        with pytest.raises(GraphError):
            ModelGraph.from_text("graph name=x classes=10\n")
        with pytest.raises(GraphError):
            LayerSpec.from_line("convA conv c_in")

    def test_validation(self):
        g = build_scatter_linear()
        dup = g.copy()
        dup.layers[1].name = "scat1"
        with pytest.raises(GraphError, match="unique"):
            dup.shapes()
        bad = g.copy()
        bad.layers[0].attrs["c_in"] = 4
        with pytest.raises(GraphError):
            bad.shapes()
        odd = g.copy()
        odd.layers.append(LayerSpec("extra", "softmax"))
        with pytest.raises(GraphError, match="unknown"):
            odd.shapes()
        wrong = g.copy()
        wrong.classes = 3
        with pytest.raises(GraphError):
            wrong.shapes()


class TestNetwork:
    def test_state_round_trip(self, rng):
        g = build_scatnet_mini("B", conv_width=4)
        a, b = Network(g, seed=1), Network(g, seed=2)
        x = rng.standard_normal((2, 3, 32, 32)).astype(np.float32)
        assert not np.array_equal(a.forward(x), b.forward(x))
        b.load_state(a.state())
        np.testing.assert_array_equal(a.forward(x), b.forward(x))

    def test_load_state_checks(self):
        net = Network(build_scatter_linear())
        state = net.state()
        state.pop("fc.W")
        with pytest.raises(KeyError):
            net.load_state(state)
        net.load_state(state, strict=False)
        state["fc.W"] = np.zeros((3, 3))
        with pytest.raises(ValueError):
            net.load_state(state)

    def test_seed_determinism(self, rng):
        g = build_reference_vgg(C=4)
        x = rng.standard_normal((2, 3, 32, 32))
        np.testing.assert_array_equal(Network(g, 5).forward(x), Network(g, 5).forward(x))

    def test_dropout_reseed(self, rng):
        net = Network(build_scatnet_mini("A", conv_width=4))
        x = rng.standard_normal((2, 3, 32, 32))
        net.reseed_dropout([3, 1])
        a = net.forward(x, train=True)
        net.reseed_dropout([3, 1])
        np.testing.assert_array_equal(net.forward(x, train=True), a)

    def test_predict(self, rng):
        net = Network(build_scatter_linear())
        x = rng.standard_normal((5, 3, 32, 32))
        np.testing.assert_array_equal(net.predict(x, batch=2), net.forward(x).argmax(1))


@pytest.mark.parametrize("name,graph", [
    ("ref", build_reference_vgg(C=4, input_hw=(16, 16))),
    ("ref-maxpool", build_reference_vgg(C=4, downsample="maxpool", input_hw=(16, 16))),
    ("ref-invB", apply_inv_swaps(build_reference_vgg(C=4, input_hw=(16, 16)), "B")),
    ("ref-invCF", apply_inv_swaps(build_reference_vgg(C=4, input_hw=(16, 16)), "CF")),
    ("scatnet-A", build_scatnet("A", conv_width=4, input_hw=(16, 16))),
    ("scatnet-B", build_scatnet("B", conv_width=4, input_hw=(16, 16))),
    ("scatnet-C", build_scatnet("C", conv_width=4, input_hw=(16, 16), front_channels=2)),
    ("scatnet-D", build_scatnet("D", conv_width=4, input_hw=(16, 16), front_channels=2)),
    ("scatter-linear", build_scatter_linear(input_hw=(16, 16))),
])
def test_full_graph_gradients(name, graph):
    net = Network(graph, seed=0, dtype=np.float64)
    x = np.random.default_rng(7).standard_normal((2, 3, 16, 16))
    for res in check_network(net, x, name, seed=7, n_coords=4, tol=1e-4):
        assert res.passed, res.line()
