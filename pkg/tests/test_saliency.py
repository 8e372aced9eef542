"""Attention saliency: raw slices, rollout, grid rendering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radvqa.saliency import (
    SaliencyError,
    SaliencyMap,
    SaliencyQuery,
    compute_map,
    raw_map,
    render_grid,
    rollout_map,
    rollout_matrix,
)
from radvqa.toyvlm import AttentionError, AttentionStack


def lm_stack(attn, image_tokens: int, gen_start: int) -> AttentionStack:
    attn = np.asarray(attn, dtype=np.float64)
    seq = attn.shape[2]
    ids = [-1] * image_tokens + list(range(10, 10 + seq - image_tokens))
    return AttentionStack(component="lm", attn=attn, token_ids=ids,
                          image_token_count=image_tokens,
                          sep_index=image_tokens, gen_start=gen_start)


def identity_stack(n_layers: int, n_heads: int, seq: int,
                   image_tokens: int = 1, gen_start: int = 1) -> AttentionStack:
    attn = np.broadcast_to(np.eye(seq), (n_layers, n_heads, seq, seq)).copy()
    return lm_stack(attn, image_tokens, gen_start)


def random_vision_stack(rng, n_layers: int, n_heads: int, seq: int) -> AttentionStack:
    raw = rng.random((n_layers, n_heads, seq, seq)) + 1e-3
    attn = raw / raw.sum(axis=-1, keepdims=True)
    return AttentionStack(component="vision", attn=attn, token_ids=[],
                          image_token_count=seq)


def two_layer_2x2() -> AttentionStack:
    l1 = [[[1.0, 0.0], [0.5, 0.5]]]
    l2 = [[[1.0, 0.0], [0.0, 1.0]]]
    return lm_stack([l1, l2], image_tokens=1, gen_start=1)


class TestQueryValidation:
    def test_bad_direction(self):
        with pytest.raises(SaliencyError, match="direction"):
            SaliencyQuery(direction="sideways", token_index=0)

    def test_bad_method(self):
        with pytest.raises(SaliencyError, match="method"):
            SaliencyQuery(direction="token_to_image", token_index=1, method="shapley")

    def test_token_direction_needs_token_index(self):
        with pytest.raises(SaliencyError, match="token_index"):
            SaliencyQuery(direction="token_to_image")

    def test_patch_direction_needs_patch_index(self):
        with pytest.raises(SaliencyError, match="patch_index"):
            SaliencyQuery(direction="patch_to_tokens")


class TestSaliencyMapInvariants:
    def test_scores_must_sum_to_one(self):
        with pytest.raises(SaliencyError, match="sum to 1"):
            SaliencyMap(direction="token_to_image", scores=(0.5, 0.2), argmax=0)

    def test_scores_must_be_nonnegative(self):
        with pytest.raises(SaliencyError, match="non-negative"):
            SaliencyMap(direction="token_to_image", scores=(1.5, -0.5), argmax=0)

    def test_argmax_must_match(self):
        with pytest.raises(SaliencyError, match="argmax"):
            SaliencyMap(direction="token_to_image", scores=(0.25, 0.75), argmax=0)

    def test_empty_rejected(self):
        with pytest.raises(SaliencyError, match="empty"):
            SaliencyMap(direction="token_to_image", scores=(), argmax=0)

    def test_json_shape(self):
        m = SaliencyMap(direction="token_to_image", scores=(0.25, 0.75), argmax=1,
                        flags=("degenerate_uniform",), provenance={"method": "raw"})
        obj = m.to_json_obj()
        assert set(obj) == {"direction", "method", "scores", "argmax", "flags", "provenance"}
        assert obj["method"] == "raw"
        assert obj["scores"] == [0.25, 0.75]
        assert obj["flags"] == ["degenerate_uniform"]


class TestRawMap:
    def test_hand_written_token_slice(self):
        # single layer, single head, six positions, four image patches
        attn = np.eye(6)[None, None].repeat(1, axis=0).copy()
        attn[0, 0, 5] = [0.2, 0.1, 0.3, 0.2, 0.1, 0.1]
        stack = lm_stack(attn, image_tokens=4, gen_start=5)
        got = raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=5))
        assert got.scores == pytest.approx((0.25, 0.125, 0.375, 0.25))
        assert got.argmax == 2
        assert got.flags == ()

    def test_hand_written_patch_column(self):
        attn = np.broadcast_to(np.eye(6), (1, 1, 6, 6)).copy()
        attn[0, 0, 4] = [0.1, 0.1, 0.6, 0.1, 0.1, 0.0]
        attn[0, 0, 5] = [0.1, 0.1, 0.2, 0.1, 0.25, 0.25]
        stack = lm_stack(attn, image_tokens=4, gen_start=4)
        got = raw_map(stack, SaliencyQuery(direction="patch_to_tokens", patch_index=2))
        assert got.scores == pytest.approx((0.6 / 0.8, 0.2 / 0.8))
        assert got.argmax == 0

    def test_all_zero_slice_goes_uniform_with_flag(self):
        # generated row attends only itself, never the image
        stack = identity_stack(2, 2, seq=5, image_tokens=3, gen_start=4)
        got = raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=4))
        assert got.scores == pytest.approx((1 / 3, 1 / 3, 1 / 3))
        assert "degenerate_uniform" in got.flags

    def test_single_layer_selector(self):
        attn = np.broadcast_to(np.eye(4), (2, 1, 4, 4)).copy()
        attn[0, 0, 3] = [0.7, 0.1, 0.1, 0.1]
        attn[1, 0, 3] = [0.1, 0.7, 0.1, 0.1]
        stack = lm_stack(attn, image_tokens=2, gen_start=3)
        q0 = SaliencyQuery(direction="token_to_image", token_index=3, layer=0)
        q1 = SaliencyQuery(direction="token_to_image", token_index=3, layer=1)
        assert raw_map(stack, q0).argmax == 0
        assert raw_map(stack, q1).argmax == 1
        assert raw_map(stack, q0).provenance["layer"] == 0

    def test_single_head_selector(self):
        attn = np.broadcast_to(np.eye(4), (1, 2, 4, 4)).copy()
        attn[0, 0, 3] = [0.7, 0.1, 0.1, 0.1]
        attn[0, 1, 3] = [0.1, 0.7, 0.1, 0.1]
        stack = lm_stack(attn, image_tokens=2, gen_start=3)
        got = raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=3, head=1))
        assert got.argmax == 1
        assert got.provenance["head"] == 1

    def test_mean_all_averages_layers(self):
        attn = np.broadcast_to(np.eye(4), (2, 1, 4, 4)).copy()
        attn[0, 0, 3] = [0.8, 0.0, 0.1, 0.1]
        attn[1, 0, 3] = [0.0, 0.4, 0.3, 0.3]
        stack = lm_stack(attn, image_tokens=2, gen_start=3)
        got = raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=3))
        assert got.scores == pytest.approx((0.4 / 0.6, 0.2 / 0.6))
        assert got.provenance["layer"] == "mean_all"
        assert got.provenance["head"] == "mean_all"

    def test_prompt_token_rejected(self):
        stack = identity_stack(1, 1, seq=5, image_tokens=2, gen_start=4)
        with pytest.raises(SaliencyError, match="response position"):
            raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=2))

    def test_token_index_out_of_range(self):
        stack = identity_stack(1, 1, seq=5, image_tokens=2, gen_start=4)
        with pytest.raises(SaliencyError, match="response position"):
            raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=9))

    def test_patch_index_out_of_range(self):
        stack = identity_stack(1, 1, seq=5, image_tokens=2, gen_start=4)
        with pytest.raises(SaliencyError, match="patch_index"):
            raw_map(stack, SaliencyQuery(direction="patch_to_tokens", patch_index=2))

    def test_layer_selector_out_of_range(self):
        stack = identity_stack(2, 1, seq=4, image_tokens=2, gen_start=3)
        with pytest.raises(SaliencyError, match="layer"):
            raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=3, layer=2))

    def test_head_selector_out_of_range(self):
        stack = identity_stack(2, 1, seq=4, image_tokens=2, gen_start=3)
        with pytest.raises(SaliencyError, match="head"):
            raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=3, head=1))

    def test_vision_stack_rejected(self):
        rng = np.random.default_rng(0)
        stack = random_vision_stack(rng, 1, 1, 4)
        with pytest.raises(SaliencyError, match="lm"):
            raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=3))

    def test_extra_provenance_merged(self):
        stack = identity_stack(1, 1, seq=4, image_tokens=2, gen_start=3)
        got = raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=3),
                      extra_provenance={"checkpoint": "abc123"})
        assert got.provenance["checkpoint"] == "abc123"


class TestRollout:
    def test_two_layer_derived_matrix(self):
        got = rollout_matrix(two_layer_2x2())
        assert got == pytest.approx(np.array([[1.0, 0.0], [0.25, 0.75]]), abs=1e-9)

    @pytest.mark.parametrize("n_layers", [1, 2, 3, 4, 5, 6])
    def test_identity_stack_rolls_to_identity(self, n_layers):
        stack = identity_stack(n_layers, 2, seq=5, image_tokens=2, gen_start=4)
        assert rollout_matrix(stack) == pytest.approx(np.eye(5), abs=1e-12)

    def test_two_layer_derived_map_is_certain(self):
        got = rollout_map(two_layer_2x2(),
                          SaliencyQuery(direction="token_to_image", token_index=1,
                                        method="rollout"))
        assert got.scores == (1.0,)
        assert got.argmax == 0
        assert got.provenance["method"] == "rollout"
        assert got.provenance["layer"] == "whole_stack"

    def test_rows_stay_stochastic_over_random_stacks(self):
        rng = np.random.default_rng(20260817)
        for _ in range(1000):
            stack = random_vision_stack(rng, int(rng.integers(1, 5)),
                                        int(rng.integers(1, 4)),
                                        int(rng.integers(2, 9)))
            rows = rollout_matrix(stack).sum(axis=-1)
            assert np.abs(rows - 1.0).max() < 1e-6

    @pytest.mark.parametrize("fusion", ["mean", "max", "min"])
    def test_head_fusion_variants_stay_stochastic(self, fusion):
        rng = np.random.default_rng(7)
        stack = random_vision_stack(rng, 3, 4, 6)
        rows = rollout_matrix(stack, head_fusion=fusion).sum(axis=-1)
        assert rows == pytest.approx(np.ones(6), abs=1e-9)

    def test_bad_fusion_rejected(self):
        with pytest.raises(SaliencyError, match="head_fusion"):
            rollout_matrix(two_layer_2x2(), head_fusion="median")

    def test_non_stochastic_rows_rejected(self):
        attn = np.full((1, 1, 3, 3), 0.5)
        stack = AttentionStack(component="vision", attn=attn, token_ids=[],
                               image_token_count=3)
        with pytest.raises(AttentionError, match="sum to 1"):
            rollout_matrix(stack)

    def test_identity_stack_rollout_map_equals_raw_map(self):
        stack = identity_stack(3, 2, seq=6, image_tokens=3, gen_start=4)
        for query in (SaliencyQuery(direction="token_to_image", token_index=5),
                      SaliencyQuery(direction="patch_to_tokens", patch_index=1)):
            raw = raw_map(stack, query)
            rolled = rollout_map(stack, query)
            assert rolled.scores == pytest.approx(raw.scores, abs=1e-12)
            assert rolled.flags == raw.flags

    def test_rollout_keeps_early_routing_where_raw_forgets(self):
        # layer 1 sends the response token to patch 3; layers 2..4 drift
        # toward patch 1. The last-layer raw slice follows the drift, the
        # rollout keeps the residual-carried early route.
        seq, patches = 6, 4
        attn = np.broadcast_to(np.eye(seq), (4, 1, seq, seq)).copy()
        attn[0, 0, 5] = [0.05, 0.05, 0.05, 0.7, 0.1, 0.05]
        for layer in (1, 2, 3):
            attn[layer, 0, 5] = [0.05, 0.15, 0.05, 0.05, 0.1, 0.6]
        stack = lm_stack(attn, image_tokens=patches, gen_start=5)

        last_raw = raw_map(stack, SaliencyQuery(direction="token_to_image",
                                                token_index=5, layer=3))
        rolled = rollout_map(stack, SaliencyQuery(direction="token_to_image",
                                                  token_index=5, method="rollout"))
        assert last_raw.argmax == 1
        assert rolled.argmax == 3

    def test_inputs_never_mutated(self):
        stack = two_layer_2x2()
        before = stack.attn.copy()
        rollout_matrix(stack)
        rollout_map(stack, SaliencyQuery(direction="token_to_image", token_index=1))
        raw_map(stack, SaliencyQuery(direction="token_to_image", token_index=1))
        assert np.array_equal(stack.attn, before)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), layers=st.integers(1, 4),
           heads=st.integers(1, 3), seq=st.integers(2, 7))
    def test_stochasticity_property(self, seed, layers, heads, seq):
        rng = np.random.default_rng(seed)
        stack = random_vision_stack(rng, layers, heads, seq)
        got = rollout_matrix(stack)
        assert got.sum(axis=-1) == pytest.approx(np.ones(seq), abs=1e-9)
        assert got.min() >= -1e-12


class TestComputeDispatch:
    def test_dispatches_on_method(self):
        stack = two_layer_2x2()
        raw_q = SaliencyQuery(direction="token_to_image", token_index=1, method="raw")
        roll_q = SaliencyQuery(direction="token_to_image", token_index=1, method="rollout")
        assert compute_map(stack, raw_q).provenance["method"] == "raw"
        assert compute_map(stack, roll_q).provenance["method"] == "rollout"


class TestRenderGrid:
    def uniform_map(self, n: int) -> SaliencyMap:
        return SaliencyMap(direction="token_to_image", scores=(1.0 / n,) * n, argmax=0)

    def test_one_hot_renders_single_full_cell(self):
        m = SaliencyMap(direction="token_to_image", scores=(0.0, 0.0, 1.0, 0.0), argmax=2)
        got = render_grid(m, grid=(2, 2), image_size=(100, 80))
        intensities = [c["intensity"] for c in got["cells"]]
        assert intensities == [0.0, 0.0, 1.0, 0.0]
        assert got["argmax_cell"] == {"row": 1, "col": 0, "index": 2}
        assert got["cells"][2] == {"row": 1, "col": 0, "x": 0.0, "y": 40.0,
                                   "width": 50.0, "height": 40.0, "intensity": 1.0}

    def test_flat_map_flagged_at_half_intensity(self):
        got = render_grid(self.uniform_map(4), grid=(2, 2))
        assert all(c["intensity"] == 0.5 for c in got["cells"])
        assert "flat_map" in got["flags"]

    def test_min_max_normalization(self):
        m = SaliencyMap(direction="token_to_image", scores=(0.1, 0.2, 0.3, 0.4), argmax=3)
        got = render_grid(m, grid=(2, 2))
        intensities = [c["intensity"] for c in got["cells"]]
        assert intensities == pytest.approx([0.0, 1 / 3, 2 / 3, 1.0])

    def test_argmax_cell_row_major(self):
        scores = [0.0] * 64
        scores[13] = 1.0
        m = SaliencyMap(direction="token_to_image", scores=tuple(scores), argmax=13)
        got = render_grid(m, grid=(8, 8))
        assert got["argmax_cell"] == {"row": 1, "col": 5, "index": 13}

    def test_grid_must_cover_patch_count(self):
        with pytest.raises(SaliencyError, match="grid"):
            render_grid(self.uniform_map(4), grid=(3, 2))

    def test_wrong_direction_rejected(self):
        m = SaliencyMap(direction="patch_to_tokens", scores=(0.5, 0.5), argmax=0)
        with pytest.raises(SaliencyError, match="token_to_image"):
            render_grid(m, grid=(1, 2))

    def test_result_is_json_serializable(self):
        import json
        got = render_grid(self.uniform_map(4), grid=(2, 2))
        json.dumps(got)
