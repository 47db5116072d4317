"""Receptive-field propagation and the sensitivity-probe oracle."""

import numpy as np
import pytest

from idlenet import rf
from idlenet.blocks import BlockConfig
from idlenet.network import find_config, load_spec
from idlenet.tensor import Tensor4


def propagate(cfgs, c=8):
    state = rf.RFState.fresh(c)
    for cfg in cfgs:
        state = rf.propagate_rf(state, cfg)
    return state


def agree(cfgs, c=8):
    """Probe each analytic group's representative channel; assert equality."""
    state = propagate(cfgs, c)
    size = state.max_rf() + 8
    frag = rf.build_positive_fragment(cfgs)
    out = rf.fragment_forward(frag, Tensor4.zeros(1, c, size, size))
    pos = (out.h // 2, out.w // 2)
    for g in state.groups:
        measured = rf.probe_rf(frag, c, size, size, (g.lo + g.hi) // 2, pos)
        assert measured == g.rf, (g, measured)
    return state


def idle(kind, k=3, c=8):
    return BlockConfig(kind, c, c, r=2, k=k, alpha=0.5, act="relu")


def mb(k=3, s=1, c=8):
    return BlockConfig("MBBlock", c, c, r=2, k=k, s=s, act="relu")


class TestPropagation:
    def test_fresh_state_single_group(self):
        state = rf.RFState.fresh(8)
        assert state.groups == (rf.RFGroup(0, 8, 1, 1),)

    def test_single_mbblock_merges_to_rf3(self):
        state = propagate([mb()])
        assert state.groups == (rf.RFGroup(0, 8, 3, 1),)

    def test_two_same_side_idler_freezes_one_group(self):
        state = propagate([idle("IdleR"), idle("IdleR")])
        assert [(g.lo, g.hi, g.rf) for g in state.groups] == \
            [(0, 4, 1), (4, 8, 5)]

    def test_two_same_side_idlel_mirrored(self):
        state = propagate([idle("IdleL"), idle("IdleL")])
        assert [(g.lo, g.hi, g.rf) for g in state.groups] == \
            [(0, 4, 5), (4, 8, 1)]

    def test_alternation_advances_both_groups_once(self):
        state = propagate([idle("IdleR"), idle("IdleL")])
        assert [(g.rf) for g in state.groups] == [3]
        assert state.groups[0].hi == 8

    def test_monotonic_depth_d_leaves_one_group_at_1(self):
        for d in (1, 2, 3, 4):
            state = propagate([idle("IdleR", k=3)] * d)
            assert state.groups[0].rf == 1
            assert state.groups[-1].rf == 1 + 2 * d

    def test_mbblock_after_idle_stack_merges_everything(self):
        state = propagate([idle("IdleR"), idle("IdleR"), mb()])
        assert len(state.groups) == 1
        assert state.groups[0].rf == 7   # max(1, 5) + 2

    def test_isb_exit_shuffle_merges(self):
        state = propagate([BlockConfig("ISB", 8, 8, r=2, k=3, alpha=0.5,
                                       act="relu")])
        assert len(state.groups) == 1 and state.groups[0].rf == 3

    def test_stride_updates_jump(self):
        state = propagate([mb(s=2), mb(k=3)])
        # second block composes with jump 2: 3 + 2*2 = 7
        assert state.groups[0].rf == 7 and state.groups[0].jump == 2

    def test_stem_propagation(self):
        spec = load_spec(find_config("rf-idle-rr"))
        state = rf.propagate_spec(spec)
        assert [(g.rf) for g in state.groups] == [1, 5]

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            rf.propagate_rf(rf.RFState.fresh(4), mb(c=8))


class TestProbe:
    def test_identity_fragment_extent_1(self):
        frag = rf.build_positive_fragment(
            [BlockConfig("MBBlock", 4, 4, r=1, k=1, act="relu")])
        assert rf.probe_rf(frag, 4, 9, 9, 0, (4, 4)) == 1

    def test_single_depthwise_k3_extent_3(self):
        frag = rf.build_positive_fragment([mb(k=3, c=4)])
        assert rf.probe_rf(frag, 4, 11, 11, 1, (5, 5)) == 3

    def test_out_of_range_indices_rejected(self):
        frag = rf.build_positive_fragment([mb(c=4)])
        with pytest.raises(ValueError, match="out of range"):
            rf.probe_rf(frag, 4, 9, 9, 7, (4, 4))

    def test_se_blocks_rejected(self):
        with pytest.raises(ValueError, match="SE"):
            rf.build_positive_fragment(
                [BlockConfig("MBBlock", 4, 4, r=2, se=True)])

    def test_canonical_claims(self):
        agree([idle("IdleR"), idle("IdleR")])
        agree([idle("IdleR"), idle("IdleL")])

    def test_probe_agrees_on_20_random_stacks(self):
        rng = np.random.default_rng(17)
        kinds = ["MBBlock", "IdleL", "IdleR"]
        for _ in range(20):
            depth = int(rng.integers(1, 5))
            cfgs = []
            for j in range(depth):
                kind = kinds[int(rng.integers(0, 3))]
                k = int(rng.choice([3, 5]))
                s = 1
                if kind == "MBBlock" and j == 0 and rng.random() < 0.25:
                    s = 2
                cfgs.append(BlockConfig(kind, 8, 8, r=2, k=k, s=s,
                                        alpha=0.5, act="relu"))
            agree(cfgs)
