"""Cost model: frozen formula values, oracle equality across block kinds,
algebraic identities, monotonicity, additivity, and the CSV schema."""

import numpy as np
import pytest

from idlenet import cost
from idlenet.blocks import BlockConfig, build_block
from idlenet.network import build_network, find_config, load_spec
from idlenet.tensor import ExecContext, Tensor4


class TestFormulas:
    def test_mbblock_frozen_values(self):
        assert cost.madds_mbblock(16, 16, 6, 3, 1, 32, 32) == 8_060_928
        assert cost.madds_mbblock(16, 16, 6, 3, 2, 32, 32) == 4_374_528

    def test_mbblock_zero_at_zero_expansion(self):
        # degenerate scaling: the formula vanishes as r -> 0
        assert cost.madds_mbblock(16, 16, 1e-9, 3, 1, 32, 32) == 0

    def test_idleblock_frozen_value(self):
        assert cost.madds_idleblock(16, 6, 3, 1, 0.5, 32, 32) == 4_915_200

    def test_idleblock_alpha_zero_limit_equals_mbblock(self):
        # alpha -> 0 is outside the block-config domain but the formula is
        # total; at alpha=0 it coincides with the full inverted residual
        assert cost.madds_idleblock(16, 6, 3, 1, 0.0, 32, 32) \
            == cost.madds_mbblock(16, 16, 6, 3, 1, 32, 32)

    def test_idle_halves_pointwise_terms_only(self):
        full = cost.madds_mbblock(16, 16, 6, 3, 1, 32, 32)
        idle = cost.madds_idleblock(16, 6, 3, 1, 0.5, 32, 32)
        dw_term = 2 * 96 * 9 * 1024
        assert full - dw_term == 2 * (idle - dw_term)

    def test_savings_frozen_value_and_identity(self):
        assert cost.idle_savings(16, 6, 0.5, 32, 32, 1) == 3_145_728
        rng = np.random.default_rng(2)
        for _ in range(30):
            c = int(rng.choice([4, 8, 16, 32]))
            r = int(rng.integers(1, 7))
            alpha = float(rng.choice([0.25, 0.5, 0.75]))
            h = 2 * int(rng.integers(2, 9))
            w = 2 * int(rng.integers(2, 9))
            s = int(rng.choice([1, 2]))
            diff = cost.madds_mbblock(c, c, r, k := 3, s, h, w) \
                - cost.madds_idleblock(c, r, k, s, alpha, h, w)
            assert diff == cost.idle_savings(c, r, alpha, h, w, s)

    def test_savings_alpha_one_limit_is_full_pointwise_cost(self):
        # rejected input domain for blocks; asserted as a formula limit only
        hw = 32 * 32
        assert cost.idle_savings(16, 6, 1.0, 32, 32, 1) \
            == 2 * 6 * 16 * 16 * hw * 2

    def test_idleblock_strictly_decreasing_in_alpha(self):
        values = [cost.madds_idleblock(16, 6, 3, 1, a, 32, 32)
                  for a in (0.125, 0.25, 0.375, 0.5, 0.625, 0.75)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestGenericCost:
    def test_specialises_to_mbblock_formula(self):
        cfg = BlockConfig("MBBlock", 16, 24, r=4, k=5, s=2)
        block = build_block(cfg)
        assert cost.madds_generic(block, 14, 14) \
            == cost.madds_mbblock(16, 24, 4, 5, 2, 14, 14)

    def test_shuffle_contributes_zero(self):
        isb = build_block(BlockConfig("ISB", 8, 8, r=2))
        idle = build_block(BlockConfig("IdleL", 8, 8, r=2))
        assert cost.madds_generic(isb, 7, 7) == cost.madds_generic(idle, 7, 7)

    @pytest.mark.parametrize("kind", ["MBBlock", "IdleL", "IdleR", "ISB",
                                      "Bottleneck", "ShuffleV1", "ShuffleV2"])
    def test_generic_equals_oracle_for_every_kind(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        for _ in range(8):
            c = int(rng.choice([4, 8, 12]))
            se = bool(rng.random() < 0.4) if kind in ("MBBlock", "IdleL") else False
            cfg = BlockConfig(kind, c, c, r=int(rng.integers(1, 4)),
                              k=int(rng.choice([1, 3, 5])), s=1,
                              alpha=0.5, se=se,
                              groups=2 if kind in ("ShuffleV1", "ISB") else 2)
            if kind == "ShuffleV1":
                cfg = BlockConfig(kind, c, c, r=2.0, k=3, s=1, groups=2)
            block = build_block(cfg, seed=3)
            h = int(rng.integers(5, 10))
            w = int(rng.integers(5, 10))
            ctx = ExecContext()
            block.forward(Tensor4(rng.standard_normal((1, c, h, w))), ctx)
            assert cost.madds_generic(block, h, w) == 2 * ctx.mac_counter, cfg

    def test_block_madds_matches_generic(self):
        for cfg in (BlockConfig("MBBlock", 8, 16, r=3, k=3, s=2),
                    BlockConfig("IdleR", 8, 8, r=2, k=5),
                    BlockConfig("Bottleneck", 8, 8, r=2, k=3),
                    BlockConfig("ShuffleV2", 8, 8, r=1, k=3)):
            assert cost.block_madds(cfg, 12, 12) \
                == cost.madds_generic(build_block(cfg), 12, 12)


class TestNetworkCost:
    def test_totals_are_column_sums_and_additive(self):
        net = build_network(load_spec(find_config("toy-hc-4")), init=False)
        rep = cost.network_cost(net)
        assert rep.total_madds == sum(r.analytic_madds for r in rep.rows)
        assert rep.total_params == sum(r.analytic_params for r in rep.rows)

    def test_verify_fills_oracle_and_matches(self):
        net = build_network(load_spec(find_config("toy-hc-4")), init=False)
        rep = cost.network_cost(net, verify=True)
        assert rep.total_oracle_madds == rep.total_madds
        for row in rep.rows:
            assert row.oracle_madds == row.analytic_madds

    def test_verify_at_other_resolutions(self):
        net = build_network(load_spec(find_config("mbv3-like-base")),
                            init=False)
        rep = cost.network_cost(net, input_hw=(64, 64), verify=True)
        assert rep.total_oracle_madds == rep.total_madds

    def test_csv_schema(self):
        net = build_network(load_spec(find_config("toy-hc-4")), init=False)
        text = cost.network_cost(net, verify=True).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "index,kind,analytic_madds,analytic_params,oracle_madds"
        assert lines[-1].startswith("total,total,")
        assert len(lines) == 2 + len(net.elements)
        # byte-stable across runs
        again = cost.network_cost(build_network(load_spec(
            find_config("toy-hc-4")), init=False), verify=True).to_csv()
        assert again == text

    def test_savings_column_sums_idle_rows(self):
        net = build_network(load_spec(find_config("mbv3-hc-15-10")),
                            init=False)
        rep = cost.network_cost(net)
        # 10 idle insertions at C=160, r=6, k=5 on 7x7 maps
        expect = 10 * (cost.madds_mbblock(160, 160, 6, 5, 1, 7, 7)
                       - cost.madds_idleblock(160, 6, 5, 1, 0.5, 7, 7))
        assert rep.savings_vs_monotonic == expect

    def test_mismatch_raises(self):
        net = build_network(load_spec(find_config("toy-hc-4")), init=False)
        original = cost.madds_generic

        def broken(block, h, w, n=1):
            return original(block, h, w, n) + 2

        cost.madds_generic = broken
        try:
            with pytest.raises(cost.CostVerificationError):
                cost.network_cost(net, verify=True)
        finally:
            cost.madds_generic = original


class TestTableReproduction:
    """Bundled placement configs against the published cost columns
    (tables use the 1-MAC-per-MAdd convention; conversion is explicit)."""

    TABLE = {
        "mbv3-hc-15-10": (299.8, 7.26),
        "mbv3-hc-15-20": (380.1, 8.09),
        "mbv3-m25": (368.4, 8.85),
        "mbv3-m35": (517.5, 11.26),
    }

    @pytest.mark.parametrize("name", sorted(TABLE))
    def test_within_five_percent(self, name):
        madds_m, params_m = self.TABLE[name]
        net = build_network(load_spec(find_config(name)), init=False)
        rep = cost.network_cost(net)
        got_madds = cost.to_table_millions(rep.total_madds)
        got_params = rep.total_params / 1e6
        assert abs(got_madds / madds_m - 1) < 0.05
        assert abs(got_params / params_m - 1) < 0.05

    def test_depth_matched_cost_ratios(self):
        def total(name):
            rep = cost.network_cost(build_network(
                load_spec(find_config(name)), init=False))
            return rep.total_madds

        r1 = total("mbv3-m25") / total("mbv3-hc-15-10")
        r2 = total("mbv3-m35") / total("mbv3-hc-15-20")
        assert 1.13 <= r1 <= 1.33
        assert 1.26 <= r2 <= 1.46
