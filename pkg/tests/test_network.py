"""Network composer: config loading with exhaustive error listing, hybrid
composition semantics, deterministic builds, and forward additivity."""

import json

import numpy as np
import pytest

from idlenet.blocks import BlockConfig
from idlenet.network import (HCPattern, Network, SpecError, apply_hc,
                             build_network, bundled_config_names,
                             default_hc_insertions, find_config,
                             forward_network, load_spec, spec_from_dict)
from idlenet.tensor import ExecContext, Tensor4


def minimal_config(**overrides):
    d = {
        "input": {"c": 3, "h": 16, "w": 16},
        "stem": {"out": 8, "k": 3, "s": 2, "act": "relu"},
        "blocks": [
            {"kind": "MBBlock", "cin": 8, "cout": 8, "r": 2, "k": 3, "s": 1,
             "se": False, "act": "relu"},
            {"kind": "IdleL", "cin": 8, "cout": 8, "r": 2, "k": 3, "s": 1,
             "alpha": 0.5, "se": False, "act": "relu"},
        ],
        "head": {"widths": [16], "act": "relu"},
        "classifier": {"classes": 2},
        "seed": 0,
    }
    d.update(overrides)
    return d


class TestLoadSpec:
    def test_bundled_base_loads_with_15_mbblocks(self):
        spec = load_spec(find_config("mbv3-like-base"))
        assert len(spec.blocks) == 15
        assert all(cfg.kind == "MBBlock" for cfg in spec.blocks)
        assert spec.input == (3, 224, 224)

    def test_empty_block_list_is_an_error(self):
        with pytest.raises(SpecError, match="must not be empty"):
            spec_from_dict(minimal_config(blocks=[]))

    def test_chain_violation_names_the_index(self):
        d = minimal_config()
        d["blocks"][1]["cin"] = 12
        d["blocks"][1]["cout"] = 12
        with pytest.raises(SpecError, match=r"blocks\[1\]"):
            spec_from_dict(d)

    def test_unknown_keys_rejected_everywhere(self):
        with pytest.raises(SpecError, match="unknown key 'extra'"):
            spec_from_dict(minimal_config(extra=1))
        d = minimal_config()
        d["blocks"][0]["padding"] = 1
        with pytest.raises(SpecError, match="unknown key 'padding'"):
            spec_from_dict(d)
        d = minimal_config()
        d["stem"]["bias"] = True
        with pytest.raises(SpecError, match="unknown key 'bias'"):
            spec_from_dict(d)

    def test_all_violations_reported_at_once(self):
        d = minimal_config(extra=1)
        d["blocks"][0]["k"] = 4
        d["blocks"][1]["cin"] = 12
        d["classifier"]["classes"] = 1
        try:
            spec_from_dict(d)
            raise AssertionError("should have raised")
        except SpecError as e:
            assert len(e.problems) >= 4

    def test_idle_shape_violation(self):
        d = minimal_config()
        d["blocks"][1]["s"] = 2
        with pytest.raises(SpecError, match="stride 1"):
            spec_from_dict(d)

    def test_invalid_json_and_missing_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(SpecError, match="invalid JSON"):
            load_spec(bad)
        with pytest.raises(SpecError):
            load_spec(tmp_path / "missing.json")

    def test_find_config_lists_bundled_names(self):
        names = bundled_config_names()
        for expected in ("mbv3-like-base", "mbv3-hc-15-10", "mbv3-hc-15-20",
                         "mbv3-m25", "mbv3-m35", "efb0-like-base",
                         "efb0-hc-16-14", "efb0-hc-16-28",
                         "lr-alternating-15-20"):
            assert expected in names
        with pytest.raises(SpecError):
            find_config("no-such-config")


class TestApplyHC:
    def base(self):
        return spec_from_dict(minimal_config(), "base")

    def test_insertion_counts_and_base_untouched(self):
        base = self.base()
        out = apply_hc(base, HCPattern("monotonic_idle", ((0, 2), (1, 1))))
        assert len(out.blocks) == 5
        assert len(base.blocks) == 2
        assert [b.kind for b in out.blocks] == \
            ["MBBlock", "IdleL", "IdleL", "IdleL", "IdleL"]

    def test_inserted_blocks_inherit_host_properties(self):
        d = minimal_config()
        d["blocks"][0].update({"r": 3, "k": 5, "se": True, "act": "hswish"})
        base = spec_from_dict(d, "base")
        out = apply_hc(base, HCPattern("monotonic_idle", ((0, 1),), alpha=0.25))
        ins = out.blocks[1]
        assert (ins.kind, ins.cin, ins.cout) == ("IdleL", 8, 8)
        assert (ins.r, ins.k, ins.s) == (3, 5, 1)
        assert ins.se and ins.act == "hswish" and ins.alpha == 0.25

    def test_alternating_kinds_restart_per_run(self):
        out = apply_hc(self.base(),
                       HCPattern("alternating_lr", ((0, 4), (1, 3))))
        kinds = [b.kind for b in out.blocks]
        assert kinds[1:5] == ["IdleL", "IdleR", "IdleL", "IdleR"]
        assert kinds[6:9] == ["IdleL", "IdleR", "IdleL"]

    def test_empty_insertions_identity(self):
        base = self.base()
        assert apply_hc(base, HCPattern("monotonic_idle", ())).blocks \
            == base.blocks

    def test_invalid_position(self):
        with pytest.raises(SpecError, match="position"):
            apply_hc(self.base(), HCPattern("monotonic_idle", ((7, 1),)))

    def test_m15_plus_10_gives_25_blocks(self):
        base = load_spec(find_config("mbv3-like-base"))
        out = apply_hc(base, HCPattern("monotonic_idle",
                                       ((12, 3), (13, 3), (14, 4))))
        assert len(out.blocks) == 25
        assert sum(b.kind == "IdleL" for b in out.blocks) == 10

    def test_default_insertions_are_proportional_and_total(self):
        base = load_spec(find_config("mbv3-like-base"))
        ins = default_hc_insertions(base, 10)
        assert sum(c for _, c in ins) == 10
        positions = [p for p, _ in ins]
        assert positions == sorted(positions)
        assert all(0 <= p < 15 for p in positions)


class TestBuildAndForward:
    def test_same_seed_same_parameters_bitwise(self):
        spec = load_spec(find_config("toy-hc-4"))
        n1 = build_network(spec)
        n2 = build_network(spec)
        for (name1, b1), (name2, b2) in zip(n1.elements, n2.elements):
            assert name1 == name2
            for key in b1.params:
                assert np.array_equal(b1.params[key], b2.params[key]), key

    def test_different_seed_different_parameters(self):
        spec = load_spec(find_config("toy-hc-4"))
        import dataclasses
        spec2 = dataclasses.replace(spec, seed=1)
        n1, n2 = build_network(spec), build_network(spec2)
        assert not np.array_equal(n1.elements[1][1].params["pw1.w"],
                                  n2.elements[1][1].params["pw1.w"])

    def test_forward_shape_and_finiteness_on_zeros(self):
        spec = load_spec(find_config("toy-hc-4"))
        net = build_network(spec)
        y = forward_network(net, Tensor4.zeros(2, 1, 16, 16))
        assert y.shape == (2, 2, 1, 1)
        assert np.all(np.isfinite(y.arr))

    def test_forward_rejects_wrong_shape(self):
        net = build_network(load_spec(find_config("toy-hc-4")))
        with pytest.raises(ValueError, match="input shape"):
            forward_network(net, Tensor4.zeros(1, 1, 8, 8))

    def test_forward_deterministic_repeat(self, rng):
        net = build_network(load_spec(find_config("toy-hc-4")))
        x = Tensor4(rng.standard_normal((2, 1, 16, 16)))
        assert np.array_equal(forward_network(net, x).arr,
                              forward_network(net, x).arr)

    def test_batch_equals_stacked_single_rows_bitwise(self, rng):
        net = build_network(load_spec(find_config("toy-hc-4")))
        xs = rng.standard_normal((2, 1, 16, 16))
        batch = forward_network(net, Tensor4(xs))
        row0 = forward_network(net, Tensor4(xs[:1]))
        row1 = forward_network(net, Tensor4(xs[1:]))
        assert np.array_equal(batch.arr[0], row0.arr[0])
        assert np.array_equal(batch.arr[1], row1.arr[0])

    def test_context_accumulates_over_all_elements(self, rng):
        net = build_network(load_spec(find_config("toy-hc-4")))
        x = Tensor4(rng.standard_normal((1, 1, 16, 16)))
        total = ExecContext()
        forward_network(net, x, total)
        per_element = 0
        cur = x
        for _, block in net.elements:
            ctx = ExecContext()
            cur = block.forward(cur, ctx)
            per_element += ctx.mac_counter
        assert total.mac_counter == per_element
