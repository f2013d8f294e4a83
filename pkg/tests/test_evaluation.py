import math

import numpy as np
import pytest

from ldtnet import evaluation as E
from ldtnet import model as M
from ldtnet.dataset import generate_dataset, write_split
from ldtnet.errors import ConfigError, NumericError
from ldtnet.metrics import psnr, score
from ldtnet.scenes import eval_sources

N = 4


@pytest.fixture(scope="module")
def sources():
    return eval_sources(32, 40, count=N)


def cfg(suite, **kw):
    kw.setdefault("image_count", N)
    return E.EvalSuiteConfig(suite, **kw)


class TestConfig:
    def test_unknown_suite(self):
        with pytest.raises(ConfigError):
            E.EvalSuiteConfig("FOG")

    def test_empty_list(self):
        with pytest.raises(ConfigError):
            E.EvalSuiteConfig("ARE", a_values=[])

    def test_out_of_domain(self):
        with pytest.raises(ConfigError):
            E.EvalSuiteConfig("ARE", a_values=[1.2])
        with pytest.raises(ConfigError):
            E.EvalSuiteConfig("NRE", noise_specs=[("blur", 0.1)])

    def test_defaults(self):
        c = E.EvalSuiteConfig()
        assert c.A == 0.85 and c.beta == 1.0 and c.image_count == 21
        assert len(c.a_values) == 10 and all(0.7 < a < 1.0 for a in c.a_values)
        assert len(c.beta_values) == 10 and all(0.5 < b < 1.5 for b in c.beta_values)
        assert c.scale_factors == [1.0, 0.8, 0.6, 0.4]
        assert c.noise_specs == [("gaussian", 0.02), ("poisson", 0.01), ("saltpepper", 0.02)]

    def test_hash_tracks_config(self):
        assert cfg("ARE").config_hash() == cfg("ARE").config_hash()
        assert cfg("ARE").config_hash() != cfg("ARE", seed=1).config_hash()

    def test_interval_grid(self):
        assert E.interval_grid(0.0, 1.0, 4) == [0.125, 0.375, 0.625, 0.875]


class TestStandard:
    def test_identity_equals_hazy_baseline(self, sources):
        triples = E.standard_triples(sources, cfg("STANDARD"))
        rep = E.run_standard_eval(E.identity_dehazer, triples, cfg("STANDARD"))
        for r, t in zip(rep.records, triples):
            s = score(t.hazy, t.clear)
            assert (r.mse, r.psnr, r.ssim) == (s.mse, s.psnr, s.ssim)

    def test_standard_airlight_and_beta(self, sources):
        for t in E.standard_triples(sources, cfg("STANDARD")):
            assert t.params.A == 0.85 and t.params.beta == 1.0

    def test_oracle_over_40db_where_transmission_large(self, sources):
        psnrs = []
        for t in E.standard_triples(sources, cfg("STANDARD")):
            out = E.inversion_oracle(t.hazy, t)
            mask = t.transmission >= 0.1
            if mask.any():
                psnrs.append(psnr(out, t.clear, mask))
        assert psnrs and np.mean(psnrs) >= 40

    def test_split_directory_and_missing_files(self, sources, tmp_path):
        triples = generate_dataset(sources, 3, seed=0, size=(32, 40))
        write_split(tmp_path, triples, {})
        (tmp_path / "hazy" / "00001.png").unlink()
        rep = E.run_standard_eval(E.identity_dehazer, tmp_path)
        assert len(rep.records) == 3
        assert rep.records[1].error.startswith("E_DATA") and not rep.records[0].error
        assert rep.aggregates[0].n == 2

    def test_dehazer_exceptions_become_records(self, sources):
        def bad(hazy, triple):
            raise NumericError("boom")

        rep = E.run_standard_eval(bad, E.standard_triples(sources, cfg("STANDARD")))
        assert all("boom" in r.error for r in rep.records)
        assert rep.aggregates[0].n == 0 and math.isnan(rep.aggregates[0].mean_psnr)

    def test_wrong_output_shape_recorded(self, sources):
        rep = E.run_standard_eval(lambda h, t: h[:-1], E.standard_triples(sources, cfg("STANDARD")))
        assert all(r.error for r in rep.records)

    def test_network_dehazer(self, sources):
        rep = E.run_standard_eval(E.network_dehazer(M.init_params(0)), E.standard_triples(sources, cfg("STANDARD")))
        assert not any(r.error for r in rep.records)


class TestRobustnessSuites:
    def test_are_buckets(self, sources):
        rep = E.run_are(E.identity_dehazer, sources, cfg("ARE"))
        assert len(rep.aggregates) == 10 and all(a.n == N for a in rep.aggregates)
        assert E.GRID_NOTE in rep.notes

    def test_cre_buckets(self, sources):
        rep = E.run_cre(E.identity_dehazer, sources, cfg("CRE", beta_values=[0.7, 1.3]))
        assert [a.cell for a in rep.aggregates] == ["beta=0.7000", "beta=1.3000"]

    def test_are_single_value_is_standard(self, sources):
        are = E.run_are(E.identity_dehazer, sources, cfg("ARE", a_values=[0.85]))
        std = E.run_standard_eval(E.identity_dehazer, E.standard_triples(sources, cfg("STANDARD")))
        assert [(r.mse, r.psnr, r.ssim) for r in are.records] == [(r.mse, r.psnr, r.ssim) for r in std.records]

    def test_sre_scales(self, sources):
        seen = []
        rep = E.run_sre(lambda h, t: seen.append(h.shape) or h, sources, cfg("SRE"))
        assert [a.cell for a in rep.aggregates] == ["scale=1", "scale=0.8", "scale=0.6", "scale=0.4"]
        assert seen[0] == (32, 40, 3) and seen[-1] == (13, 16, 3)

    def test_nre_perturbs_input_only(self, sources):
        rep = E.run_nre(E.identity_dehazer, sources, cfg("NRE"))
        assert [a.cell for a in rep.aggregates] == ["gaussian=0.02", "poisson=0.01", "saltpepper=0.02"]
        clean = E.run_standard_eval(E.identity_dehazer, E.standard_triples(sources, cfg("STANDARD")))
        # noise on the input moves the identity score away from the clean baseline
        assert all(a.mean_mse != clean.aggregates[0].mean_mse for a in rep.aggregates)

    @pytest.mark.parametrize("suite", ["STANDARD", "ARE", "CRE", "SRE", "NRE"])
    def test_deterministic(self, sources, suite):
        a = E.report_text(E.run_suite(E.identity_dehazer, sources, cfg(suite, seed=3)))
        b = E.report_text(E.run_suite(E.identity_dehazer, sources, cfg(suite, seed=3)))
        assert a == b

    @pytest.mark.parametrize("suite", ["STANDARD", "ARE", "CRE", "SRE", "NRE"])
    def test_oracle_dominates_identity(self, sources, suite):
        ident = E.run_suite(E.identity_dehazer, sources, cfg(suite))
        oracle = E.run_suite(E.inversion_oracle, sources, cfg(suite))
        assert oracle.mean_psnr() > ident.mean_psnr()

    def test_sweep_is_not_an_image_suite(self, sources):
        with pytest.raises(ConfigError):
            E.run_suite(E.identity_dehazer, sources, cfg("ALPHA_SWEEP"))


class TestReportFiles:
    def test_self_consistency(self, sources):
        rep = E.run_are(E.identity_dehazer, sources, cfg("ARE", a_values=[0.75, 0.95]))
        back = E.parse_report(E.report_text(rep))
        assert back.records == rep.records
        assert E.aggregate(back.records) == back.aggregates == rep.aggregates

    def test_aggregate_is_mean(self):
        recs = [E.EvalRecord("a", "c", "none", 0.1, 10.0, 0.5), E.EvalRecord("b", "c", "none", 0.3, 5.0, 0.7),
                E.EvalRecord("c", "c", "none", error="E_DATA: gone")]
        (agg,) = E.aggregate(recs)
        assert agg.n == 2 and agg.mean_mse == pytest.approx(0.2) and agg.mean_psnr == 7.5

    def test_write_report(self, sources, tmp_path):
        rep = E.run_sre(E.identity_dehazer, sources, cfg("SRE", seed=2))
        paths = E.write_report(rep, tmp_path)
        assert paths["tsv"].name == f"sre_seed2_{rep.config_hash}.tsv"
        assert paths["png"].read_bytes().startswith(b"\x89PNG")
        assert "overall" in paths["txt"].read_text()
        assert E.parse_report(paths["tsv"].read_text()).aggregates == rep.aggregates


@pytest.fixture(scope="module")
def val(sources):
    return generate_dataset(sources, 2, seed=1, size=(16, 16))


class TestAlphaSweep:
    def test_single_alpha(self, val):
        rep = E.run_alpha_sweep(lambda a, s: M.init_params(s), val, [0.4])
        assert len(rep.rows) == 1 and rep.curve()[0][0] == 0.4

    def test_alpha_zero_labeled(self, val):
        rep = E.run_alpha_sweep(lambda a, s: M.init_params(s), val, [0.0, 0.4])
        assert rep.rows[0].label == "auxiliary task removed" and rep.rows[1].label == ""
        assert "auxiliary task removed" in E.sweep_summary(rep)
        assert "auxiliary task removed" in E.sweep_text(rep)

    def test_divergence_recorded_and_sweep_continues(self, val):
        def train_fn(a, s):
            if a == 0.2:
                raise NumericError("loss became nan")
            return M.init_params(s)

        rep = E.run_alpha_sweep(train_fn, val, [0.0, 0.2, 0.4], seeds=[0, 1])
        assert len(rep.rows) == 6
        assert [r.status.split(":")[0] for r in rep.rows] == ["ok", "ok", "diverged", "diverged", "ok", "ok"]
        assert math.isnan(dict(rep.curve())[0.2])

    def test_paired_wins(self, val):
        rep = E.AlphaSweepReport([E.SweepRow(0.0, 0, 0.3), E.SweepRow(0.4, 0, 0.2),
                                  E.SweepRow(0.0, 1, 0.1), E.SweepRow(0.4, 1, 0.2)], [0, 1])
        assert rep.paired_wins(0.4, 0.0) == 1

    def test_figure(self, val, tmp_path):
        from ldtnet.plotting import plot_alpha_sweep

        rep = E.run_alpha_sweep(lambda a, s: M.init_params(s), val, [0.0, 0.5, 1.0])
        out = plot_alpha_sweep(rep, tmp_path / "sweep.png")
        assert out.read_bytes().startswith(b"\x89PNG")
