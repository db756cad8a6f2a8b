import json
from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_encoder_config, tiny_head_config
from wavprompt.data import SyntheticSpec, make_benchmark, read_manifest
from wavprompt.encoder import EncoderConfig
from wavprompt.errors import ContractError
from wavprompt.evaluation import (ResultMatrix, ScoreRecord, attention_map, compute_eer, cross_type_eval,
                                  eer_from_scores, export_attention, export_embeddings, param_report,
                                  param_report_for_config, read_attention, read_scores, rescore_dir,
                                  sample_cells, write_scores)
from wavprompt.head import HeadConfig
from wavprompt.model import Detector
from wavprompt.prompting import Paradigm


def oracle_eer(real, fake):
    """O(n^2) sweep: every candidate threshold is checked against every score."""
    values = sorted(set(real) | set(fake))
    thresholds = [-np.inf] + [(a + b) / 2 for a, b in zip(values, values[1:])] + [np.inf]
    best = None
    for th in thresholds:
        accepted = sum(1 for s in fake if s >= th)
        rejected = sum(1 for s in real if s < th)
        far, frr = Fraction(accepted, len(fake)), Fraction(rejected, len(real))
        key = (abs(far - frr), far + frr)
        if best is None or key < best[0]:
            best = (key, accepted, rejected)
    _, accepted, rejected = best
    return float((accepted / len(fake) + rejected / len(real)) / 2)


def records(real, fake):
    return ([ScoreRecord(f"r{i}", float(s), "real", "speech") for i, s in enumerate(real)]
            + [ScoreRecord(f"f{i}", float(s), "fake", "speech") for i, s in enumerate(fake)])


def test_perfect_separation():
    assert compute_eer(records([0.9, 0.8], [0.1, 0.2])) == 0.0


def test_inverted_scorer():
    assert compute_eer(records([0.1, 0.2], [0.8, 0.9])) == 1.0


def test_constant_scores_give_half():
    assert compute_eer(records([0.3] * 5, [0.3] * 7)) == 0.5


def test_single_class_raises():
    with pytest.raises(ContractError):
        compute_eer(records([0.1, 0.2], []))


def test_non_finite_score_rejected():
    with pytest.raises(ContractError):
        ScoreRecord("a", float("nan"), "real", "speech")


def test_forty_random_records_match_oracle(rng):
    real, fake = rng.standard_normal(20) + 0.5, rng.standard_normal(20)
    assert compute_eer(records(real, fake)) == oracle_eer(list(real), list(fake))


def test_oracle_agreement_many_instances():
    g = np.random.default_rng(99)
    for _ in range(300):
        n_real, n_fake = g.integers(1, 60, size=2)
        # coarse rounding produces plenty of ties
        real = np.round(g.standard_normal(n_real) + g.uniform(0, 2), 1)
        fake = np.round(g.standard_normal(n_fake), 1)
        assert eer_from_scores(real, fake)[0] == oracle_eer(list(real), list(fake))


# integer-valued scores keep ties likely and every transform strictly monotone in floating point
SCORES = st.lists(st.integers(-40, 40), min_size=1, max_size=30)


@settings(max_examples=80, deadline=None)
@given(SCORES, SCORES)
def test_monotone_transform_invariance(real, fake):
    base = eer_from_scores(np.array(real, float), np.array(fake, float))[0]
    for f in (lambda s: np.exp(s / 4), lambda s: 3 * s - 7, lambda s: np.arctan(s / 10)):
        assert eer_from_scores(f(np.array(real, float)), f(np.array(fake, float)))[0] == base


@settings(max_examples=80, deadline=None)
@given(SCORES, SCORES)
def test_label_swap_symmetry(real, fake):
    a = eer_from_scores(np.array(real, float), np.array(fake, float))[0]
    b = eer_from_scores(-np.array(fake, float), -np.array(real, float))[0]
    assert a == b


def test_score_file_round_trip(tmp_path, rng):
    recs = records(rng.standard_normal(5), rng.standard_normal(4))
    write_scores(tmp_path / "s.tsv", recs, {"config_digest": "abc", "seed": 1})
    text = (tmp_path / "s.tsv").read_text()
    assert text.startswith("# config_digest=abc\n# seed=1\nclip_id\tscore\tlabel\taudio_type\n")
    assert read_scores(tmp_path / "s.tsv") == recs


# -- result matrix --------------------------------------------------------------------------


def test_matrix_avg_and_tsv(tmp_path, rng):
    m = ResultMatrix(["speech", "sound"], ("speech", "sound", "singing", "music"), rng.uniform(0, 50, (2, 4)))
    assert m.shape == (2, 5)
    assert abs(m.with_avg()[:, 4] - m.cells.mean(axis=1)).max() <= 1e-12
    m.to_tsv(tmp_path / "m.tsv", {"seed": 3})
    back = ResultMatrix.from_tsv(tmp_path / "m.tsv")
    assert back.row_names == m.row_names and back.types == m.types
    np.testing.assert_array_equal(back.cells, m.cells)
    assert "AVG" in m.format_table()


class ConstantModel:
    encoder_config = EncoderConfig(clip_len=400, frontend=((4, 40, 20),))

    def forward(self, waves):
        return SimpleNamespace(scores=np.full(len(waves), 0.25))


@pytest.fixture(scope="module")
def small_bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    make_benchmark(SyntheticSpec(train=6, dev=4, eval=6, clip_len=400, seed=3), root)
    return root


def eval_manifests(root):
    return {t: root / f"{t}_eval.tsv" for t in ("speech", "sound", "singing", "music")}


def test_constant_model_gives_half_everywhere(tmp_path, small_bench):
    row = cross_type_eval(ConstantModel(), eval_manifests(small_bench), tmp_path, {"seed": 0})
    assert row == {"speech": 50.0, "sound": 50.0, "singing": 50.0, "music": 50.0, "AVG": 50.0}
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["seed"] == 0 and metrics["eer_percent"]["AVG"] == 50.0


def test_rescore_reproduces_row(tmp_path, small_bench):
    model = Detector(Paradigm("WPT", 2, 4), tiny_encoder_config(clip_len=400), tiny_head_config(), seed=1)
    row = cross_type_eval(model, eval_manifests(small_bench), tmp_path)
    assert rescore_dir(tmp_path, list(eval_manifests(small_bench))) == row
    assert abs(row["AVG"] - np.mean([row[t] for t in eval_manifests(small_bench)])) <= 1e-12


def test_empty_manifest_raises(tmp_path, small_bench):
    empty = tmp_path / "empty.tsv"
    empty.write_text("clip_id\tpath\taudio_type\tlabel\tsplit\n")
    with pytest.raises(ContractError):
        cross_type_eval(ConstantModel(), {"speech": empty}, tmp_path / "out")


# -- exports --------------------------------------------------------------------------------


def test_attention_export(tmp_path, rng):
    cfg = tiny_encoder_config()
    model = Detector(Paradigm("WPT", 6, 4), cfg, tiny_head_config(), seed=1)
    wave = rng.standard_normal(cfg.clip_len) * 0.1
    attn = export_attention(model, wave, tmp_path / "a.tsv", {"seed": 1})
    t = cfg.token_count()
    assert attn.shape == (10 + t, 10 + t)
    mat, legend = read_attention(tmp_path / "a.tsv")
    np.testing.assert_array_equal(mat, attn)
    assert legend[:10] == ["LL", "LH", "HL", "HH"] + ["prompt"] * 6 and set(legend[10:]) == {"audio"}
    assert np.abs(mat.sum(axis=1) - 1).max() <= 1e-10
    export_attention(model, wave, tmp_path / "b.tsv", {"seed": 1})
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_delpt_attention_legend_covers_prompts(rng):
    cfg = tiny_encoder_config()
    model = Detector(Paradigm("DelPT", 3), cfg, tiny_head_config())
    attn, legend = attention_map(model, rng.standard_normal(cfg.clip_len) * 0.1)
    assert attn.shape[0] == len(legend) == 3 + cfg.token_count()


def test_sample_cells_counts_and_determinism(small_bench):
    entries = read_manifest(small_bench / "all_eval.tsv")
    picked = sample_cells(entries, 2, seed=5)
    assert len(picked) == 16
    assert picked == sample_cells(entries, 2, seed=5)
    assert len(sample_cells(entries, 1000, seed=5)) == len(entries)


def test_embedding_export(tmp_path, small_bench):
    model = Detector(Paradigm("PT", 2), tiny_encoder_config(clip_len=400), tiny_head_config(), seed=1)
    n = export_embeddings(model, small_bench / "all_eval.tsv", 2, tmp_path / "e.tsv", seed=4)
    lines = [ln for ln in (tmp_path / "e.tsv").read_text().splitlines() if not ln.startswith("#")]
    assert n == 16 and len(lines) == 17
    assert len(lines[0].split("\t")) == 3 + tiny_head_config().embedding_dim


# -- parameter reports ----------------------------------------------------------------------


def test_param_report_fr_is_head_only():
    cfg = tiny_encoder_config()
    model = Detector(Paradigm("FR", 0, 0), cfg, tiny_head_config())
    rep = param_report(model)
    assert rep["trainable"] == tiny_head_config().param_count(cfg.model_dim)
    assert rep["modules"]["head"]["frozen"] == 0


def test_param_report_matches_closed_form():
    cfg, hc = tiny_encoder_config(), tiny_head_config()
    for par in (Paradigm("FR", 0, 0), Paradigm("FT", 0, 0), Paradigm("WPT", 6, 4), Paradigm("ShallowPT", 2)):
        built = param_report(Detector(par, cfg, hc))
        closed = param_report_for_config(par, cfg, hc)
        assert built["trainable"] == closed["trainable"]
        assert built["frozen"] == closed["frozen"]


def test_full_scale_pt_report():
    rep = param_report_for_config(Paradigm("PT", 10), EncoderConfig.full_scale(), HeadConfig.full_scale())
    assert rep["trainable"] == 696_306
    assert abs(rep["trainable"] - 690_000) <= 20_000
    assert rep["ft_trainable"] == 24 * 12_596_224 + 450_546
