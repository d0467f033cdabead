"""Acceptance gate: one test per criterion, each marked with ``criterion(n, title)``.

The summary hook in ``conftest.py`` prints a PASS/FAIL line per criterion.
Criteria 7-9 train on the default synthetic corpus and take a few minutes.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from textmdd.cli import main
from textmdd.corpus import CorpusConfig, generate
from textmdd.fusion import ACTIVATIONS, KINDS, GateVariant
from textmdd.metrics import align_pair
from textmdd.model import ModelDims, ToyMDDModel, forward, init_params
from textmdd.oracles import (
    all_sequences,
    alignment_vs_recursion,
    contrastive_identities,
    ctc_vs_brute_force,
    model_gradient,
    paired_path_identity,
    summed_hinge_vs_enumeration,
)
from textmdd.train import TrainConfig, evaluate, train, with_overrides

DATA = Path(__file__).parent / "data"
COMPARE_VARIANTS = ["Baseline", "TextGate", "TextGateContrast"]


def criterion(n, title):
    return pytest.mark.criterion(n, title)


@criterion(1, "published count rows reproduce all percentage columns within 0.02 points, < 1 s")
def test_rate_reproduction(tmp_path):
    rows_path = DATA / "published_rows.json"
    expected = {r["label"]: r["expected_percent"] for r in json.loads(rows_path.read_text())["rows"]}
    out = tmp_path / "score.json"
    start = time.perf_counter()
    assert main(["score", "--counts-file", str(rows_path), "--out", str(out)]) == 0
    elapsed = time.perf_counter() - start
    rows = json.loads(out.read_text())["rows"]
    assert len(rows) == 11
    for row in rows:
        rates = row["evaluation"]["rates"]
        for key, want in expected[row["label"]].items():
            assert abs(100 * rates[key] - want) <= 0.02, (row["label"], key, 100 * rates[key], want)
    assert elapsed < 1.0


@criterion(2, "CTC forward pass equals path enumeration within 1e-9 on 1000 instances, < 60 s")
def test_ctc_oracle_equivalence():
    start = time.perf_counter()
    result = ctc_vs_brute_force(n=1000, seed=2024, max_T=6, max_V=3)
    assert result.cases >= 1000
    assert result.max_error <= 1e-9
    assert time.perf_counter() - start < 60


@criterion(3, "full-model gradients match finite differences (rel err <= 1e-4), 20 seeds x 5 kinds x contrast, < 120 s")
def test_gradient_fidelity():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        for kind in KINDS:
            for contrast in (False, True):
                worst = max(worst, model_gradient(seed, kind, contrast))
    assert worst <= 1e-4
    assert time.perf_counter() - start < 120


@criterion(4, "contrastive identities: equal pair, inactive hinge, paired-path identity, summed hinge")
def test_contrastive_identities():
    ident = contrastive_identities(n=200, seed=41)
    assert ident.max_error == 0.0
    assert paired_path_identity(n=500, seed=42).max_error <= 1e-12
    assert summed_hinge_vs_enumeration(n=120, seed=43).max_error <= 1e-9


@criterion(5, "gate clamped to 0 reproduces the audio-only lattice (1e-9); BaselineAdd equals gate 1 (1e-12)")
def test_gate_pass_through():
    dims = ModelDims(n_phones=6, d_in=5, d=8, max_text_len=8)
    rng = np.random.default_rng(5)
    for seed in range(5):
        frames = rng.normal(size=(9, dims.d_in))
        canonical = rng.integers(1, 7, size=4).tolist()
        for act in ACTIVATIONS:
            for kind in ("TextGate", "DoubleGate"):
                model = init_params(seed, dims, GateVariant(kind, act))
                clamped = forward(model, frames, canonical, gate_clamp=0.0).lattice
                audio_only = forward(model, frames, canonical, audio_only=True).lattice
                assert np.max(np.abs(clamped - audio_only)) <= 1e-9
            tg = init_params(seed, dims, GateVariant("TextGate", act))
            shared = {k: v for k, v in tg.params.items() if not k.startswith("fusion.")}
            add = ToyMDDModel(dims, GateVariant("BaselineAdd", act), shared, seed)
            diff = forward(add, frames, canonical).lattice - forward(tg, frames, canonical, gate_clamp=1.0).lattice
            assert np.max(np.abs(diff)) <= 1e-12


@criterion(6, "alignment distance equals exhaustive edit distance for all pairs up to length 6; deterministic")
def test_alignment_correctness():
    result = alignment_vs_recursion(max_len=6)
    assert result.cases == sum(3**k for k in range(7)) ** 2
    assert result.max_error == 0.0
    seqs = list(all_sequences(4))
    first = [align_pair(a, b) for a in seqs for b in seqs]
    second = [align_pair(a, b) for a in seqs for b in seqs]
    assert first == second


@pytest.fixture(scope="module")
def default_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_corpus")
    assert main(["synth", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def compare_run(default_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    start = time.perf_counter()
    code = main(["compare", "--corpus", str(default_corpus), "--out", str(out), "--deterministic",
                 "--variants"] + COMPARE_VARIANTS)
    elapsed = time.perf_counter() - start
    return code, json.loads((out / "compare.json").read_text()), elapsed, out


@pytest.mark.slow
@criterion(7, "canonical-correct and mispronounced totals are identical across model variants")
def test_count_conservation(compare_run):
    splits = generate(CorpusConfig(seed=11, n_utterances=200))
    base = TrainConfig(seed=3, d=8, epochs=1, n_audio_blocks=1, n_text_blocks=1)
    totals = set()
    for label in ["Baseline", "BaselineAdd", "DoubleGate", "TextGate", "AudioGate", "TextGateContrast"]:
        cfg = with_overrides(base, variant=label, contrast=label.endswith("Contrast"))
        model, _ = train(splits["train"], [], cfg, n_phones=12)
        ev = evaluate(model, splits["test"])
        totals.add((ev["totals"]["canonical_correct"], ev["totals"]["mispronounced"]))
    reference = evaluate(None, splits["test"], "annotation")["totals"]
    assert totals == {(reference["canonical_correct"], reference["mispronounced"])}

    _, report, _, _ = compare_run
    assert len({json.dumps(r["evaluation"]["totals"], sort_keys=True) for r in report["rows"]}) == 1


@pytest.mark.slow
@criterion(8, "default corpus, 30 epochs: dev PER < 0.15 in < 10 min; compare rows populated; contrast FA not higher")
def test_end_to_end_training(compare_run):
    code, report, elapsed, out = compare_run
    assert code == 0
    assert elapsed < 600
    assert [r["label"] for r in report["rows"]] == COMPARE_VARIANTS
    for row in report["rows"]:
        assert row["config"]["epochs"] == 30
        assert row["final_dev_per"] < 0.15
        for key, value in row["evaluation"]["rates"].items():
            assert value is not None, key
    (exp,) = report["expectations"]["contrast_fa_not_higher"]
    assert exp["holds"], exp
    assert (out / "compare.txt").exists() and (out / "per_f1.png").exists()


@pytest.mark.slow
@criterion(9, "train + eval in deterministic mode give byte-identical outputs across two runs")
def test_determinism(default_corpus, tmp_path):
    outputs = []
    for k in range(2):
        run = tmp_path / f"run{k}"
        assert main(["train", "--corpus", str(default_corpus), "--out", str(run), "--epochs", "2",
                     "--variant", "TextGateContrast", "--deterministic"]) == 0
        assert main(["eval", "--checkpoint", str(run / "checkpoint.npz"), "--corpus", str(default_corpus),
                     "--split", "dev", "--out", str(run / "eval"), "--deterministic"]) == 0
        outputs.append([(run / name).read_bytes() for name in
                        ("report.json", "checkpoint.npz", "eval/eval_dev.json")])
    assert outputs[0] == outputs[1]
