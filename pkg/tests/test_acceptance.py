"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a machine-greppable verdict line; run with

    pytest tests/test_acceptance.py -v -s
"""

from pathlib import Path
import time

import numpy as np
import pytest

from conftest import make_separable
from fuselab import backend, cli, data, fusion, metrics, numerics, training
from fuselab.errors import FormatError

D = fusion.MODEL_DIM


def _verdict(ok: bool, name: str, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_acceptance_gradient_fidelity():
    """End-to-end focal-loss (gamma=2) gradients vs central differences,
    float64, eps=1e-3: max relative error < 1e-4 for every parameter block of
    every fusion kind, under a 5-minute budget."""
    start = time.time()
    worst = 0.0
    worst_block = ""
    for kind in fusion.FusionKind.ALL:
        errors = fusion.model_grad_check(kind, eps=1e-3, seed=7, gamma=2.0,
                                         samples_per_block=24)
        for name, err in errors.items():
            if err > worst:
                worst, worst_block = err, f"{kind}/{name}"
    elapsed = time.time() - start
    _verdict(worst < 1e-4 and elapsed < 300.0, "gradient-fidelity",
             f"max rel err {worst:.2e} at {worst_block}, {elapsed:.1f}s")


def test_acceptance_attention_identities():
    """(a) single-key attention returns v with weight exactly 1.0;
    (b) dual-attention intermediates equal the value projections, 1e-6 in
    32-bit and 1e-12 in 64-bit, over 100 random inputs;
    (c) self-attention over identical tokens weights both 0.5 within 1e-6."""
    rng = np.random.default_rng(99)
    # (a)
    q = rng.normal(size=(1, 8))
    k = rng.normal(size=(1, 8))
    v = rng.normal(size=(1, 5))
    out = numerics.scaled_dot_attention(q, k, v, 8)
    ok_a = out.weights[0, 0] == 1.0 and np.array_equal(out.output, v)
    # (b)
    ok_b = True
    for dtype, tol in ((np.float32, 1e-6), (np.float64, 1e-12)):
        for _ in range(100):
            cross_t = fusion.AttentionWeights(*(rng.normal(0, 0.1, (D, D)).astype(dtype)
                                                for _ in range(3)))
            cross_v = fusion.AttentionWeights(*(rng.normal(0, 0.1, (D, D)).astype(dtype)
                                                for _ in range(3)))
            t = rng.normal(size=D).astype(dtype)
            vv = rng.normal(size=D).astype(dtype)
            t_prime, v_prime = fusion.cross_modal_adjust(t, vv, cross_t, cross_v)
            ref_t = backend.matmul(vv[None], cross_v.w_v)[0]
            ref_v = backend.matmul(t[None], cross_t.w_v)[0]
            ok_b &= bool(np.max(np.abs(t_prime - ref_t)) <= tol)
            ok_b &= bool(np.max(np.abs(v_prime - ref_v)) <= tol)
            if dtype is np.float64:  # independent oracle, rounding permitting
                ok_b &= np.allclose(t_prime, vv @ cross_v.w_v, rtol=1e-12, atol=1e-12)
                ok_b &= np.allclose(v_prime, t @ cross_t.w_v, rtol=1e-12, atol=1e-12)
    # (c)
    ok_c = True
    for _ in range(20):
        attn = fusion.AttentionWeights(*(rng.normal(0, 0.1, (D, D)) for _ in range(3)))
        t = rng.normal(size=D)
        tokens = np.stack([t, t])[None]
        weights, _ = backend.attention_forward(
            backend.matmul(tokens[0], attn.w_q)[None],
            backend.matmul(tokens[0], attn.w_k)[None],
            backend.matmul(tokens[0], attn.w_v)[None], fusion.ATTN_SCALE)
        ok_c &= bool(np.max(np.abs(weights - 0.5)) <= 1e-6)
    _verdict(ok_a and ok_b and ok_c, "attention-identities",
             f"single-key exact={ok_a}, dual intermediates={ok_b}, equal-token 0.5={ok_c}")


def test_acceptance_loss_reductions():
    """focal(gamma=0) == cross-entropy within 1e-12 on 1000 random pairs;
    focal <= cross-entropy for gamma in {2, 3, 4} everywhere."""
    rng = np.random.default_rng(5)
    max_gap = 0.0
    ok_order = True
    for _ in range(1000):
        p = rng.uniform(1e-6, 1.0, 3)
        p /= p.sum()
        label = int(rng.integers(0, 3))
        ce = training.cross_entropy(p, label)
        max_gap = max(max_gap, abs(training.focal_loss(p, label, 0.0) - ce))
        for gamma in (2.0, 3.0, 4.0):
            ok_order &= training.focal_loss(p, label, gamma) <= ce
    _verdict(max_gap <= 1e-12 and ok_order, "loss-reductions",
             f"gamma=0 gap {max_gap:.2e}, focal<=ce holds={ok_order}")


def test_acceptance_metric_oracle():
    """MetricsReport equals a per-sample brute-force oracle exactly on 1000
    random prediction/label vectors (n=200), including zero-support cases."""
    from test_metrics import oracle_report
    rng = np.random.default_rng(17)
    exact = True
    for trial in range(1000):
        labels = rng.integers(0, 3, 200)
        preds = rng.integers(0, 3, 200)
        if trial % 10 == 0:  # zero-support edge case
            labels = np.full(200, int(rng.integers(0, 3)))
            preds = rng.integers(0, 2, 200) * 2
        rep = metrics.evaluate(preds, labels)
        acc, per_class, macro, weighted = oracle_report(list(preds), list(labels))
        exact &= rep.accuracy == acc and rep.macro_f1 == macro and rep.weighted_f1 == weighted
        exact &= all(rep.precision[c] == per_class[c][0]
                     and rep.recall[c] == per_class[c][1]
                     and rep.f1[c] == per_class[c][2] for c in range(3))
        if not exact:
            break
    _verdict(exact, "metric-oracle", "1000/1000 vectors match exactly" if exact
             else f"mismatch at trial {trial}")


@pytest.mark.parametrize("kind", fusion.FusionKind.ALL)
def test_acceptance_trainability(kind):
    """64 separable samples (class means offset 2.0, unit variance): each kind
    reaches 100% training accuracy within 200 epochs at lr=1e-3, gamma=2,
    dropout=0, in under 2 minutes."""
    start = time.time()
    train_set = make_separable(sizes=(22, 21, 21), offset=2.0, noise=1.0, seed=50)
    val_set = make_separable(sizes=(4, 4, 4), offset=2.0, noise=1.0, seed=51, prefix="v")
    config = training.TrainConfig(learning_rate=1e-3, focal_gamma=2.0, dropout_rate=0.0,
                                  loss_kind="focal", batch_size=32, max_epochs=200,
                                  patience=200, seed=9, selection_metric="accuracy")
    model = fusion.init_params(kind, seed=9)
    model, history = training.train(model, train_set, val_set, config)
    xt, xv, y = train_set.to_arrays()
    acc = training.evaluate_model(model, xt, xv, y).accuracy
    elapsed = time.time() - start
    _verdict(acc == 1.0 and elapsed < 120.0, f"trainability[{kind}]",
             f"train accuracy {acc:.3f} after {len(history.epochs)} epochs, {elapsed:.1f}s")


def test_acceptance_determinism(tmp_path, capsys):
    """Two `train` invocations with identical flags and seed produce
    byte-identical model files and identical history CSVs."""
    train_set = make_separable(sizes=(8, 8, 8), seed=60)
    val_set = make_separable(sizes=(4, 4, 4), seed=61, prefix="v")
    train_path, val_path = str(tmp_path / "tr.mmeb"), str(tmp_path / "va.mmeb")
    data.save_embeddings(train_set, train_path)
    data.save_embeddings(val_set, val_path)
    outputs = []
    for name in ("one", "two"):
        out = str(tmp_path / f"{name}.fmdl")
        code = cli.main(["train", "--model", "dual-attn", "--train", train_path,
                         "--val", val_path, "--lr", "1e-3", "--gamma", "2",
                         "--dropout", "0.2", "--seed", "42", "--epochs", "6",
                         "--quiet", "--out", out])
        capsys.readouterr()
        assert code == 0
        outputs.append((Path(out).read_bytes(),
                        Path(str(tmp_path / f"{name}.history.csv")).read_text()))
    same_model = outputs[0][0] == outputs[1][0]
    same_history = outputs[0][1] == outputs[1][1]
    _verdict(same_model and same_history, "determinism",
             f"model bytes identical={same_model}, history identical={same_history}")


def test_acceptance_format_round_trips(tmp_path):
    """save -> load -> save is byte-identical for embedding and model files;
    malformed headers and truncated payloads raise format errors."""
    ds = make_separable(sizes=(4, 4, 4), seed=70)
    e1, e2 = str(tmp_path / "a.mmeb"), str(tmp_path / "b.mmeb")
    data.save_embeddings(ds, e1)
    data.save_embeddings(data.load_embeddings(e1), e2)
    emb_ok = Path(e1).read_bytes() == Path(e2).read_bytes()

    model = fusion.init_params(fusion.FusionKind.DUAL_ATTENTION, seed=3)
    m1, m2 = str(tmp_path / "a.fmdl"), str(tmp_path / "b.fmdl")
    fusion.save_model(model, m1)
    fusion.save_model(fusion.load_model(m1), m2)
    model_ok = Path(m1).read_bytes() == Path(m2).read_bytes()

    rejects = 0
    for path, loader in ((e1, data.load_embeddings), (m1, fusion.load_model)):
        blob = Path(path).read_bytes()
        bad_header = tmp_path / "bad_header"
        bad_header.write_bytes(b"XXXX" + blob[4:])
        truncated = tmp_path / "truncated"
        truncated.write_bytes(blob[:-9])
        for bad in (bad_header, truncated):
            try:
                loader(str(bad))
            except FormatError:
                rejects += 1
    _verdict(emb_ok and model_ok and rejects == 4, "format-round-trips",
             f"embeddings identical={emb_ok}, model identical={model_ok}, "
             f"malformed rejected {rejects}/4")


def test_acceptance_grid_cardinality():
    """The default grid enumerates exactly 108 cells (4 lrs x 3 dropouts x
    3 gammas x 3 kinds) and the reported best attains the column maximum."""
    grid = training.ParamGrid()
    n_cells = len(grid.cells())
    train_set = make_separable(sizes=(5, 5, 5), seed=80)
    val_set = make_separable(sizes=(3, 3, 3), seed=81, prefix="v")
    base = training.TrainConfig(max_epochs=1, patience=1, seed=2,
                                selection_metric="accuracy")
    result = training.grid_search(train_set, val_set, base, grid)
    values = [c.metric for c in result.cells if c.metric is not None]
    argmax_ok = result.best is not None and result.best.metric == max(values)
    _verdict(n_cells == 108 and len(result.cells) == 108 and argmax_ok,
             "grid-cardinality",
             f"cells={n_cells}, ran={len(result.cells)}, best={result.best.metric:.3f} "
             f"== column max={max(values):.3f}")
