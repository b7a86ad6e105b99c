import dataclasses

import numpy as np
import pytest
import torch

from conftest import tiny_encoder, tiny_head
from oracles import population_std_mean
from slslr.augment import AugmentationConfig, make_positive_pair
from slslr.loss import sl_fpn_loss
from slslr.model import Checkpoint
from slslr.trainer import (
    ABLATION_VARIANTS,
    LOG_COLUMNS,
    PretrainConfig,
    TrainLog,
    ablation_config,
    build_model,
    embedding_std,
    pretrain,
    run_ablation_suite,
)


def test_embedding_std_examples():
    assert embedding_std(torch.ones(5, 3)) == 0.0
    z = torch.tensor([[0.0, 0.0], [2.0, 4.0]])
    assert embedding_std(z) == pytest.approx((1.0 + 2.0) / 2)
    with pytest.raises(ValueError):
        embedding_std(torch.ones(1, 3))


def test_embedding_std_matches_oracle(rng):
    for _ in range(20):
        z = rng.standard_normal((int(rng.integers(2, 12)), int(rng.integers(1, 9))))
        assert embedding_std(torch.from_numpy(z)) == pytest.approx(population_std_mean(z.tolist()), abs=1e-12)


def test_config_rejects_bad_values(tiny_cfg):
    for change in ({"epochs": 0}, {"batch_size": 1}, {"learning_rate": -1.0}, {"collapse_log_every": 0}):
        with pytest.raises(ValueError):
            dataclasses.replace(tiny_cfg, **change).check()


def test_epochs_zero_raises(small_dataset, tiny_cfg):
    with pytest.raises(ValueError, match="epochs"):
        pretrain(small_dataset, dataclasses.replace(tiny_cfg, epochs=0))


def test_empty_dataset_raises(small_dataset, tiny_cfg):
    with pytest.raises(ValueError, match="empty"):
        pretrain(small_dataset.subset([]), tiny_cfg)


def test_same_seed_gives_identical_checkpoint_and_log(small_dataset, tiny_cfg, tmp_path):
    a, log_a = pretrain(small_dataset, tiny_cfg)
    b, log_b = pretrain(small_dataset, tiny_cfg)
    assert a == b
    assert log_a.to_csv() == log_b.to_csv()
    c, _ = pretrain(small_dataset, dataclasses.replace(tiny_cfg, seed=2))
    assert a != c


def test_log_layout_and_round_trip(small_dataset, tiny_cfg, tmp_path):
    _, log = pretrain(small_dataset, dataclasses.replace(tiny_cfg, collapse_log_every=2))
    steps = log.column("step")
    assert list(steps) == list(range(0, 6, 2))
    assert np.isfinite(np.stack([log.column(c) for c in LOG_COLUMNS])).all()
    path = tmp_path / "log.csv"
    log.write_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(LOG_COLUMNS)
    assert TrainLog.read_csv(path).to_csv() == log.to_csv()


def test_loss_terms_logged_sum_to_total(small_dataset, tiny_cfg):
    _, log = pretrain(small_dataset, tiny_cfg)
    total = log.column("l1") + log.column("l2") + log.column("l3")
    np.testing.assert_allclose(total, log.column("total"), rtol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_decreases_over_training(small_dataset, seed):
    cfg = PretrainConfig(
        epochs=67,
        batch_size=8,
        learning_rate=0.5,
        seed=seed,
        encoder=tiny_encoder(dropout=0.0),
        head=tiny_head(),
    )
    _, log = pretrain(small_dataset, cfg)
    total = log.column("total")
    assert len(total) == 201
    assert total[-20:].mean() < total[:20].mean()


def _frozen_batch(dataset, cfg, seed):
    r = np.random.default_rng(seed)
    x = dataset.stacked(cfg.encoder.max_len)[:8]
    pairs = [make_positive_pair(s, "part_permutation", cfg.augmentation, r) for s in x]
    to = lambda a: torch.from_numpy(np.stack(a)).double()  # noqa: E731
    return to(list(x)), to([p[0] for p in pairs]), to([p[1] for p in pairs])


def _step_and_loss(model, batch, lr):
    opt = torch.optim.SGD(model.parameters(), lr=lr)
    before = sl_fpn_loss(*model.forward_three_branch(*batch)).total
    opt.zero_grad()
    before.backward()
    opt.step()
    after = sl_fpn_loss(*model.forward_three_branch(*batch)).total
    return before.item(), after.item()


def test_zero_lr_step_leaves_parameters_bit_identical(small_dataset, tiny_cfg):
    torch.manual_seed(0)
    model = build_model(small_dataset, tiny_cfg).double().eval()
    start = Checkpoint.from_model(model)
    _step_and_loss(model, _frozen_batch(small_dataset, tiny_cfg, 0), 0.0)
    assert Checkpoint.from_model(model) == start


def test_small_step_decreases_loss(small_dataset, tiny_cfg):
    passed = 0
    for trial in range(20):
        torch.manual_seed(trial)
        model = build_model(small_dataset, tiny_cfg).double().eval()
        before, after = _step_and_loss(model, _frozen_batch(small_dataset, tiny_cfg, trial), 1e-5)
        passed += after < before
    assert passed >= 18


def test_ablation_config_flags(tiny_cfg):
    flags = lambda c: (c.no_predictor, c.no_layernorm, c.no_original, c.permuted_branches)  # noqa: E731
    assert flags(ablation_config(tiny_cfg, "full")) == (False, False, False, False)
    assert flags(ablation_config(tiny_cfg, "without_p_and_LN")) == (True, True, False, False)
    assert flags(ablation_config(tiny_cfg, "without_p_with_LN")) == (True, False, False, False)
    assert flags(ablation_config(tiny_cfg, "without_o")) == (False, False, True, False)
    assert flags(ablation_config(tiny_cfg, "perm")) == (False, False, False, True)
    with pytest.raises(ValueError):
        ablation_config(tiny_cfg, "nope")


def test_no_layernorm_removes_input_norms(small_dataset, tiny_cfg):
    cfg = ablation_config(tiny_cfg, "without_p_and_LN")
    assert cfg.encoder_for(small_dataset).input_layernorm_count == 0
    assert tiny_cfg.encoder_for(small_dataset).input_layernorm_count == 2


def test_ablation_suite_runs_every_variant(small_dataset, tiny_cfg):
    cfg = dataclasses.replace(tiny_cfg, epochs=1)
    out = run_ablation_suite(small_dataset, cfg)
    assert tuple(out) == ABLATION_VARIANTS
    for ckpt, log in out.values():
        assert np.isfinite(log.column("embedding_std")).all()
    standalone, _ = pretrain(small_dataset, cfg)
    assert out["full"][0] == standalone


def test_classical_and_combined_modes_train(small_dataset, tiny_cfg):
    for mode in ("classical", "combined"):
        cfg = dataclasses.replace(tiny_cfg, epochs=1, augmentation=AugmentationConfig(mode=mode))
        _, log = pretrain(small_dataset, cfg)
        assert np.isfinite(log.column("total")).all()
