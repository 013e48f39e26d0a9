"""Training loop, evaluation, multi-trial experiment runner, and the
full-model gradient check.

Training minimizes the combined objective with Adam at a constant rate.
When the curriculum is on, each optimizer step draws the batch view from
the scheduler; when off, the train set is the union of both views. The
held-out split is scored every epoch and the best epoch is the one with
minimum phone-level MSE. Everything is a pure function of (corpus, config,
seed): reruns produce bit-identical checkpoints and logs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .curriculum import CurriculumState, TaskView, sample_task, select_view
from .data import PreparedUtterance, infer_vocab
from .gradcheck import GradCheckReport, check_gradients
from .losses import LossWeights, total_loss
from .metrics import mse, pcc
from .model import (
    ALL_ASPECTS,
    HippoParams,
    ModelConfig,
    forward,
    init_params,
    save_checkpoint,
)

_INIT_STREAM = 11
_SHUFFLE_STREAM = 13
_SPLIT_STREAM = 17


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 25
    epochs: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hidden: int = 24
    weights: LossWeights = field(default_factory=LossWeights)
    curriculum: bool = True
    cono: bool = True
    dev_fraction: float = 0.2
    eval_view: str = "hard"
    out_dir: str | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, batch size, and epochs must be positive")
        if self.eval_view not in ("easy", "hard"):
            raise ValueError("eval_view must be easy or hard")
        if not self.cono and self.weights.lambda_cono != 0.0:
            self.weights = LossWeights(
                granularity=dict(self.weights.granularity),
                lambda_d=self.weights.lambda_d, lambda_t=self.weights.lambda_t,
                lambda_cono=0.0)


class Adam:
    """Standard Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            t.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def split_corpus(prepared: list[PreparedUtterance], dev_fraction: float,
                 seed: int) -> tuple[list[PreparedUtterance], list[PreparedUtterance]]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_STREAM]))
    order = rng.permutation(len(prepared))
    n_dev = max(1, int(round(dev_fraction * len(prepared))))
    dev_idx = set(order[:n_dev].tolist())
    train = [p for i, p in enumerate(prepared) if i not in dev_idx]
    dev = [prepared[i] for i in sorted(dev_idx)]
    return train, dev


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    parts: dict
    dev: dict

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss,
                           "parts": self.parts, "dev": self.dev})


@dataclass
class TrainResult:
    params: HippoParams            # weights restored from the best epoch
    best_epoch: int
    history: list[EpochLog]
    model_config: ModelConfig

    @property
    def best_dev(self) -> dict:
        return self.history[self.best_epoch].dev


def _batches(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _snapshot(params: HippoParams) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.named_parameters().items()}


def _restore(params: HippoParams, snap: dict[str, np.ndarray]) -> None:
    for k, t in params.named_parameters().items():
        t.data = snap[k].copy()


def evaluate(params: HippoParams, prepared: list[PreparedUtterance], view: str,
             dump_embeddings=None) -> dict:
    """Per-aspect PCC plus phone-level MSE over a corpus view.

    Undefined correlations (zero variance) are reported as absent. With
    dump_embeddings set, writes one CSV row per utterance: utt_id, the
    utterance accuracy label, then the embedding components.
    """
    task = TaskView.EASY if view == "easy" else TaskView.HARD
    pairs: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {a: [] for a in ALL_ASPECTS}
    dump_rows = []
    for p in prepared:
        if p.view(task) is None:
            raise ValueError(f"{p.utt_id}: requested view {view} is missing")
        inputs, targets = select_view(p, task)
        out = forward(inputs, params, targets)
        for name in ALL_ASPECTS:
            mask = out.masks[name]
            pairs[name].append((out.preds[name].data[mask], out.targets[name][mask]))
        if dump_embeddings is not None:
            dump_rows.append((p.utt_id, float(out.targets["utt_accuracy"][0]),
                              out.z.data[0]))
    report: dict = {"n_utterances": len(prepared), "view": view, "aspects": {}}
    for name in ALL_ASPECTS:
        preds = np.concatenate([a for a, _ in pairs[name]])
        targs = np.concatenate([b for _, b in pairs[name]])
        r = pcc(preds, targs)
        entry = {"pcc": r, "n": int(len(preds))}
        if name == "phone_accuracy":
            entry["mse"] = mse(preds, targs)
        report["aspects"][name] = entry
    if dump_embeddings is not None:
        d = len(dump_rows[0][2]) if dump_rows else 0
        with open(dump_embeddings, "w") as f:
            f.write("utt_id,utt_accuracy," + ",".join(f"z{i}" for i in range(d)) + "\n")
            for utt_id, y, z in dump_rows:
                f.write(f"{utt_id},{y}," + ",".join(repr(v) for v in z) + "\n")
    return report


def _forward_batch(batch, view_for, params, weights, cono):
    preds = []
    for p in batch:
        inputs, targets = select_view(p, view_for(p))
        preds.append(forward(inputs, params, targets))
    parts: dict = {}
    loss = total_loss(preds, weights, cono=cono, parts=parts)
    return loss, parts


def train(prepared: list[PreparedUtterance], config: TrainConfig, seed: int,
          log=None) -> TrainResult:
    """One trial: returns the weights of the best epoch by dev phone MSE."""
    n_phone_types, n_word_types = infer_vocab(prepared)
    model_config = ModelConfig(n_phone_types=n_phone_types, n_word_types=n_word_types,
                               d_p=config.hidden, d_w=config.hidden, d_u=config.hidden)
    params = init_params(model_config,
                         np.random.default_rng(np.random.SeedSequence([seed, _INIT_STREAM])))
    named = params.named_parameters()
    opt = Adam(named, lr=config.lr)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, _SHUFFLE_STREAM]))

    train_set, dev_set = split_corpus(prepared, config.dev_fraction, seed)
    if config.curriculum:
        steps_per_epoch = int(np.ceil(len(train_set) / config.batch_size))
        sched = CurriculumState.fresh(total=max(1, steps_per_epoch * config.epochs),
                                      seed=seed)
        samples = list(range(len(train_set)))
    else:
        # combined dataset: every utterance contributes both views
        samples = [(i, TaskView.EASY) for i in range(len(train_set))] + \
                  [(i, TaskView.HARD) for i in range(len(train_set))]
        sched = None

    out_dir = config.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        step_log = open(os.path.join(out_dir, f"steps_seed{seed}.jsonl"), "w")
    else:
        step_log = None

    history: list[EpochLog] = []
    best_epoch, best_mse, best_snap = -1, np.inf, None
    step = 0
    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(len(samples))
            losses = []
            last_parts: dict = {}
            for batch_ids in _batches(order, config.batch_size):
                if sched is not None:
                    view = sample_task(sched)
                    batch = [train_set[samples[i]] for i in batch_ids]
                    view_for = lambda p, v=view: v
                else:
                    batch = [train_set[samples[i][0]] for i in batch_ids]
                    views = [samples[i][1] for i in batch_ids]
                    lookup = {id(p): v for p, v in zip(batch, views)}
                    view_for = lambda p, lk=lookup: lk[id(p)]
                loss, parts = _forward_batch(batch, view_for, params,
                                             config.weights, config.cono)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step} "
                        f"(batch of {len(batch)}, first utt {batch[0].utt_id})")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.data))
                last_parts = parts
                if step_log is not None:
                    step_log.write(json.dumps({"step": step, "epoch": epoch, **parts}) + "\n")
                step += 1

            dev_report = evaluate(params, dev_set, config.eval_view)
            entry = EpochLog(epoch=epoch, train_loss=float(np.mean(losses)),
                             parts=last_parts, dev=dev_report)
            history.append(entry)
            phone_mse = dev_report["aspects"]["phone_accuracy"]["mse"]
            if phone_mse < best_mse:
                best_mse, best_epoch, best_snap = phone_mse, epoch, _snapshot(params)
            if out_dir:
                save_checkpoint(params, os.path.join(out_dir, f"seed{seed}_epoch{epoch}.json"))
                with open(os.path.join(out_dir, f"metrics_seed{seed}.jsonl"), "a") as f:
                    f.write(entry.to_json() + "\n")
            if log:
                log(f"seed {seed} epoch {epoch}: loss {entry.train_loss:.4f} "
                    f"dev phone mse {phone_mse:.4f}")
    finally:
        if step_log is not None:
            step_log.close()

    _restore(params, best_snap)
    if out_dir:
        save_checkpoint(params, os.path.join(out_dir, f"seed{seed}_best.json"))
    return TrainResult(params=params, best_epoch=best_epoch, history=history,
                       model_config=model_config)


@dataclass
class MetricReport:
    """Mean and standard deviation per aspect over independent trials."""

    aspects: dict          # name -> {"pcc_mean", "pcc_std", ...}
    phone_mse_mean: float
    phone_mse_std: float
    n_trials: int
    best_epochs: list[int]

    def lines(self) -> list[str]:
        out = [f"{'aspect':18s} {'pcc':>8s} {'std':>8s}"]
        for name, entry in self.aspects.items():
            if entry["pcc_mean"] is None:
                out.append(f"{name:18s} {'absent':>8s} {'':>8s}")
            else:
                out.append(f"{name:18s} {entry['pcc_mean']:8.4f} {entry['pcc_std']:8.4f}")
        out.append(f"{'phone_mse':18s} {self.phone_mse_mean:8.4f} {self.phone_mse_std:8.4f}")
        return out

    def to_json(self) -> str:
        return json.dumps({"aspects": self.aspects, "phone_mse_mean": self.phone_mse_mean,
                           "phone_mse_std": self.phone_mse_std, "n_trials": self.n_trials,
                           "best_epochs": self.best_epochs})


def aggregate_reports(reports: list[dict], best_epochs: list[int]) -> MetricReport:
    aspects = {}
    for name in ALL_ASPECTS:
        vals = [r["aspects"][name]["pcc"] for r in reports]
        present = [v for v in vals if v is not None]
        if present:
            aspects[name] = {"pcc_mean": float(np.mean(present)),
                             "pcc_std": float(np.std(present))}
        else:
            aspects[name] = {"pcc_mean": None, "pcc_std": None}
    mses = [r["aspects"]["phone_accuracy"]["mse"] for r in reports]
    return MetricReport(aspects=aspects, phone_mse_mean=float(np.mean(mses)),
                        phone_mse_std=float(np.std(mses)), n_trials=len(reports),
                        best_epochs=best_epochs)


def run_experiment(prepared: list[PreparedUtterance], config: TrainConfig,
                   log=None) -> MetricReport:
    """Independent trials over config.seeds; each trial's best epoch (by dev
    phone MSE) is evaluated and the trial metrics are averaged."""
    reports, best_epochs = [], []
    for seed in config.seeds:
        result = train(prepared, config, seed, log=log)
        _, dev_set = split_corpus(prepared, config.dev_fraction, seed)
        reports.append(evaluate(result.params, dev_set, config.eval_view))
        best_epochs.append(result.best_epoch)
    return aggregate_reports(reports, best_epochs)


# ---------------------------------------------------------------------------
# full-model gradient check
# ---------------------------------------------------------------------------


def _gradcheck_batch(seed: int = 0) -> list[PreparedUtterance]:
    from .corpus import CorpusConfig, generate_corpus
    from .data import prepare_corpus

    cfg = CorpusConfig(inventory_size=4, lexicon_size=8, n_utterances=2,
                       words_range=(2, 3), phones_per_word=(2, 3),
                       frames_per_phone=(2, 3), target_wers=(0.3,), seed=seed)
    return prepare_corpus(generate_corpus(cfg))


def gradcheck(hidden: int = 8, seed: int = 0, coords_per_group: int = 4,
              tolerance: float = 1e-4, corrupt: str | None = None) -> GradCheckReport:
    """Check analytic gradients of the full objective on a tiny two-utterance
    batch against central finite differences, group by group."""
    prepared = _gradcheck_batch(seed)
    n_phone_types, n_word_types = infer_vocab(prepared)
    model_config = ModelConfig(n_phone_types=n_phone_types, n_word_types=n_word_types,
                               d_p=hidden, d_w=hidden, d_u=hidden)
    params = init_params(model_config,
                         np.random.default_rng(np.random.SeedSequence([seed, _INIT_STREAM])))
    weights = LossWeights()

    def build_loss():
        preds = []
        for p in prepared:
            for pair in (p.easy, p.hard):
                inputs, targets = pair
                preds.append(forward(inputs, params, targets))
        return total_loss(preds, weights, cono=True)

    grad_scale = {corrupt: 1.5} if corrupt else None
    return check_gradients(build_loss, params.named_parameters(),
                           coords_per_group=coords_per_group, tolerance=tolerance,
                           seed=seed, grad_scale=grad_scale)
