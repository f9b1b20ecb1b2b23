"""Anomaly scores of trained models and their per-transformation split."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .exceptions import NonPositiveTemperature, ShapeMismatch, UntrainedModel
from .model import TASKS
from .objectives import _normalize, classification_loss_from_logits, reconstruction_loss, task_weight


@dataclass
class ScoreBreakdown:
    as_con: float
    as_rec: float
    as_class: float
    overall: float
    contributions: np.ndarray  # (K,)


@dataclass
class ScoreTable:
    """Column-wise scores of ``n`` samples; row ``i`` is one ScoreBreakdown."""

    as_con: np.ndarray
    as_rec: np.ndarray
    as_class: np.ndarray
    overall: np.ndarray
    contributions: np.ndarray  # (n, K)

    def __len__(self):
        return len(self.overall)

    def __getitem__(self, i) -> ScoreBreakdown:
        return ScoreBreakdown(float(self.as_con[i]), float(self.as_rec[i]),
                              float(self.as_class[i]), float(self.overall[i]),
                              self.contributions[i].copy())

    def rows(self) -> list[ScoreBreakdown]:
        return [self[i] for i in range(len(self))]


def contrastive_score_terms(latents, tau: float):
    """Per-view terms ``log(1 + sum_{q != k} h(view_k, view_q))`` computed
    among each sample's own views. ``latents``: ``(n, K, D)`` -> ``(n, K)``."""
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    if latents.dim() != 3 or latents.shape[1] < 2:
        raise ShapeMismatch(f"expected latents (n, K >= 2, D), got {tuple(latents.shape)}")
    zn = _normalize(latents)
    logits = torch.einsum("nkd,nqd->nkq", zn, zn) / tau
    k = latents.shape[1]
    eye = torch.eye(k, dtype=torch.bool, device=latents.device)
    logits = logits.masked_fill(eye, float("-inf"))
    log_neg = torch.logsumexp(logits, dim=-1)
    return torch.nn.functional.softplus(log_neg)


def score_contrastive(latents, tau: float) -> float:
    """Batch-free contrastive anomaly score of one sample from its ``(K, D)``
    view latents."""
    latents = torch.as_tensor(latents)
    if latents.dim() != 2:
        raise ShapeMismatch(f"expected (K, D) latents, got {tuple(latents.shape)}")
    return float(contrastive_score_terms(latents.unsqueeze(0), tau).mean())


def _check_trained(model):
    if not getattr(model, "trained", False):
        raise UntrainedModel("model has not been trained or loaded from a checkpoint")


def _score_tensor(model, x, tau):
    out = model(x, tasks=TASKS)
    con_k = contrastive_score_terms(out["latents"], tau)
    _, rec_k = reconstruction_loss(x, out["reconstructions"])
    _, cls_k = classification_loss_from_logits(out["logits"])
    per_k = {"con": con_k, "rec": rec_k, "class": cls_k}
    contrib = torch.zeros_like(con_k)
    for t in model.tasks:
        contrib = contrib + task_weight(model.weights, t) * per_k[t]
    overall = sum(task_weight(model.weights, t) * per_k[t].mean(dim=1) for t in model.tasks)
    return per_k, contrib, overall


def score_batch(model, xs, tau: float | None = None, batch_size: int = 64,
                dtype=torch.float64) -> ScoreTable:
    """Score every sample of ``xs`` ``(n, C, L)``.

    Only the tasks the model was trained on (``model.tasks``) enter the
    overall score; all three per-task scores are reported regardless.
    ``tau`` defaults to the temperature the model was trained with.
    Computation runs in ``dtype`` on a copy of the model, so results do not
    depend on ``batch_size``.
    """
    _check_trained(model)
    tau = model.tau if tau is None else tau
    net = model
    param = next(model.parameters(), None)
    if dtype is not None and param is not None and param.dtype != dtype:
        net = copy.deepcopy(model).to(dtype)
    net.eval()
    work_dtype = dtype if dtype is not None else (param.dtype if param is not None else torch.float32)
    xs = torch.as_tensor(np.asarray(xs), dtype=work_dtype)
    if len(xs):
        model.check_input(xs)
    cols = {k: [] for k in ("con", "rec", "class", "overall", "contrib")}
    with torch.no_grad():
        for start in range(0, len(xs), max(1, int(batch_size))):
            per_k, contrib, overall = _score_tensor(net, xs[start:start + batch_size], tau)
            for t in TASKS:
                cols[t].append(per_k[t].mean(dim=1))
            cols["overall"].append(overall)
            cols["contrib"].append(contrib)
    if not cols["overall"]:
        k = model.n_transformations
        empty = np.zeros(0)
        return ScoreTable(empty, empty, empty, empty, np.zeros((0, k)))

    def cat(name):
        return torch.cat(cols[name]).cpu().numpy().astype(np.float64)

    return ScoreTable(cat("con"), cat("rec"), cat("class"), cat("overall"), cat("contrib"))


def score_sample(model, x, tau: float | None = None) -> ScoreBreakdown:
    """Score a single ``(C, L)`` series."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a (C, L) series, got shape {x.shape}")
    return score_batch(model, x[None], tau=tau, batch_size=1)[0]


# --------------------------------------------------------------------------
# Files


def write_scores(path, problem_id: str, table: ScoreTable, labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("problem_id\tsample_index\tlabel\tas_con\tas_rec\tas_class\toverall\n")
        for i in range(len(table)):
            fh.write(
                f"{problem_id}\t{i}\t{int(labels[i])}\t{float(table.as_con[i])!r}"
                f"\t{float(table.as_rec[i])!r}\t{float(table.as_class[i])!r}"
                f"\t{float(table.overall[i])!r}\n"
            )
    return path


def write_contributions(path, table: ScoreTable, labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = table.contributions.shape[1]
    with open(path, "w") as fh:
        fh.write("\t".join(["sample_index", "label"] + [f"contrib_{j + 1}" for j in range(k)]) + "\n")
        for i, row in enumerate(table.contributions):
            fh.write("\t".join([str(i), str(int(labels[i]))] + [repr(float(v)) for v in row]) + "\n")
    return path


def read_scores(path) -> dict:
    """Read a scores file into column arrays."""
    cols = {"problem_id": [], "sample_index": [], "label": [], "as_con": [], "as_rec": [],
            "as_class": [], "overall": []}
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            for name, value in zip(header, line.rstrip("\n").split("\t")):
                cols[name].append(value)
    out = {"problem_id": cols["problem_id"]}
    out["sample_index"] = np.array(cols["sample_index"], dtype=np.int64)
    out["label"] = np.array(cols["label"], dtype=np.int64)
    for name in ("as_con", "as_rec", "as_class", "overall"):
        out[name] = np.array(cols[name], dtype=np.float64)
    return out


def read_contributions(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(contributions (n, K), labels (n,))``."""
    data = np.loadtxt(path, skiprows=1, delimiter="\t", ndmin=2)
    return data[:, 2:], data[:, 1].astype(np.int64)


def export_contributions(problem, model, out_path, tau: float | None = None, batch_size: int = 64) -> Path:
    """Write the ``(n_eval, K)`` contribution matrix of ``problem``'s
    evaluation set with its labels."""
    table = score_batch(model, problem.eval_sequences, tau=tau, batch_size=batch_size)
    return write_contributions(out_path, table, problem.eval_labels)
