"""Numerical link between mean-feature matching and last-layer
mean-gradient matching.

For softmax cross-entropy the gradient of the loss w.r.t. head row j is
(p_j - 1[j = y]) * e, a probability-weighted copy of the feature. With a
zeroed head the probabilities are exactly uniform, so each mean-gradient
row is the mean feature scaled by (1-C)/C (true row) or 1/C (others).
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ContractError


def last_layer_gradient_closed_form(embeddings: torch.Tensor,
                                    head_weight: torch.Tensor,
                                    labels: torch.Tensor) -> torch.Tensor:
    """Per-sample gradient of softmax cross-entropy w.r.t. the head rows.

    Returns g[i, j, :] = (p[i, j] - 1[j == y_i]) * e_i for embeddings
    [B, d'], head weight [C, d'], labels [B].
    """
    num_classes = head_weight.shape[0]
    if labels.numel() and (int(labels.max()) >= num_classes or int(labels.min()) < 0):
        raise ContractError("label out of range for the classifier head")
    logits = embeddings @ head_weight.T
    probs = torch.softmax(logits, dim=1)
    onehot = torch.zeros_like(probs)
    onehot[torch.arange(labels.shape[0]), labels] = 1.0
    return (probs - onehot).unsqueeze(2) * embeddings.unsqueeze(1)


def equivalence_check(net: nn.Module, batch_real: torch.Tensor,
                      batch_synth: torch.Tensor, label: int,
                      enforce_uniform: bool = False) -> dict:
    """Compare mean-feature difference to mean last-layer gradient difference.

    Both batches must belong to the one class `label`. With
    `enforce_uniform` the head is zeroed, realizing exactly-uniform
    predicted probabilities; per-row gradient-to-feature norm ratios then
    equal (C-1)/C for the true row and 1/C for the rest.
    """
    if batch_real.ndim != 4 or batch_synth.ndim != 4:
        raise ContractError("expected [B, C, H, W] batches")
    head = net.head
    num_classes = head.weight.shape[0]
    if not 0 <= label < num_classes:
        raise ContractError("label out of range")
    if enforce_uniform:
        with torch.no_grad():
            head.weight.zero_()
            if head.bias is not None:
                head.bias.zero_()
    with torch.no_grad():
        e_real = net.embed(batch_real)
        e_synth = net.embed(batch_synth)
        labels_r = torch.full((e_real.shape[0],), label, dtype=torch.long)
        labels_s = torch.full((e_synth.shape[0],), label, dtype=torch.long)
        g_real = last_layer_gradient_closed_form(e_real, head.weight, labels_r)
        g_synth = last_layer_gradient_closed_form(e_synth, head.weight, labels_s)
        feat_diff = e_real.mean(dim=0) - e_synth.mean(dim=0)
        grad_diff = g_real.mean(dim=0) - g_synth.mean(dim=0)  # [C, d']
        probs = torch.softmax(e_real @ head.weight.T, dim=1)
        feat_norm = float(torch.linalg.norm(feat_diff))
        row_norms = torch.linalg.norm(grad_diff, dim=1)
        ratios = (row_norms / feat_norm).tolist() if feat_norm > 0 \
            else [0.0] * num_classes
    return {
        "num_classes": num_classes,
        "label": label,
        "feature_diff_norm": feat_norm,
        "gradient_row_ratios": ratios,
        "expected_ratio_true_row": (num_classes - 1) / num_classes,
        "expected_ratio_other_rows": 1.0 / num_classes,
        "max_prob_deviation_from_uniform": float(
            (probs - 1.0 / num_classes).abs().max()),
        "uniform_enforced": enforce_uniform,
    }
