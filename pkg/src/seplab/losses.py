"""SNR / SI-SDR metrics, permutation assignment and auxiliary autoencoding loss.

Both metrics are capped near +/-80 dB by an energy floor of ``1e-8`` times the
reference (SNR) or estimate (SI-SDR) energy, which keeps losses finite.
"""
from __future__ import annotations

import itertools
from typing import Callable

import torch

from seplab.errors import InvalidInputError

CAP_FRACTION = 1e-8
CAP_DB = 80.0


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def snr_db(est, ref) -> torch.Tensor:
    """``10 log10(|ref|^2 / (|ref - est|^2 + eps))`` over the last axis."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    if est.shape[-1] != ref.shape[-1]:
        raise InvalidInputError(f"length mismatch: {est.shape[-1]} vs {ref.shape[-1]}")
    ref_energy = ref.pow(2).sum(-1)
    if bool((ref_energy == 0).any()):
        raise InvalidInputError("reference signal has zero energy")
    err = (ref - est).pow(2).sum(-1)
    return 10 * torch.log10(ref_energy / (err + CAP_FRACTION * ref_energy))


def si_sdr_db(est, ref) -> torch.Tensor:
    """Scale-invariant SDR: project ``est`` onto ``ref`` and compare target vs residual energy."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    if est.shape[-1] != ref.shape[-1]:
        raise InvalidInputError(f"length mismatch: {est.shape[-1]} vs {ref.shape[-1]}")
    ref_energy = ref.pow(2).sum(-1, keepdim=True)
    est_energy = est.pow(2).sum(-1)
    if bool((ref_energy == 0).any()):
        raise InvalidInputError("reference signal has zero energy")
    if bool((est_energy == 0).any()):
        raise InvalidInputError("estimate has zero energy")
    target = (est * ref).sum(-1, keepdim=True) / ref_energy * ref
    noise = est - target
    floor = CAP_FRACTION * est_energy
    return 10 * torch.log10((target.pow(2).sum(-1) + floor) / (noise.pow(2).sum(-1) + floor))


def neg_snr(est, ref) -> torch.Tensor:
    return -snr_db(est, ref)


def neg_si_sdr(est, ref) -> torch.Tensor:
    return -si_sdr_db(est, ref)


def pairwise_losses(ests: torch.Tensor, refs: torch.Tensor, lossfn: Callable) -> torch.Tensor:
    """``[..., C, C]`` matrix with entry ``[r, e] = lossfn(ests[e], refs[r])``."""
    c = ests.shape[-2]
    e = ests.unsqueeze(-3).expand(*ests.shape[:-2], c, c, ests.shape[-1])
    r = refs.unsqueeze(-2).expand(*refs.shape[:-2], c, c, refs.shape[-1])
    return lossfn(e, r)


def pit_assign(ests, refs, lossfn: Callable = neg_snr):
    """Exhaustive utterance-level permutation search.

    ``ests`` and ``refs`` are ``[C, t]`` or ``[B, C, t]``. Returns ``(perm, loss)``
    where ``perm[i]`` is the estimate matched to reference ``i`` and ``loss`` is
    the summed loss of that assignment. For batched input both are per example.
    Ties go to the lexicographically smallest permutation.
    """
    ests, refs = _as_tensor(ests), _as_tensor(refs)
    if ests.shape != refs.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(ests.shape)} vs {tuple(refs.shape)}")
    batched = ests.dim() == 3
    if not batched:
        ests, refs = ests.unsqueeze(0), refs.unsqueeze(0)
    c = ests.shape[1]
    table = pairwise_losses(ests, refs, lossfn)  # [B, C(ref), C(est)]
    perms = list(itertools.permutations(range(c)))
    idx = torch.arange(c)
    totals = torch.stack([table[:, idx, list(p)].sum(-1) for p in perms], -1)  # [B, P]
    # argmin returns the first minimum, i.e. the lexicographically smallest permutation
    best = torch.argmin(totals.detach(), dim=-1)
    loss = totals.gather(-1, best.unsqueeze(-1)).squeeze(-1)
    chosen = [perms[int(i)] for i in best]
    if not batched:
        return chosen[0], loss[0]
    return chosen, loss


def reorder(ests: torch.Tensor, perms) -> torch.Tensor:
    """Reorder batched ``ests`` so that output ``i`` is the estimate matched to reference ``i``."""
    index = torch.as_tensor(perms, dtype=torch.long, device=ests.device)
    return ests.gather(1, index.unsqueeze(-1).expand(-1, -1, ests.shape[-1]))


def separation_loss(ests: torch.Tensor, refs: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the PIT negative SNR, averaged over sources."""
    _, loss = pit_assign(ests, refs, neg_snr)
    return loss.mean() / ests.shape[1]


def a2t_loss(model: Callable, targets: torch.Tensor) -> torch.Tensor:
    """Autoencoding loss: each source image alone must be reproduced by some output.

    ``targets`` is ``[B, C, t]``. Every image is fed to ``model`` as a mixture;
    the best output (highest SNR) is scored. Returns the mean negative SNR.
    """
    b, c, t = targets.shape
    flat = targets.reshape(b * c, t)
    outs = model(flat)  # [B*C, C', t]
    snrs = snr_db(outs, flat.unsqueeze(1).expand_as(outs))
    return -snrs.max(dim=-1).values.mean()


def total_loss(model: Callable, mixture: torch.Tensor, targets: torch.Tensor,
               a2t_weight: float = 0.0) -> torch.Tensor:
    loss = separation_loss(model(mixture), targets)
    if a2t_weight:
        loss = loss + a2t_weight * a2t_loss(model, targets)
    return loss
