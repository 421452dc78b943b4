"""Small shared setups for the transfer tests and the acceptance suite."""

from __future__ import annotations

import copy

import torch

from drbench.data import DiseasePhantomSpec, seg_phantom_spec, synthesize_disease_phantom, synthesize_phantom
from drbench.training import TrainConfig
from drbench.transfer import (
    LossWeights,
    build_discriminator,
    build_source_branch,
    build_target_branch,
    source_config,
    target_config_for,
    train_joint,
    train_target,
)


def tiny_domains(n_source=6, n_target=8, size=48, seed=0):
    source, _ = synthesize_phantom(seg_phantom_spec(n_source, size, seed=seed, id_prefix="s", overlap_budget=1.0))
    target = synthesize_disease_phantom(DiseasePhantomSpec(n_target, size, seed=seed + 1, overlap_budget=1.0))
    return source, target


def tiny_source(size=48, seed=0):
    return build_source_branch(source_config(depth=3, base_channels=4, growth_rate=4, dense_layers=1, input_size=size), seed)


def snapshots(module, steps):
    """Hook recording deep copies of ``module``'s state at the given steps."""
    taken = {}

    def hook(step):
        if step in steps:
            taken[step] = copy.deepcopy(module.state_dict())

    return taken, hook


def reduction_trajectories(transfer: bool, steps=(1, 10, 50), seed=0):
    """Target-branch states at ``steps`` for train_joint(gamma=0, frozen
    source) and for the directly built ablation trainer."""
    source_data, target_data = tiny_domains(seed=seed)
    base = tiny_source(seed=seed)
    n_epochs = -(-max(steps) // 2)  # 8 target images, batch 4 -> 2 steps per epoch
    cfg = TrainConfig(epochs=n_epochs, batch_size=4, learning_rate=1e-3, momentum=0.5, seed=seed)

    src_a = copy.deepcopy(base)
    tgt_a = build_target_branch(target_config_for(src_a, transfer), seed)
    joint, hook_a = snapshots(tgt_a, set(steps))
    train_joint(src_a, tgt_a, None, source_data, target_data, LossWeights(1.0, 0.0), cfg, freeze_source=True,
                on_step=hook_a)

    src_b = copy.deepcopy(base)
    tgt_b = build_target_branch(target_config_for(src_b, transfer), seed)
    direct, hook_b = snapshots(tgt_b, set(steps))
    train_target(tgt_b, target_data, cfg, source=src_b if transfer else None, on_step=hook_b)
    return joint, direct


def states_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def dsbn_partition_run(steps=50, seed=0):
    """Alternate source-only and target-only discriminator steps; return the
    number of steps after which the other domain's BN state changed."""
    from drbench.rng import torch_generator
    from drbench.training import make_optimizer

    disc = build_discriminator(16, 8, domain_specific=True, seed=seed)
    opt = make_optimizer(disc.parameters(), TrainConfig(learning_rate=1e-2, momentum=0.5))
    g = torch_generator(seed, "dsbn-partition")
    crossed = 0
    for step in range(steps):
        domain = "source" if step % 2 == 0 else "target"
        other = "target" if domain == "source" else "source"
        before = disc.norm_state(other)
        own_before = disc.norm_state(domain)
        vec = torch.randn(8, 16, generator=g) + (1.0 if domain == "source" else -1.0)
        logits = disc(vec, domain)
        label = torch.ones_like(logits) if domain == "source" else torch.zeros_like(logits)
        opt.zero_grad(set_to_none=True)
        torch.nn.functional.binary_cross_entropy_with_logits(logits, label).backward()
        opt.step()
        after = disc.norm_state(other)
        if not all(torch.equal(before[k], after[k]) for k in before):
            crossed += 1
        own_after = disc.norm_state(domain)
        assert not all(torch.equal(own_before[k], own_after[k]) for k in own_before), "own branch must update"
    return crossed
