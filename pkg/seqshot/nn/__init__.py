"""Minimal feed-forward network engine with reverse-mode gradients.

The public surface is re-exported here; see the submodules for details.
"""
from __future__ import annotations

from seqshot.nn.checkpoint import load_checkpoint, save_checkpoint
from seqshot.nn.graph import Cache, Gradients, Graph, backward, forward
from seqshot.nn.layers import (
    Conv1D,
    Conv2D,
    FreqPool,
    GlobalPool,
    Layer,
    Linear,
    ReLU,
    Sigmoid,
    TimePool,
)
from seqshot.nn.optim import AdamState, adamw_step, one_cycle_lr

__all__ = [
    "AdamState",
    "Cache",
    "Conv1D",
    "Conv2D",
    "FreqPool",
    "GlobalPool",
    "Gradients",
    "Graph",
    "Layer",
    "Linear",
    "ReLU",
    "Sigmoid",
    "TimePool",
    "adamw_step",
    "backward",
    "forward",
    "load_checkpoint",
    "one_cycle_lr",
    "save_checkpoint",
]
