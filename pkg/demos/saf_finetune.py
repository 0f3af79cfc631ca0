"""
Fine-tuning a diffusion teacher into a bridge
=============================================

A network pretrained for VP diffusion sees inputs at a known signal-to-noise
ratio per timestep. Bridge states have a different noise level and a
terminal-state offset. Rescaling the state and remapping the time so that the
SNR matches lets the teacher's weights apply from the first step.
"""

import numpy as np

from framebridge.denoiser import init_denoiser
from framebridge.saf import AlignmentMap
from framebridge.schedule import BridgeGmaxSchedule, VPSchedule
from framebridge.train import BridgeTask, DiffusionTask, TrainConfig, finetune, run_training

bridge, teacher_sched = BridgeGmaxSchedule(), VPSchedule()
align = AlignmentMap(bridge, teacher_sched)

# where each bridge time lands on the teacher's clock
t = np.linspace(0.05, 0.95, 7)
t_tilde, clamped = align.aligned_time(t)
for a, b, c in zip(t, t_tilde, clamped):
    print(f"bridge t={a:.2f} -> teacher t={b:.4f}{'  (clamped)' if c else ''}")

# pretrain the teacher with the plain noise-prediction objective
teacher = init_denoiser(0)
run_training(teacher, DiffusionTask(teacher_sched), TrainConfig(iterations=2000, lr=1e-3, seed=0, eval_every=2000))

# fine-tune twice from the same weights, with and without alignment
cfg = TrainConfig(iterations=500, lr=1e-3, seed=100, eval_every=100)
_, raw = finetune(teacher, BridgeTask(bridge), cfg)
_, saf = finetune(teacher, BridgeTask(bridge, align=align), cfg)
print(" step     raw    aligned")
for step, r, s in zip(raw.steps, raw.eval_loss, saf.eval_loss):
    print(f"{step:5d}  {r:7.2f}  {s:7.2f}")
