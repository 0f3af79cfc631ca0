"""
A learned terminal state
========================

The bridge starts from a terminal state built from the first frame. Copying
the frame L times ignores motion; a small regression network learns the
conditional mean of the clip instead, which sits much closer to the data.
"""

import numpy as np

from framebridge.denoiser import init_prior_net
from framebridge.evalkit import prior_gap, replicated_prior_gap
from framebridge.toy_world import PriorSpec, ToyConfig, build_prior, conditional_mean_oracle, generate_dataset
from framebridge.train import PriorTask, TrainConfig, neural_prior, run_training

toy = ToyConfig()
held_out = generate_dataset(777, 128, toy)
oracle = np.stack([conditional_mean_oracle(toy, f, int(c)) for f, c in zip(held_out.first_frames, held_out.labels)])
moving = held_out.labels > 0

# a short regression run; more steps push the gap further down
net = init_prior_net(0)
curve = run_training(net, PriorTask(toy), TrainConfig(iterations=3000, lr=0.01, seed=0, eval_every=500))
for step, loss in zip(curve.steps, curve.eval_loss):
    print(f"step {step:5d}  held-out loss {loss:.4f}")

replicated = build_prior(PriorSpec(), held_out.first_frames, held_out.labels, toy.L)
learned = build_prior(neural_prior(net), held_out.first_frames, held_out.labels, toy.L)
print("gap on moving classes, replicated:", prior_gap(replicated[moving], oracle[moving]))
print("gap on moving classes, learned:   ", prior_gap(learned[moving], oracle[moving]))

# for a single velocity the replicated gap has a closed form
i = int(np.flatnonzero(held_out.labels == 1)[0])
print(prior_gap(replicated[i], oracle[i]), replicated_prior_gap(toy, held_out.first_frames[i], 1))

# the two-velocity class: the network blurs the two motions into their average
j = int(np.flatnonzero(held_out.labels == 2)[0])
print("last frame, learned:", np.round(learned[j, -1], 2))
print("last frame, oracle: ", np.round(oracle[j, -1], 2))
