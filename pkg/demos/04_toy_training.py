"""Can a model see the first frame from the last one?

First-token-match labels each frame by whether it repeats frame 0. A
convolution-only stack sees a few neighbours at most and sits near chance;
global interaction (attention or HyperMixer) solves the task.
"""

from hyperconformer.harness import ToyTask, toy_config, train_toy

task = ToyTask("first-token-match", n_min=32, n_max=64, vocab=2)
for model in ("hyperconformer", "conformer", "conv-only"):
    res = train_toy(task, toy_config(model), epochs=6, steps_per_epoch=50)
    curve = " ".join(f"{a:.2f}" for a in res.accuracy)
    print(f"{model:<15} start {res.initial_accuracy:.2f} | per epoch {curve}")

# The same models under CTC: strings of symbols, loss 0.3 * CTC + 0.7 * frame CE.
res = train_toy(ToyTask("ctc-strings", 24, 40, vocab=4), toy_config("hyperconformer"), epochs=3,
                steps_per_epoch=40)
print(f"ctc-strings: frame accuracy {res.accuracy[-1]:.3f}, loss {res.losses[0]:.2f} -> {res.losses[-1]:.3f}")
