"""Train a small jigsaw-augmented GAN on the synthetic dataset and watch it learn.

A few hundred iterations at reduced width take a minute or so on a CPU.
Writes demo_run/ with metrics, checkpoints and sample grids.
Run: python3 demos/04_train_small.py [iterations]
"""
import sys

from deshufflegan.dataio import synthetic_structured
from deshufflegan.evalfid import ToyExtractor, evaluate
from deshufflegan.trainer import RunDirectory, TrainConfig, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 400
data = synthetic_structured(2000, 48, seed=1)
cfg = TrainConfig(loss_variant="rals", image_size=48, base_width=16, batch_size=32, total_iterations=iterations,
                  checkpoint_every=200, sample_every=100)
extractor = ToyExtractor()


def report(state, rep):
    if state.iteration % 50 == 0:
        r = rep.record()
        print(f"it {r['iteration']:5d}  L_D {r['d_total']:.3f}  L_G {r['g_total']:.3f}  "
              f"jigsaw acc real {r['acc_real']:.2f} fake {r['acc_fake']:.2f}")
    if state.iteration % 100 == 0:
        print(f"          toy FID {evaluate(state.generator, data, extractor, n_samples=500):.3f}")


state = train(cfg, data, RunDirectory("demo_run"), callback=report)
print(f"lowest generator loss {state.best_g_loss:.3f} at iteration {state.best_g_iteration}")
print("samples in demo_run/samples/, checkpoints in demo_run/checkpoints/")
