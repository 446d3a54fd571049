"""Compare the four adversarial objectives on the same discriminator scores.

Run: python3 demos/03_losses.py
"""
import torch

from deshufflegan.losses import ADVERSARIAL_LOSSES, combine, deshuffle_loss

scenarios = {
    "undecided": (torch.zeros(4), torch.zeros(4)),
    "confident D": (torch.full((4,), 0.5), torch.full((4,), -0.5)),
    "fooled D": (torch.full((4,), -0.5), torch.full((4,), 0.5)),
}
print(f"{'variant':10s} {'scenario':12s} {'L_D':>8s} {'L_G':>8s}")
for name, fn in ADVERSARIAL_LOSSES.items():
    for label, (real, fake) in scenarios.items():
        d, g = fn(real, fake)
        print(f"{name:10s} {label:12s} {float(d):8.4f} {float(g):8.4f}")

# The jigsaw head is a 30-way classifier: chance-level logits cost ln 30.
print("\nuniform jigsaw logits:", float(deshuffle_loss(torch.zeros(8, 30), torch.arange(8))))

# Totals add the jigsaw terms with weights alpha (D side) and beta (G side).
print(combine(d_adv=0.7, g_adv=1.1, v_disc=3.4, v_gen=3.4).as_dict())
