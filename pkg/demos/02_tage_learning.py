"""How quickly TAGE learns simple branch patterns.

Accuracy is measured in windows of 200 branches while the predictor trains
online, the way the core uses it: predict, then update with the outcome.
"""

# %%
import random

from microsim import Tage

PC = 0x400000


def curve(outcomes, window=200):
    t = Tage()
    hits, out = 0, []
    for i, taken in enumerate(outcomes, 1):
        p = t.predict(PC)
        hits += p.taken == taken
        t.update(PC, taken, p)
        if i % window == 0:
            out.append(hits / window)
            hits = 0
    return out


def show(name, accs):
    print(f"{name:22s} " + " ".join(f"{a:5.2f}" for a in accs))


# %% [markdown]
# Periods up to the shortest history length (5) are captured by the first
# tagged table; longer periods need the longer histories.

# %%
n = 2000
show("always taken", curve([True] * n))
for p in (2, 3, 5, 12, 40):
    show(f"period {p}", curve([i % p == 0 for i in range(n)]))

# %% [markdown]
# Random outcomes stay near 50% whatever the predictor does; a 90% biased
# branch settles near 90%.

# %%
rng = random.Random(1)
show("random", curve([rng.random() < 0.5 for _ in range(n)]))
show("90% taken", curve([rng.random() < 0.9 for _ in range(n)]))
