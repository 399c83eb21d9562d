"""Train on the bundled toy corpus and report training PPL and exact greedy matches."""

import argparse

from recosa.experiments import memorization_run

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    r = memorization_run(a.steps, a.lr, seed=a.seed)
    print(f"train_ppl={r['train_ppl']:.4f} exact={r['exact']}/{r['sessions']} seconds={r['seconds']:.1f}")
