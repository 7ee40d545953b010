"""Compare cost curves of LSBP from a random start and from transferred gray weights.

Run with ``python3 demos/pretrain_transfer.py``; a few minutes on one core.
"""
import argparse

from reconfnet.data import synth_generate
from reconfnet.network import ModelConfig, init_params, transfer_pretrained
from reconfnet.training import TrainConfig, lsbp_train, pretrain

DESK = ModelConfig(K=3, frame_h=30, frame_w=40, k1=(4, 5, 3), k2=(4, 4, 3), k3=(2, 3))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-class", type=int, default=4)
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--pretrain-epochs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train, _ = synth_generate(args.seed, DESK.K, args.per_class, DESK)
    gray_cfg = DESK.replace(channels=1)
    gray, _ = synth_generate(args.seed + 500, DESK.K, args.per_class, gray_cfg, channels=1)
    pre = pretrain(gray, gray_cfg, TrainConfig(max_iterations=args.pretrain_epochs,
                                               convergence_tol=0, seed=args.seed))
    starts = {"random": init_params(DESK, args.seed),
              "pretrained": transfer_pretrained(pre, gray_cfg, DESK, seed=args.seed)}

    tc = TrainConfig(max_iterations=args.iterations, seed=args.seed)
    curves = {}
    for name, p0 in starts.items():
        _, state = lsbp_train(train, p0, tc, DESK)
        curves[name] = [r.cost for r in state.cost_history if r.phase == "M"]
        print(f"{name}: {state.iteration} iterations, converged={state.converged}")

    print("\niter  " + "  ".join(f"{n:>10s}" for n in curves))
    for i in range(max(len(c) for c in curves.values())):
        row = [f"{c[i]:10.4f}" if i < len(c) else " " * 10 for c in curves.values()]
        print(f"{i + 1:4d}  " + "  ".join(row))


if __name__ == "__main__":
    main()
