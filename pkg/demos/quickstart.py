"""Train a small structured model on synthetic videos and inspect its segmentations.

The run pretrains on gray-only videos, transfers the weights, then trains the
structured model. Run with ``python3 demos/quickstart.py``; about two minutes
on one core.
"""
import argparse
import logging

from reconfnet.data import synth_generate
from reconfnet.evaluation import accuracy, confusion_matrix
from reconfnet.latent import count_latent, infer_all
from reconfnet.network import ModelConfig, transfer_pretrained
from reconfnet.training import TrainConfig, lsbp_train, pretrain

# 40x30 frames; kernels scaled down from the full-size model
DESK = ModelConfig(K=3, frame_h=30, frame_w=40, k1=(4, 5, 3), k2=(4, 4, 3), k3=(2, 3))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-class", type=int, default=6)
    ap.add_argument("--iterations", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train, _ = synth_generate(args.seed, DESK.K, args.per_class, DESK)
    test, _ = synth_generate(args.seed + 1000, DESK.K, 3, DESK)
    print(f"{len(train)} training videos, {len(test)} test videos, "
          f"{count_latent(DESK.A, DESK.M, DESK.tau, DESK.m)} candidate segmentations each")

    gray_cfg = DESK.replace(channels=1)
    gray, _ = synth_generate(args.seed + 500, DESK.K, 20, gray_cfg, channels=1)
    pre = pretrain(gray, gray_cfg, TrainConfig(max_iterations=8, convergence_tol=0,
                                               seed=args.seed))
    start = transfer_pretrained(pre, gray_cfg, DESK, seed=args.seed)

    tc = TrainConfig(max_iterations=args.iterations, convergence_tol=0, seed=args.seed)
    params, state = lsbp_train(train, start, tc, DESK, log_sink=print)

    results = infer_all(test, params, DESK)
    truth = [s.label for s in test]
    pred = [y for y, _, _ in results]
    print(f"\ntest accuracy {accuracy(truth, pred):.3f}")
    print(confusion_matrix(truth, pred, DESK.K))
    print("\nlabel  predicted  true segmentation        inferred segmentation")
    for s, (y, H, p) in zip(test, results):
        print(f"{s.label:5d}  {y:9d}  {str(s.latent.key()):24s} {H.key()}  p={p:.3f}")


if __name__ == "__main__":
    main()
