"""How the segmentation search space grows, and what inactivation does to a short window.

Run with ``python3 demos/segment_search.py``; finishes in seconds.
"""
import numpy as np

from reconfnet.latent import count_latent, enumerate_latent, even_split
from reconfnet.network import ModelConfig, clique_forward, init_params


def main():
    print("anchors A, cliques M, lengths tau..m -> number of segmentations")
    for A, M, tau, m in [(12, 2, 3, 4), (20, 3, 4, 6), (30, 1, 5, 9), (30, 4, 5, 9)]:
        print(f"  A={A:2d} M={M} t in [{tau},{m}] -> {count_latent(A, M, tau, m)}")

    print("\nfirst and last candidates for A=30, M=4:")
    cands = list(enumerate_latent(30, 4, 5, 9))
    for H in cands[:3] + cands[-2:]:
        print("  ", H.key())
    print("even split:", even_split(30, 4, 9, 5).key())

    c = ModelConfig()
    cp = init_params(c, 0).cliques[0]
    frames = np.random.default_rng(0).uniform(size=(2, 9, c.frame_h, c.frame_w)).astype(np.float32)
    print(f"\nclique features ({c.clique_feature_len} per clique):")
    for t in range(c.tau, c.m + 1):
        f, act = clique_forward(frames[:, :t], cp, c)
        print(f"  window of {t} frames: {int(act.mask.sum())} inactivated slots, "
              f"{int((f == 0).sum())} zero features")


if __name__ == "__main__":
    main()
