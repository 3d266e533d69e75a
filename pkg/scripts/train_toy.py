"""Train the toy network on synthetic blobs, then score it and run the closed-gate ablation.

    python scripts/train_toy.py [--iters 20] [--seed 0] [--checkpoint ck.txt]
"""

import argparse
import time

import numpy as np

from bistream_sod import metrics
from bistream_sod import model as M
from bistream_sod.tensor import Tensor


def close_input_gates(net):
    arrays = net.snapshot()
    for i in range(1, M.N_STAGES + 1):
        arrays[f"gate_in{i}.gate.b"] = np.full_like(arrays[f"gate_in{i}.gate.b"], -20.0)
    return net.with_params(arrays)


def score(net, data):
    pairs = [(f"blob{i}", M.infer(net, img)[0], mask) for i, (img, mask) in enumerate(data)]
    return metrics.evaluate_pairs(pairs)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--images", type=int, default=4)
    ap.add_argument("--checkpoint", default=None)
    args = ap.parse_args()

    data = M.blob_dataset(args.images, 64, args.seed)
    net = M.build(args.seed)
    print(f"parameters: {net.n_parameters()}")
    t0 = time.perf_counter()
    result = M.train(net, data, M.TrainConfig(iterations=args.iters, seed=args.seed))
    print(f"trained {args.iters} iterations in {time.perf_counter() - t0:.1f}s")
    for i, loss in enumerate(result.losses):
        print(f"  iter {i:3d}  loss {loss:.4f}")

    for label, candidate in (("untrained", net), ("trained", result.net)):
        rep = score(candidate, data)
        print(f"{label:>9}: mae {rep.mae:.4f}  max_f {rep.max_f:.4f}  s_measure {rep.s_measure:.4f}")

    closed = close_input_gates(result.net)
    rng = np.random.Generator(np.random.PCG64(args.seed + 1))
    image = Tensor(data[0][0])
    other = Tensor(rng.uniform(size=data[0][0].shape))
    for label, candidate in (("open gates", result.net), ("closed gates", closed)):
        diff = np.abs(M.forward(candidate, image, image_v=other).data - M.forward(candidate, image).data).max()
        print(f"{label:>12}: output change when the plain-chain input is replaced = {diff:.2e}")

    if args.checkpoint:
        M.save_checkpoint(result.net, args.checkpoint)
        print(f"wrote {args.checkpoint}")


if __name__ == "__main__":
    main()
