"""Study calibration quality as a function of reference database size.

Builds one large gated source database, truncates it to a range of sizes,
and calibrates against the same target domain with each truncation. The
error against the target's true mean sizes should flatten out well below
the full database size, which is what makes small reference sets usable.
"""
import argparse

import numpy as np

from anchorcal.core import SIZE_AXES, AnchorSizes
from anchorcal.extractor import GateConfig, build_reference_db
from anchorcal.gmm import EmConfig, fit_em
from anchorcal.optimizer import DeConfig, SweepConfig, calibrate
from anchorcal.synthdet import SyntheticDomain, generate_domain


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 1000, 5000])
    p.add_argument("--source-frames", type=int, default=1350)
    p.add_argument("--target-frames", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main() -> None:
    args = parse_args()
    # lighter clutter keeps the big source domain cheap to hold in memory
    source = generate_domain(
        SyntheticDomain(
            AnchorSizes(2.1, 4.8, 1.8), (0.04, 0.05, 0.03),
            clutter_rate=2000.0, seed=args.seed + 7,
        ),
        args.source_frames,
    )
    target = generate_domain(
        SyntheticDomain(AnchorSizes(1.6, 3.9, 1.5), (0.04, 0.05, 0.03), seed=args.seed + 8),
        args.target_frames,
    )
    src_frames = list(source.frames())
    tgt_frames = list(target.frames())
    gate = GateConfig(tau=0.6)
    full = build_reference_db(source, src_frames, gate)
    print(f"full gated database: {len(full)} features")

    true = target.source_sizes
    print(f"{'db size':>8} {'w err':>8} {'l err':>8} {'h err':>8} {'mean':>8}")
    for n in args.sizes:
        if n > len(full):
            print(f"{n:>8}  skipped, only {len(full)} features available")
            continue
        db = build_reference_db(source, src_frames, GateConfig(tau=0.6, max_features=n))
        model = fit_em(db, EmConfig(k=8, seed=args.seed + 101))
        result = calibrate(
            source, target, src_frames, tgt_frames,
            gate=gate, model=model,
            sweep_configs=tuple(SweepConfig(a, 0.5, 9) for a in SIZE_AXES),
            de_config=DeConfig(population=8, max_iters=40, stall_generations=10,
                               seed=args.seed + 202),
        )
        errs = [abs(result.calibrated.axis(a) / true.axis(a) - 1.0) for a in SIZE_AXES]
        print(
            f"{n:>8} " + " ".join(f"{e:8.4f}" for e in errs)
            + f" {float(np.mean(errs)):8.4f}"
        )


if __name__ == "__main__":
    main()
