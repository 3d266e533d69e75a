"""Capped vs uncapped quota totals on a 267-category long-tail manifest.

    python scripts/quota_arithmetic.py [--seed 0] [--out selection.csv]
"""

import argparse

from bistream_sod import curation as C


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="write the balanced selection here")
    args = ap.parse_args()

    records = C.clean(C.synthetic_manifest(C.long_tail_counts(), seed=args.seed))
    dist = C.histogram(records)
    plan = C.SamplingPlan(seed=args.seed)
    n_rest = len(dist.order) - plan.k_top
    quotas = C.category_quotas(dist, plan)
    selected = C.balanced_sample(records, plan)

    print(f"records            {dist.total}")
    print(f"categories         {len(dist.order)}")
    print(f"top-{plan.k_top} coverage    {C.pareto_report(dist, plan.k_top):.4f}")
    print(f"uncapped quota     {plan.k_top}*{plan.quota_top} + {n_rest}*{plan.quota_rest} = "
          f"{plan.k_top * plan.quota_top + n_rest * plan.quota_rest}")
    print(f"capped quota       {sum(quotas.values())}")
    print(f"selected           {len(selected)}")
    whole = sum(1 for c in dist.order if quotas[c] == dist.counts[c])
    print(f"taken whole        {whole} categories at or below their quota")
    if args.out:
        C.write_manifest(selected, args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
