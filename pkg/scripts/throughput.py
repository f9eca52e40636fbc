"""Batch scoring throughput of a boosted model (rows per second, best of several passes)."""

import argparse
import sys

import numpy as np

from rax.models import BoostingConfig, fit_gradient_boosting, score_batch
from rax.store import split_table
from rax.synth import SynthConfig, generate
from rax.table import EventTable


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-rounds", type=int, default=400, help="boosting rounds (three trees per round)")
    ap.add_argument("--max-depth", type=int, default=8)
    ap.add_argument("--rows", type=int, default=200000, help="rows scored per pass")
    ap.add_argument("--passes", type=int, default=5)
    args = ap.parse_args(argv)

    table = generate(SynthConfig(n_events=25000))
    train, test = split_table(table)
    model = fit_gradient_boosting(
        train.model_matrix(), train.label,
        config=BoostingConfig(n_rounds=args.n_rounds, max_depth=args.max_depth),
        schema_hash=train.schema_hash,
    )
    reps = -(-args.rows // len(table))
    rows = EventTable.concat([table] * reps).take(np.arange(args.rows))
    score_batch(model, test)
    rates = [score_batch(model, rows)[1].rows_per_second for _ in range(args.passes)]
    n_trees = sum(1 for _ in model.iter_trees())
    print(f"trees={n_trees} depth={args.max_depth} rows={len(rows)} best={max(rates):,.0f} rows/s "
          f"median={sorted(rates)[len(rates) // 2]:,.0f} rows/s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
