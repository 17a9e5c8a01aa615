"""The whole experiment: baseline, explain, prune, retrain, compare.

Writes every artifact to ./pipeline_demo_out and prints the comparison
table plus the templated relationship report.
"""

import sys

from prunexai.pipeline import PipelineConfig, emit_report, run_pipeline_detailed
from prunexai.prune import SamplePruneConfig


def main(out="pipeline_demo_out"):
    cfg = PipelineConfig(seed=42, output_dir=out)
    res = run_pipeline_detailed(cfg)
    print(emit_report(res.report, "markdown"))
    print(res.relationships.to_markdown())

    # same experiment with residual-based sample pruning stacked on top
    cfg = PipelineConfig(seed=42, sample_prune=SamplePruneConfig(quantile_q=0.05))
    res = run_pipeline_detailed(cfg)
    print(emit_report(res.report, "markdown"))
    print(f"artifacts in {out}/")


if __name__ == "__main__":
    main(*sys.argv[1:])
