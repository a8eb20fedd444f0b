"""Refine coarse-grained areal spatial data onto a finer partition.

Coarse observations are linked to a latent fine-grained field through a
row-stochastic aggregation matrix; auxiliary spatial datasets of arbitrary
granularity enter through Gaussian-process posteriors whose predictive
uncertainty is propagated into the fit.
"""

from finescale.geo import (
    AggregationMap,
    ArealDataset,
    Partition,
    Region,
    aggregate,
    build_aggregation,
    load_partition,
    to_intensive,
)
from finescale.kernel import SEKernelParams, cov_matrix, se_kernel
from finescale.gp_aux import AuxGPModel, AuxPosterior, fit_all_aux, fit_aux_gp, predict_aux
from finescale.downscale import (
    DownscaleParams,
    Refinement,
    build_design,
    fit_downscale,
    predict_fine,
)
from finescale.baselines import BaselineResult, gpr_baseline, lr_baseline, sd2_baseline
from finescale.evaluate import MetricReport, generate_synthetic, mape, paired_ttest, run_comparison

__version__ = "0.1.0"
