"""Indirect auxiliary-variable MCMC for models with intractable normalising functions."""

from .diagnostics import ess, hpd, mcse, summarize
from .gp import GPBinding
from .models import (
    LatticeState,
    ModelSpec,
    NetworkState,
    SimSettings,
    Term,
    cftp_ising,
    ergm_suff_stats,
    exact_log_z,
    gibbs_cycle_ergm,
    gibbs_cycle_ising,
    ising_full_conditional,
    ising_suff_stat,
    simulate_suff_stats,
)
from .precompute import PrecomputeStore, harvest
from .pseudolikelihood import PriorBox, mple
from .samplers import DMHSampler, ExchangeSampler, IAVMSampler, ProposalSpec, run_dmh, run_exchange, run_iavm

__version__ = "0.1.0"

__all__ = [
    "DMHSampler", "ExchangeSampler", "GPBinding", "IAVMSampler", "LatticeState", "ModelSpec", "NetworkState",
    "PrecomputeStore", "PriorBox", "ProposalSpec", "SimSettings", "Term", "cftp_ising", "ergm_suff_stats", "ess",
    "exact_log_z", "gibbs_cycle_ergm", "gibbs_cycle_ising", "harvest", "hpd", "ising_full_conditional",
    "ising_suff_stat", "mcse", "mple", "run_dmh", "run_exchange", "run_iavm", "simulate_suff_stats", "summarize",
]
