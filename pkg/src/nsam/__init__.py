"""Constraint-grounded action masking for reinforcement learning.

Propositional logic, SDD compilation, PSDD inference, a gating network that
predicts PSDD parameters from states, and masked PPO over constraint domains.
"""

from .logic import Catalog, Clause, CnfFormula, ContractError, Literal, enumerate_models, eval_cnf
from .psdd import Psdd, attach_params, map_model, prob_model, prob_query
from .sdd import SddManager, compile_cnf
from .vtree import Vtree, build_balanced, build_right_linear

__all__ = [
    "Catalog", "Clause", "CnfFormula", "ContractError", "Literal", "enumerate_models", "eval_cnf",
    "Psdd", "attach_params", "map_model", "prob_model", "prob_query",
    "SddManager", "compile_cnf", "Vtree", "build_balanced", "build_right_linear",
]
