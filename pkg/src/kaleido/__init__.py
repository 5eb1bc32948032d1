"""Kaleidoscope matrices: products of butterfly factors and their adjoints.

The core types live in kcore; constructive factorizations of permutations, sparse
matrices and closure operations in hierarchy; named fast transforms in transforms;
the unitary variant in ortho; circuit compilation in circuits; gradient-based
fitting in learn.
"""
from .errors import (ConvergenceError, DimensionError, GrammarError, KaleidoError, NotOrthogonal,
                     ParseError, SingularFactor, StepConditionError)
from .kcore import (ButterflyFactor, ButterflyFactorMatrix, ButterflyMatrix, FactorChain, KMatrix,
                    OpCounter, Permutation, Stage, identity_kmatrix, kmatrix_matvec, kmatrix_rmatvec,
                    kmatrix_to_dense, multiply_count, param_count, random_kmatrix, validate_chain,
                    widen)
from .hierarchy import (SparseMatrix, bit_reversal_perm, butterfly_inverse, k_block_diag, k_kronecker,
                        k_product, k_sum, perm_to_bb, perm_to_bsb, sparse_to_kmatrix)

__version__ = "0.1.0"

__all__ = [
    "ButterflyFactor", "ButterflyFactorMatrix", "ButterflyMatrix", "ConvergenceError", "DimensionError",
    "FactorChain", "GrammarError", "KMatrix", "KaleidoError", "NotOrthogonal", "OpCounter", "ParseError",
    "Permutation", "SingularFactor", "SparseMatrix", "Stage", "StepConditionError", "bit_reversal_perm",
    "butterfly_inverse", "identity_kmatrix", "k_block_diag", "k_kronecker", "k_product", "k_sum",
    "kmatrix_matvec", "kmatrix_rmatvec", "kmatrix_to_dense", "multiply_count", "param_count",
    "perm_to_bb", "perm_to_bsb", "random_kmatrix", "sparse_to_kmatrix", "validate_chain", "widen",
]
