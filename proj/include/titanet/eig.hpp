#pragma once

// Symmetric eigendecomposition via cyclic Jacobi rotations scheduled in
// round-robin rounds. All rotations within a round act on disjoint index
// pairs, so the round is a single orthogonal similarity transform applied in
// two phases (row combines, then column combines). Angles are computed from
// the pre-round matrix, which makes the parallel schedule deterministic: the
// OpenMP build performs exactly the same arithmetic per element as the serial
// reference and returns bit-identical results.

#include "titanet/tensor.hpp"

namespace titanet {

struct SymEig {
    Tensor eigenvalues;   // [n], ascending
    Tensor eigenvectors;  // [n, n], column j pairs with eigenvalue j
};

// `a` must be square and symmetric (within round-off); throws otherwise.
SymEig sym_eig(const Tensor& a);

namespace ref {
SymEig sym_eig(const Tensor& a);
}  // namespace ref

}  // namespace titanet
