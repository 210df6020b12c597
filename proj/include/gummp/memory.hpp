// Passage Alignment Memory and Unified Memory construction: every other
// passage's MPM rows are stacked into fixed slots, projected through the
// shared alignment matrix, and each token is extended with its alignment
// against the result.
#pragma once

#include <vector>

#include "gummp/autodiff.hpp"
#include "gummp/encoder.hpp"

namespace gummp {

// The shared alignment matrix has (K_max - 1) * N_max rows: one row per
// (slot, position) pair, so the stacked MPMs always present a fixed
// interface to it. Passages shorter than N_max leave their trailing slot
// rows zero; absent passages (K < K_max) leave whole slots zero.
struct AlignmentWeights {
    NdArray w;  // [(K_max - 1) * N_max  x  L]

    static AlignmentWeights init(size_t k_max, size_t n_max, size_t l, SeededRng& rng) {
        return {NdArray::glorot((k_max - 1) * n_max, l, rng)};
    }
};

// PA^i = stack(other MPMs)^T . W_p, shape [mpm_width x L]. K = 1 yields the
// all-zero matrix so single-passage examples still run.
inline Var build_pam(Tape& t, size_t target, const std::vector<Mpm>& mpms, Var align,
                     size_t n_max, size_t pam_width) {
    size_t K = mpms.size();
    if (K == 0 || target >= K) throw DegenerateInputError("build_pam: bad target passage index");
    size_t width = t.cols(mpms[target].h);
    if (K == 1) return t.zeros2(width, pam_width);

    size_t total_rows = t.rows(align);
    if (t.cols(align) != pam_width)
        throw ShapeError("build_pam: alignment matrix is [" + std::to_string(total_rows) + "x" +
                         std::to_string(t.cols(align)) + "], expected width " +
                         std::to_string(pam_width));
    std::vector<Var> blocks;
    std::vector<size_t> offsets;
    size_t slot = 0;
    for (size_t k = 0; k < K; ++k) {
        if (k == target) continue;
        if (t.rows(mpms[k].h) > n_max)
            throw ShapeError("build_pam: passage of " + std::to_string(t.rows(mpms[k].h)) +
                             " rows exceeds the slot size " + std::to_string(n_max));
        blocks.push_back(mpms[k].h);
        offsets.push_back(slot * n_max);
        ++slot;
    }
    if (slot * n_max > total_rows)
        throw ShapeError("build_pam: " + std::to_string(slot) + " slots of " +
                         std::to_string(n_max) + " rows exceed the alignment matrix rows " +
                         std::to_string(total_rows));
    Var stacked = t.vstack_pad(blocks, offsets, total_rows, width);
    return t.matmul(t.transpose(stacked), align);
}

// Unified memory rows u_j = [h_j, h_j . PA], shape [N x (mpm_width + L)].
struct Um {
    Var u;
    Mask mask;
};

inline Um build_um(Tape& t, const Mpm& mpm, Var pam) {
    if (t.rows(pam) != t.cols(mpm.h))
        throw ShapeError("build_um: PAM rows " + std::to_string(t.rows(pam)) +
                         " vs MPM width " + std::to_string(t.cols(mpm.h)));
    Var suffix = t.matmul(mpm.h, pam);
    return {t.hcat(mpm.h, suffix), mpm.mask};
}

}  // namespace gummp
