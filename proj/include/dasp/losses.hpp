#pragma once

#include <cmath>
#include <string>

#include "dasp/tape.hpp"
#include "dasp/tensor.hpp"

namespace dasp {

constexpr double kProbClamp = 1e-12;

namespace detail {

inline void require_probability_rows(const Tensor& p, const char* op, double tol = 1e-6) {
    require_matrix(p, op);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p.at(i, j) < 0.0) {
                throw ContractError(std::string(op) + ": negative probability in row " +
                                    std::to_string(i));
            }
            s += p.at(i, j);
        }
        if (std::abs(s - 1.0) > tol) {
            throw ContractError(std::string(op) + ": row " + std::to_string(i) +
                                " sums to " + std::to_string(s) + ", not 1");
        }
    }
}

}  // namespace detail

// Mean over the batch of the per-sample Shannon entropy, in [0, ln C].
inline double entropy_loss(const Tensor& p) {
    detail::require_probability_rows(p, "entropy_loss");
    const Tensor s = sum_all(mul(p, log_clamped(p, kProbClamp)));
    return scale(s, -1.0 / static_cast<double>(p.rows()))[0];
}

// Negative entropy of the batch-marginal distribution, in [-ln C, 0];
// most negative when the marginal is uniform.
inline double diversity_loss(const Tensor& p) {
    detail::require_probability_rows(p, "diversity_loss");
    const Tensor marginal = batch_mean(p);
    return sum_all(mul(marginal, log_clamped(marginal, kProbClamp)))[0];
}

// Mean over the batch of KL(p_tgt_row || p_src_row); zero iff rows agree.
inline double kl_loss(const Tensor& p_tgt, const Tensor& p_src) {
    detail::require_probability_rows(p_tgt, "kl_loss");
    detail::require_probability_rows(p_src, "kl_loss");
    detail::require_same_shape(p_tgt, p_src, "kl_loss");
    const Tensor diff = sub(log_clamped(p_tgt, kProbClamp), log_clamped(p_src, kProbClamp));
    const Tensor s = sum_all(mul(p_tgt, diff));
    return scale(s, 1.0 / static_cast<double>(p_tgt.rows()))[0];
}

// Tape counterparts; node sequences mirror the plain versions exactly so the
// recorded loss values match the direct formulas bit for bit.

inline Tape::ValueId entropy_loss_node(Tape& tape, Tape::ValueId p) {
    detail::require_probability_rows(tape.value(p), "entropy_loss");
    const auto s = tape.sum_all(tape.mul(p, tape.log_clamped(p, kProbClamp)));
    return tape.scale(s, -1.0 / static_cast<double>(tape.value(p).rows()));
}

inline Tape::ValueId diversity_loss_node(Tape& tape, Tape::ValueId p) {
    detail::require_probability_rows(tape.value(p), "diversity_loss");
    const auto marginal = tape.batch_mean(p);
    return tape.sum_all(tape.mul(marginal, tape.log_clamped(marginal, kProbClamp)));
}

inline Tape::ValueId kl_loss_node(Tape& tape, Tape::ValueId p_tgt, Tape::ValueId p_src) {
    detail::require_probability_rows(tape.value(p_tgt), "kl_loss");
    detail::require_probability_rows(tape.value(p_src), "kl_loss");
    const auto diff = tape.sub(tape.log_clamped(p_tgt, kProbClamp),
                               tape.log_clamped(p_src, kProbClamp));
    const auto s = tape.sum_all(tape.mul(p_tgt, diff));
    return tape.scale(s, 1.0 / static_cast<double>(tape.value(p_tgt).rows()));
}

}  // namespace dasp
