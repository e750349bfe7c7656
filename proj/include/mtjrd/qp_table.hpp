#ifndef MTJRD_QP_TABLE_HPP
#define MTJRD_QP_TABLE_HPP

// Generated by tools/calibrate_qp_table.cpp from tests/data/corpus (10 images).
// Do not edit by hand.

#include <array>

namespace mtjrd::vcm {

inline constexpr int kQpTableVersion = 1;

/// Stand-in JPEG quality factor for each VVC-style QP (monotone non-increasing).
inline constexpr std::array<int, 64> kQpToQf = {
    100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100,  99,  99,  99,
     99,  98,  98,  98,  97,  97,  97,  96,  95,  95,  94,  93,  92,  91,  90,  88,
     86,  84,  81,  77,  73,  68,  61,  53,  43,  35,  29,  24,  20,  16,  14,  11,
     10,   8,   7,   6,   5,   4,   4,   3,   3,   1,   1,   1,   1,   1,   1,   1};

}  // namespace mtjrd::vcm

#endif  // MTJRD_QP_TABLE_HPP
