#pragma once

// Independent reference implementations used only by tests. None of these
// call into the library code paths they are used to check.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major list of rows

// Population mean / variance per column, two-pass.
Vec column_mean(const Mat& rows);
Vec column_variance(const Mat& rows);
// Population covariance, two-pass, d x d.
Mat covariance(const Mat& rows);

struct Eigen {
  Vec values;   // non-increasing
  Mat vectors;  // vectors[i] pairs with values[i], unit length
};
// Cyclic Jacobi rotations on a dense symmetric matrix.
Eigen jacobi_eigen(Mat a, double tol = 1e-14, int max_sweeps = 100);

// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
Vec average_ranks(const Vec& x);
double pearson(const Vec& x, const Vec& y);
double spearman(const Vec& x, const Vec& y);

// 3CosAdd by the cosine-sum form cos(d,b) - cos(d,a) + cos(d,c) over every
// word except a, b, c; scores within 1e-12 of the best go to the smallest word.
std::string analogy_argmax(const std::vector<std::string>& words, const Mat& vectors, std::size_t a, std::size_t b,
                           std::size_t c);

// Mean multinomial cross-entropy, straightforward softmax.
double cross_entropy(const Mat& x, const std::vector<std::size_t>& y, const Mat& w, const Vec& b);

// Seeded data helpers.
Mat random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0);

}  // namespace oracle
