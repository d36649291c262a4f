#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nrtr/set_match.hpp"

namespace testutil {

/// Fresh scratch directory under the system temp path, removed on scope
/// exit.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("nrtr_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

/// Independent oracle for the assignment problem: enumerates all injective
/// maps of rows to columns in lexicographic order, keeping the first map
/// that strictly improves the total — i.e. the lexicographically smallest
/// optimum.
struct BruteForceAssignment {
    std::vector<int> pred_index;
    double cost = 0.0;
};

inline void brute_force_rec(const Eigen::MatrixXd& c, int row, std::vector<int>& current,
                            std::vector<char>& used, double partial,
                            BruteForceAssignment& best) {
    const int m = static_cast<int>(c.rows());
    const int n = static_cast<int>(c.cols());
    if (row == m) {
        if (partial < best.cost) {
            best.cost = partial;
            best.pred_index = current;
        }
        return;
    }
    for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        used[j] = 1;
        current[row] = j;
        brute_force_rec(c, row + 1, current, used, partial + c(row, j), best);
        used[j] = 0;
    }
}

inline BruteForceAssignment brute_force_assignment(const Eigen::MatrixXd& c) {
    BruteForceAssignment best;
    best.cost = std::numeric_limits<double>::infinity();
    std::vector<int> current(c.rows());
    std::vector<char> used(c.cols(), 0);
    brute_force_rec(c, 0, current, used, 0.0, best);
    if (c.rows() == 0) best.cost = 0.0;
    return best;
}

inline const char* cli_path() { return NRTR_CLI_PATH; }

}  // namespace testutil
