#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace redual {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Index = Eigen::Index;

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// An algorithm could not reach its stated accuracy or a model violated
/// a structural assumption (convexity, positive definiteness, ...).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

namespace detail {

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks so
/// results written to per-index slots are identical for any thread count;
/// the first exception thrown by any worker is rethrown on the caller.
template <class F>
void parallel_for(std::size_t n, unsigned n_threads, F&& body) {
  if (n_threads == 0) n_threads = std::thread::hardware_concurrency();
  if (n_threads <= 1 || n < 128) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n));
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  std::mutex err_mutex;
  std::exception_ptr first_error;
  const std::size_t chunk = (n + n_threads - 1) / n_threads;
  for (unsigned t = 0; t < n_threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::scoped_lock lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

} // namespace detail

} // namespace redual
