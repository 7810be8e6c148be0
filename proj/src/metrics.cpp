#include "fedsplit/metrics.hpp"

#include <ostream>

#include <fmt/format.h>

namespace fedsplit {

std::optional<double> MetricsLog::final_accuracy() const {
  if (rounds.empty()) {
    return std::nullopt;
  }
  return rounds.back().accuracy;
}

std::string format_real(double v) { return fmt::format("{:.6g}", v); }

namespace {

template <typename T, typename Fn>
std::string join(const std::vector<T>& xs, Fn&& fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) {
      out += ';';
    }
    out += fmt_one(xs[i]);
  }
  return out;
}

std::string ints(const std::vector<int>& xs) {
  return join(xs, [](int x) { return std::to_string(x); });
}

}  // namespace

void write_metrics_csv(std::ostream& out, const MetricsLog& log) {
  out << kMetricsHeader << '\n';
  for (const auto& r : log.rounds) {
    out << fmt::format("{},{},{},{},{},{}\n", r.round, format_real(r.accuracy),
                       format_real(r.mean_loss), r.iterations, r.clients_trained,
                       format_real(r.train_ms));
  }
}

void write_splits_csv(std::ostream& out, const MetricsLog& log) {
  out << kSplitsHeader << '\n';
  for (const auto& it : log.iterations) {
    out << it.round << ',' << it.iteration << ',' << it.trained_ids.size() << ','
        << ints(it.trained_ids) << ',';
    if (it.split) {
      const auto& s = *it.split;
      out << ints(s.sorted_ids) << ','
          << join(s.sorted_magnitudes, [](double x) { return format_real(x); }) << ','
          << join(s.sorted_sizes, [](std::int64_t x) { return std::to_string(x); }) << ','
          << s.k_q1 << ',' << s.k_q3 << ',' << s.tau_split << ',' << format_real(s.var_intra)
          << ',' << format_real(s.var_inter) << ',';
    } else {
      out << ",,,,,,,,";
    }
    out << it.next_hard_size << ',' << (it.terminated ? 1 : 0) << ',' << format_real(it.split_ms)
        << '\n';
  }
}

}  // namespace fedsplit
