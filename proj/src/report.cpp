#include "p4r/report.hpp"

#include <cstdio>
#include <ostream>

#include <nlohmann/json.hpp>

namespace p4r {

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

void write_report_text(const MetricReport& report, const ReportContext& ctx, std::ostream& out) {
  out << "# split=" << ctx.split << " mode=" << ctx.mode << " users=" << report.n_users_evaluated << '\n';
  out << "metric\tk\tvalue\n";
  for (auto m : {Metric::kRecall, Metric::kNdcg, Metric::kMrr, Metric::kHit}) {
    for (auto k : report.ks) {
      out << metric_name(m) << '\t' << k << '\t' << format_fixed(report.get(m, k)) << '\n';
    }
  }
}

void write_report_jsonl(const MetricReport& report, const ReportContext& ctx, std::ostream& out) {
  for (auto m : {Metric::kRecall, Metric::kNdcg, Metric::kMrr, Metric::kHit}) {
    for (auto k : report.ks) {
      nlohmann::ordered_json row = {{"split", ctx.split},       {"mode", ctx.mode},
                                    {"metric", metric_name(m)}, {"k", k},
                                    {"value", report.get(m, k)}, {"n_users", report.n_users_evaluated}};
      out << row.dump() << '\n';
    }
  }
}

void write_history_jsonl(std::span<const EpochRecord> history, std::ostream& out) {
  for (const auto& rec : history) {
    nlohmann::ordered_json row = {{"epoch", rec.epoch}, {"train_loss", rec.train_loss}};
    row["val_metric"] = rec.val_metric ? nlohmann::ordered_json(*rec.val_metric) : nlohmann::ordered_json();
    row["seconds"] = rec.seconds;
    out << row.dump() << '\n';
  }
}

}  // namespace p4r
